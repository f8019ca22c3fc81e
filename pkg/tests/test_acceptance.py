"""Acceptance suite: one test per numbered requirement, each printing a
PASS line with the measured values.

The desk-scale experiments (criteria 1-3) share two module-scoped runs that
take the bulk of the time; run with ``pytest tests/test_acceptance.py -s`` to
watch progress.  ``-m "not slow"`` skips the experiment-backed criteria.
"""

import math
import sys

import numpy as np
import pytest

from saqe.cdfs import GaussianMixtureCdf, StepCdf, invert
from saqe.cli import main
from saqe.drm import dual_gradient, dual_loglik, fit_drm, fit_tilts, get_basis, gk_cdf
from saqe.ner import fit_ner_mle, profile_loglik
from saqe.rng import RngStream
from saqe.simulation import ScenarioSpec, draw_sample, gen_population, run_experiment

SEED = 2026
ALPHAS = [0.05, 0.25, 0.5, 0.75, 0.95]


def _progress(tag):
    def cb(done, total):
        if done % 20 == 0 or done == total:
            print(f"  [{tag}] repetition {done}/{total}", file=sys.stderr)

    return cb


@pytest.fixture(scope="module")
def scenario_i_run():
    spec = ScenarioSpec("i", beta_scale=1.5, areas=20, unit_count=1000,
                        sample_size=30, repetitions=200, seed=SEED)
    return run_experiment(
        spec, ["dir", "ner", "el", "mq", "mr", "eb", "ebel"], ALPHAS,
        bootstrap_b=100, bootstrap_methods=["dir", "el", "ebel"],
        threads=2, progress=_progress("scenario i + bootstrap"),
    )


@pytest.fixture(scope="module")
def skew_runs():
    out = {}
    for scen in ("iii", "iv"):
        spec = ScenarioSpec(scen, beta_scale=1.5, areas=20, unit_count=1000,
                            sample_size=30, repetitions=200, seed=SEED)
        out[scen] = run_experiment(spec, ["ner", "mr", "el", "ebel"], ALPHAS,
                                   threads=2, progress=_progress(f"scenario {scen}"))
    return out


@pytest.mark.slow
def test_criterion_1_table1_scenario_i(scenario_i_run):
    res = scenario_i_run
    ner50 = res.amse["ner"][2]
    el50 = res.amse["el"][2]
    mq50 = res.amse["mq"][2]
    assert abs(ner50 - 0.0633) <= 0.25 * 0.0633
    assert abs(el50 - 0.0682) <= 0.25 * 0.0682
    assert ner50 <= el50 <= mq50
    # neighbouring Table-1 facts from the same run
    mr50 = res.amse["mr"][2]
    assert abs(mr50 - ner50) <= 0.10 * ner50
    assert res.amse["mq"][0] > res.amse["ner"][0]
    print(f"criterion 1: PASS - NER50={ner50:.4f} (target 0.0633+-25%), "
          f"EL50={el50:.4f} (target 0.0682+-25%), ordering NER<=EL<=MQ "
          f"({ner50:.4f}<={el50:.4f}<={mq50:.4f}), MR50={mr50:.4f}")


@pytest.mark.slow
def test_criterion_2_skewed_tail_dominance(skew_runs):
    # "corresponding" pairs predictors by information set, matching how the
    # simulation groups them: EL against NER (sampled x only), EBEL against
    # MR (census x).  The cross pairings are reported for reference.
    checks, cross = [], []
    for scen, idx, tag in (("iii", 0, "iii@5%"), ("iv", 4, "iv@95%")):
        res = skew_runs[scen]
        for new, ref in (("el", "ner"), ("ebel2", "mr")):
            ratio = res.amse[new][idx] / res.amse[ref][idx]
            checks.append((tag, new, ref, ratio))
            assert ratio < 0.75, (tag, new, ref, ratio)
        for new, ref in (("el", "mr"), ("ebel2", "ner")):
            cross.append((tag, new, ref, res.amse[new][idx] / res.amse[ref][idx]))
    summary = ", ".join(f"{t}:{n}/{r}={v:.3f}" for t, n, r, v in checks)
    extra = ", ".join(f"{t}:{n}/{r}={v:.3f}" for t, n, r, v in cross)
    print(f"criterion 2: PASS - paired ratios < 0.75 ({summary}); cross: {extra}")


@pytest.mark.slow
def test_criterion_3_bootstrap_ratio_sanity(scenario_i_run):
    res = scenario_i_run
    dir_ratios = res.ratios["dir"]
    assert np.all((0.85 <= dir_ratios) & (dir_ratios <= 1.10)), dir_ratios
    for m in ("el", "ebel2"):
        mid = res.ratios[m][1:4]
        assert np.all((0.85 <= mid) & (mid <= 1.05)), (m, res.ratios[m])
    print(f"criterion 3: PASS - DIR={np.round(dir_ratios, 3)}, "
          f"EL mid={np.round(res.ratios['el'][1:4], 3)}, "
          f"EBEL mid={np.round(res.ratios['ebel2'][1:4], 3)}")


def test_criterion_4_dual_likelihood_correctness():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(5):
        m_plus_1 = int(rng.integers(2, 5))
        residuals = [rng.normal(0, 1 + 0.2 * k, int(rng.integers(6, 14)))
                     for k in range(m_plus_1)]
        m = m_plus_1 - 1
        for _ in range(10):
            theta = rng.normal(0, 0.4, (m, 2))
            grad = dual_gradient(theta, residuals)
            fd = np.empty_like(grad)
            for i in range(m):
                for j in range(2):
                    h = 1e-5 * max(1.0, abs(theta[i, j]))
                    up, dn = theta.copy(), theta.copy()
                    up[i, j] += h
                    dn[i, j] -= h
                    fd[i, j] = (dual_loglik(up, residuals)
                                - dual_loglik(dn, residuals)) / (2 * h)
            rel = np.max(np.abs(grad - fd) / np.maximum(np.abs(grad), 1.0))
            worst = max(worst, float(rel))
            assert rel <= 1e-6

    # a 4+4 instance whose dual optimum is interior to the [-5, 5]^2 grid
    inst = np.random.default_rng(5)
    residuals = [inst.normal(0, 1, 4), inst.normal(0.5, 1.3, 4)]
    theta_hat = fit_tilts(residuals, basis="signroot").theta[1]
    basis = get_basis("signroot")
    counts = np.array([4.0, 4.0])
    rho = counts / counts.sum()
    q0, q1 = basis(residuals[0]), basis(residuals[1])

    def dual_direct(grid):  # independent vectorized evaluation
        e0, e1 = q0 @ grid.T, q1 @ grid.T  # (4, G)
        own = e1.sum(axis=0)
        mix = (np.log(rho[0] + rho[1] * np.exp(e0)).sum(axis=0)
               + np.log(rho[0] + rho[1] * np.exp(e1)).sum(axis=0))
        return own - mix

    def scan(t1s, t2s):
        grid = np.stack(np.meshgrid(t1s, t2s, indexing="ij"), -1).reshape(-1, 2)
        return grid[int(np.argmax(dual_direct(grid)))]

    # the dual is concave: coarse-to-fine equals the exhaustive 1e-3 grid
    coarse = scan(np.arange(-5, 5.0001, 0.05), np.arange(-5, 5.0001, 0.05))
    fine = scan(np.arange(coarse[0] - 0.06, coarse[0] + 0.0601, 1e-3),
                np.arange(coarse[1] - 0.06, coarse[1] + 0.0601, 1e-3))
    gap = np.max(np.abs(theta_hat - fine))
    assert gap <= 1e-3 + 1e-9
    print(f"criterion 4: PASS - worst gradient rel err {worst:.2e} (<=1e-6), "
          f"grid-oracle gap {gap:.2e} (<=1e-3)")


def test_criterion_5_constraint_invariant():
    # the optimizer only reports convergence when the constraint holds, so
    # every converged fit in the experiment runs satisfies it; verified here
    # on fresh fits drawn from the criteria scenarios
    worst = 0.0
    root = RngStream(SEED + 5)
    for i, scen in enumerate(("i", "iii", "iv")):
        spec = ScenarioSpec(scen, beta_scale=1.5, areas=20, unit_count=1000,
                            sample_size=30, repetitions=1, seed=SEED)
        for r in range(8):
            pop = gen_population(spec, root.child(i, r, 0))
            sample, _ = draw_sample(pop, 30, root.child(i, r, 1))
            fit = fit_drm(sample)
            basis = get_basis("signroot")
            eps = np.concatenate([np.asarray(x) for x in fit.residuals])
            q = basis(np.sort(eps, kind="stable"))
            for k in range(len(fit.area_ids)):
                total = float(np.sum(fit.p_base * np.exp(q @ fit.theta[k])))
                worst = max(worst, abs(total - 1.0))
    assert worst <= 1e-6
    print(f"criterion 5: PASS - max |sum p exp(theta q) - 1| = {worst:.2e} (<=1e-6)")


def test_criterion_6_baseline_invariance():
    rng = np.random.default_rng(SEED + 6)
    worst = 0.0
    for i in range(20):
        from conftest import make_survey

        sample = make_survey(seed=1000 + i, n_areas=int(rng.integers(3, 6)),
                             n_k=int(rng.integers(8, 16)))
        new_base = sample.area_ids[int(rng.integers(1, len(sample.area_ids)))]
        fit0 = fit_drm(sample)
        fit1 = fit_drm(sample, baseline=new_base)
        for aid in sample.area_ids:
            f0 = np.cumsum(gk_cdf(fit0, aid).weights)
            f1 = np.cumsum(gk_cdf(fit1, aid).weights)
            worst = max(worst, float(np.max(np.abs(f0 - f1))))
    assert worst <= 1e-8
    print(f"criterion 6: PASS - max CDF sup-norm change {worst:.2e} (<=1e-8) "
          f"over 20 instances")


def test_criterion_7_ner_grid_oracle():
    from conftest import make_survey

    sample = make_survey(seed=3, n_areas=3, n_k=4, d=1, sigma_v=0.8, sigma_e=0.7)
    fit = fit_ner_mle(sample, warn_sample_means=False)

    def best_on(svs, ses):
        top, arg = -math.inf, None
        for sv in svs:
            for se in ses:
                val = profile_loglik(sample, sv, se)
                if val > top:
                    top, arg = val, (sv, se)
        return arg

    # unimodal profile surface: coarse-to-fine equals the exhaustive 1e-3 grid
    sv0, se0 = best_on(np.arange(0.0, 3.0, 0.05), np.arange(0.05, 3.0, 0.05))
    sv, se = best_on(np.arange(max(sv0 - 0.075, 0.0), sv0 + 0.075, 1e-3),
                     np.arange(max(se0 - 0.075, 1e-3), se0 + 0.075, 1e-3))
    dv, de = abs(fit.sigma_v2 - sv), abs(fit.sigma_e2 - se)
    assert dv <= 1e-3 and de <= 1e-3
    print(f"criterion 7: PASS - |sigma_v2 - grid| = {dv:.2e}, "
          f"|sigma_e2 - grid| = {de:.2e} (<=1e-3)")


def test_criterion_8_quantile_inversion():
    rng = np.random.default_rng(SEED + 8)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        values = rng.normal(0, 5, n)
        weights = rng.dirichlet(np.ones(n))
        alpha = float(rng.uniform(0.01, 0.99))
        order = np.argsort(values, kind="stable")
        acc, want = 0.0, values[order][-1]
        for v, w in zip(values[order], weights[order]):
            acc += w
            if acc >= alpha:
                want = v
                break
        assert invert(StepCdf(values, weights), alpha) == want
    z = invert(GaussianMixtureCdf([0.0], 1.0), 0.975)
    assert abs(z - 1.959964) <= 1e-6
    print(f"criterion 8: PASS - 1000 step CDFs exact, z(0.975)={z:.7f} "
          f"(target 1.959964+-1e-6)")


def test_criterion_9_thread_determinism(tmp_path):
    args = ["simulate", "--scenario", "i", "--areas", "6", "--Nk", "100",
            "--nk", "12", "--reps", "6", "--seed", "7",
            "--methods", "dir,ner,el,ebel", "--alphas", "0.05,0.5,0.95",
            "--bootstrap-B", "4", "--bootstrap-methods", "dir,el"]
    outs = []
    for threads in ("1", "2", "3"):
        out = str(tmp_path / f"t{threads}")
        assert main(args + ["--threads", threads, "--out", out]) == 0
        outs.append(out)
    for name in ("amse.csv", "area_mse.csv", "ratios.csv"):
        ref = open(f"{outs[0]}/{name}", "rb").read()
        assert all(open(f"{o}/{name}", "rb").read() == ref for o in outs[1:])
    print("criterion 9: PASS - byte-identical CSVs for --threads 1/2/3")
