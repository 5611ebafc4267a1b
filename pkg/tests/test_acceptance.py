"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line to the terminal (capture disabled)
before asserting, so ``pytest -v`` output doubles as the acceptance report.
The pinwheel and ablation runs share one pretraining checkpoint and take
tens of minutes on one CPU core.
"""

import time

import numpy as np
import pytest

from cygen_lab.autodiff import hutchinson_cross_norm, sample_probes
from cygen_lab.bench.config import RunConfig
from cygen_lab.bench.evaluate import evaluate_params
from cygen_lab.bench.train import pretrain_only, train
from cygen_lab.finite import analyze, conditional_tv, gibbs_stationary_oracle, lp_compatibility
from cygen_lab.finite.fixtures import conditionals, perturb, random_pair
from cygen_lab.losses import LossBatch, compat_loss_exact, compat_loss_hutchinson, evaluate, make_batch, nll_estimate
from cygen_lab.models import save_params
from cygen_lab.samplers import SgldConfig, gibbs_chain, occupancy, sgld_x, sgld_z
from helpers import (
    affine_compat_descent,
    affine_pair,
    bernoulli_pair,
    fd_logq_grads,
    flow_identity_grads,
    rel_err,
    small_flow,
)

J33 = np.array([[0.10, 0.05, 0.15], [0.20, 0.10, 0.05], [0.05, 0.25, 0.05]])

# desk-scale pinwheel budget: 2000 pretraining steps then 8000 main steps
PINWHEEL = RunConfig(dataset="pinwheel", pretrain_epochs=200, epochs=800, seed=0, log_every=100)


@pytest.fixture
def report(capsys, request):
    def emit(ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def pinwheel_runs(tmp_path_factory):
    """Shared pretraining, then cygen_pt, dae and the w_compat=0 ablation from the same checkpoint."""
    out = tmp_path_factory.mktemp("pinwheel")
    t0 = time.perf_counter()
    pre = pretrain_only(PINWHEEL)
    ckpt = out / "pretrained.json"
    save_params(ckpt, pre.params)
    runs = {"pretrain_seconds": time.perf_counter() - t0, "pretrain_steps": pre.steps}
    for tag, cfg in [
        ("cygen_pt", PINWHEEL.replace(method="cygen_pt")),
        ("dae", PINWHEEL.replace(method="dae")),
        ("ablation", PINWHEEL.replace(method="cygen_pt", w_compat=0.0)),
    ]:
        t = time.perf_counter()
        cfg = cfg.replace(pretrained=str(ckpt))
        res = train(cfg)
        metrics = evaluate_params(res.params, cfg, out / tag) if tag != "ablation" else None
        runs[tag] = (res, metrics, time.perf_counter() - t)
    return runs


class TestAcceptance:
    def test_discrete_theory_vs_lp(self, report):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        agree, n_det, worst = 0, 0, 0.0
        for i in range(200):
            p, q, joint = random_pair(rng, max_size=8, compatible=i % 2 == 0)
            r = analyze(p, q)
            agree += r.compatible == lp_compatibility(p, q).compatible
            if i % 2 == 0 and r.globally_determinate:
                n_det += 1
                worst = max(worst, float(np.max(np.abs(r.joints[0].table - joint))))
        secs = time.perf_counter() - t0
        ok = agree == 200 and worst < 1e-9 and secs < 30
        report(ok, f"agree {agree}/200, {n_det} determinate joints max err {worst:.2e}, {secs:.1f}s")

    def test_hutchinson_unbiased(self, report):
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        probes = sample_probes(np.random.default_rng(7), 100_000, 2, "gaussian")
        est = hutchinson_cross_norm(lambda g, X, Z: g.sum(X * g.matvec(g.const(M), Z), axis=0), [0.1, 0.2], [0.3, 0.4], probes)
        few = probes[:50]
        fact = [
            hutchinson_cross_norm(lambda g, X, Z: g.sum(g.tanh(X) * X, axis=0) + g.sum(g.exp(Z), axis=0), [0.4, -0.2], [1.0, 0.5], few),
            hutchinson_cross_norm(lambda g, X, Z: g.sum(X * X, axis=0) * 3.0 - g.sum(Z * Z * Z, axis=0), [1.5, 0.0], [0.2, -2.0], few),
        ]
        # model pair with a z-free decoder and an x-free encoder
        p, q, params = small_flow(3, n_flows=2)
        params["dec.W0"] = np.zeros_like(params["dec.W0"])
        params["enc.nn.W0"] = np.zeros_like(params["enc.nn.W0"])
        rng = np.random.default_rng(8)
        fact.append(evaluate(compat_loss_hutchinson, p, q, params, make_batch(rng, rng.normal(size=(2, 20)), 2)))
        ok = abs(est / 30.0 - 1.0) < 0.01 and all(v == 0.0 for v in fact)
        report(ok, f"bilinear estimate {est:.4f} vs 30, factorized {fact}")

    def test_flow_gradient_identities(self, report):
        worst = 0.0
        for i in range(50):
            p, q, params = small_flow(100 + i, n_flows=1 + i % 3, scale=1.5)
            rng = np.random.default_rng(200 + i)
            e, x = rng.normal(size=(2, 1)), rng.normal(size=(2, 1))
            z, gz, gx = flow_identity_grads(q, params, e, x)
            fz, fx = fd_logq_grads(q, params, z[:, 0], x[:, 0], e[:, 0])
            worst = max(worst, rel_err(gz[:, 0], fz), rel_err(gx[:, 0], fx))
        report(worst < 1e-4, f"max relative error over 50 flows {worst:.2e}")

    def test_likelihood_estimator(self, report):
        # weak coupling keeps the reciprocal-likelihood weights at finite variance
        pair = affine_pair(0, s2=1.0, dims=(0.5, 0.3))
        rng = np.random.default_rng(1)
        x = rng.multivariate_normal(pair.c, pair.marginal_cov, size=20).T
        est = -nll_estimate(pair.p, pair.q, pair.params, x, rng, k_mc=1024)
        exact = pair.marginal_logpdf(x)
        rel = np.abs(est - exact) / np.abs(exact)
        report(bool(np.all(rel < 0.02)), f"max relative error {rel.max():.4f} over 20 points, mean {rel.mean():.4f}")

    def test_gaussian_vae_affinity(self, report):
        pair, params, val = affine_compat_descent(40)
        rel = pair.s2 * params["enc.mu.W"].T / pair.post_var[None, :]
        dev = float(np.max(np.abs(params["dec.W0"] - rel)))
        p, q, bparams, rng = bernoulli_pair(5)
        x, z = rng.normal(size=(3, 8)), rng.normal(size=(2, 8))
        tied = evaluate(compat_loss_exact, p, q, bparams, LossBatch(x=x, z=z))
        diff = bparams["dec.W"] - bparams["enc.W"].T
        tied_err = abs(tied - np.sum(diff * diff)) / np.sum(diff * diff)
        ok = val < 1e-8 and dev < 1e-4 and tied_err < 1e-12
        report(ok, f"loss {val:.2e}, relation max dev {dev:.2e}, tied-weights rel err {tied_err:.1e}")

    def test_sgld_moment_recovery(self, report):
        # step 0.06: the default 3e-4 moves a chain only ~0.25 in 100 steps
        pair = affine_pair(11, dims=(1.0, 0.8))
        cfg = SgldConfig(eps=0.06, n_steps=100)
        t0 = time.perf_counter()
        xs = sgld_x(pair.p, pair.q, pair.params, np.zeros((2, 10_000)), cfg, np.random.default_rng(12)).final
        zs = sgld_z(pair.p, pair.q, pair.params, np.full((2, 10_000), 2.0), cfg, np.random.default_rng(13)).final
        secs = time.perf_counter() - t0
        mx = float(np.max(np.abs(xs.mean(axis=1) - pair.c)))
        cx = float(np.linalg.norm(np.cov(xs) - pair.marginal_cov) / np.linalg.norm(pair.marginal_cov))
        mz = float(np.max(np.abs(zs.mean(axis=1))))
        cz = float(np.linalg.norm(np.cov(zs) - np.eye(2)) / np.sqrt(2))
        ok = mx < 0.05 and cx < 0.1 and mz < 0.05 and cz < 0.1 and secs < 120
        report(ok, f"x: mean err {mx:.3f}, cov rel err {cx:.3f}; z: mean err {mz:.3f}, cov rel err {cz:.3f}; {secs:.1f}s")

    def test_pinwheel_reproduction(self, report, pinwheel_runs):
        res, m, secs = pinwheel_runs["cygen_pt"]
        dres, dm, dsecs = pinwheel_runs["dae"]
        total = pinwheel_runs["pretrain_seconds"] + secs + dsecs
        steps = pinwheel_runs["pretrain_steps"] + res.steps
        cy_ok = m["mode_coverage"] == 1.0 and m["spill_fraction"] < 0.10 and m["latent_separation"] > 1.5
        dae_ok = dm["latent_separation"] is not None and dm["latent_separation"] < 1.0 and dm["mode_coverage"] <= 0.4
        ok = cy_ok and dae_ok and 10_000 <= steps <= 30_000 and total <= 1800 and not res.diverged
        report(
            ok,
            f"cygen_pt coverage {m['mode_coverage']:.2f} spill {m['spill_fraction']:.4f} "
            f"separation {m['latent_separation']:.2f} [{'ok' if cy_ok else 'miss'}]; "
            f"dae coverage {dm['mode_coverage']:.2f} separation {dm['latent_separation']:.2f} "
            f"[{'ok' if dae_ok else 'miss'}]; {steps} steps, {total:.0f}s",
        )

    def test_ablation(self, report, pinwheel_runs):
        full = pinwheel_runs["cygen_pt"][0].history
        abl, _, _ = pinwheel_runs["ablation"]
        start = [r["compat"] for r in abl.history if r["phase"] == "pretrain"][-1]
        abl_main = [r["compat"] for r in abl.history if r["phase"] == "main"]
        full_main = np.array([r["compat"] for r in full if r["phase"] == "main"])
        abl_ok = abl.diverged or abl_main[-1] >= 10 * start
        # the trend is judged on the logged main-phase series; noise is the spread of step-to-step changes
        noise = float(np.std(np.diff(full_main)))
        slope = float(np.polyfit(np.arange(len(full_main)), full_main, 1)[0]) * (len(full_main) - 1)
        full_ok = slope <= 2 * noise and full_main[-1] <= full_main[0] + 2 * noise
        report(
            abl_ok and full_ok,
            f"pretrain-end compat {start:.3g}; w_compat=0 final {abl_main[-1]:.3g} "
            f"(diverged={abl.diverged}); full objective first {full_main[0]:.3g} last {full_main[-1]:.3g} "
            f"fitted change {slope:.3g} vs 2x noise {2 * noise:.3g}",
        )

    def test_gibbs_vs_oracle(self, report):
        p, q = conditionals(J33)
        xs, zs = gibbs_chain(p, q, 0, 1_000_000, np.random.default_rng(30))
        occ = occupancy(xs, zs, 3, 3)
        target = gibbs_stationary_oracle(p, q, np.array([1.0, 0.0, 0.0])).table
        tv = 0.5 * float(np.abs(occ - target).sum())
        q2 = perturb(q, np.random.default_rng(3), size=0.3)
        xs2, zs2 = gibbs_chain(p, q2, 0, 1_000_000, np.random.default_rng(31))
        tv_bad = conditional_tv(occupancy(xs2, zs2, 3, 3), q2)
        ok = tv < 0.01 and tv_bad > 0.05 and not analyze(p, q2).compatible
        report(ok, f"compatible TV to oracle {tv:.4f}; incompatible TV(chain z|x, q) {tv_bad:.3f}")
