"""Evaluation of a trained checkpoint: generation, latent structure, likelihood."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..losses import compat_loss_simplified, evaluate as eval_loss, make_batch, nll_estimate
from ..models import load_params
from ..samplers import SamplerDivergenceError, SgldConfig, ancestral, gibbs_chain, sgld_x, sgld_z
from .config import RunConfig
from .metrics import (
    cluster_geometry,
    generation_metrics,
    histogram2d,
    separation_ratio,
    validate_metrics,
    write_hist_csv,
    write_latent_csv,
)
from .train import build_models, datasets, seeds

N_POSTERIOR = 64
N_COMPAT_EVAL = 500
GIBBS_STEPS = 100


def posterior_means(q, params, x_rows: np.ndarray, rng, n: int = N_POSTERIOR) -> np.ndarray:
    """MC mean of q(z|x) per row of ``x_rows``; returns rows (m, d_z)."""
    x = x_rows.T
    e = rng.standard_normal((q.d_z, n, x.shape[1]))
    z = q.forward(params, e, x).z
    return z.mean(axis=1).T


def _init_noise(rng, shape, clamp: bool) -> np.ndarray:
    e = rng.standard_normal(shape)
    # clamping the initial seeds is a switch carried over from image-scale runs
    return np.clip(e, -0.1, 0.1) if clamp else e


def generate_samples(p, q, params, cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """Samples as columns (2, n) from the configured sampler."""
    n = cfg.n_samples
    name = cfg.sampler_name
    sg = SgldConfig(eps=cfg.sgld_eps, n_steps=cfg.sgld_steps, noise_scale=cfg.sgld_noise)
    z0 = _init_noise(rng, (p.d_z, n), cfg.clamp_seed)
    if name == "ancestral":
        x, _ = ancestral(p, params, n, rng)
        return x
    if name == "sgld_z":
        traj = sgld_z(p, q, params, z0, sg, rng)
        return p.sample(params, traj.final, rng)
    if name == "sgld_x":
        x0 = p.sample(params, z0, rng)
        return sgld_x(p, q, params, x0, sg, rng).final
    if name == "gibbs":
        x0 = p.sample(params, z0, rng)
        xs, _ = gibbs_chain(p, q, x0, GIBBS_STEPS, rng, params=params)
        return xs[-1]
    raise ValueError(f"unknown sampler {name!r}")


def evaluate_params(params: dict, cfg: RunConfig, out_dir=None) -> dict:
    """Compute metrics; when ``out_dir`` is given also write hist2d.csv,
    latent_scatter.csv and metrics.json there."""
    p, q = build_models(cfg)
    rng = seeds(cfg)["eval"]
    xtr, ytr, xte, yte = datasets(cfg)
    cents, rms = cluster_geometry(xtr, ytr)
    divergence = None
    try:
        samples = generate_samples(p, q, params, cfg, rng).T
    except SamplerDivergenceError as exc:
        divergence = str(exc)
        samples = np.zeros((0, 2))
    with np.errstate(all="ignore"):
        gen = generation_metrics(samples, cents, rms) if len(samples) else {
            "mode_coverage": 0.0,
            "cluster_fractions": [0.0] * len(cents),
            "within_cluster_rms": [None] * len(cents),
            "spill_fraction": 1.0,
        }
        codes = posterior_means(q, params, xte, rng)
        sep = separation_ratio(codes, yte) if np.all(np.isfinite(codes)) else None
        nll = float(np.mean(nll_estimate(p, q, params, xte.T, rng, cfg.k_mc_eval)))
        m = min(N_COMPAT_EVAL, len(xte))
        cb = make_batch(rng, xte[:m].T, q.d_z, 1, cfg.probe_kind)
        compat = eval_loss(compat_loss_simplified, p, q, params, cb)
    lim = float(np.ceil(1.2 * np.max(np.abs(xtr))))
    counts, edges = histogram2d(samples, lim)
    doc = {
        "method": cfg.method,
        "dataset": cfg.dataset,
        "sampler": cfg.sampler_name,
        "n_samples": cfg.n_samples,
        "diverged": divergence is not None,
        "divergence": divergence,
        **gen,
        "latent_separation": _clean(sep),
        "nll_test": _clean(nll),
        "compat_test": _clean(compat),
        "hist_total": int(counts.sum()),
    }
    validate_metrics(doc)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_hist_csv(out / "hist2d.csv", counts, edges)
        write_latent_csv(out / "latent_scatter.csv", codes, yte, xte)
        (out / "metrics.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc


def _clean(v):
    return None if v is None or not np.isfinite(v) else float(v)


def evaluate_checkpoint(checkpoint, cfg: RunConfig, out_dir=None) -> dict:
    path = Path(checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return evaluate_params(load_params(path), cfg, out_dir)
