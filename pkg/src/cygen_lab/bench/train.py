"""Training schedules for the four methods."""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..losses import LossWeights, ObjectiveProgram, make_batch
from ..models import FlowConditional, GaussianConditional, load_params, save_params
from .config import RunConfig, write_config_toml
from .datasets import generate
from .optim import Adam


def build_models(cfg: RunConfig) -> tuple[GaussianConditional, FlowConditional]:
    p = GaussianConditional(d_x=2, d_z=cfg.d_z, hidden=tuple(cfg.dec_hidden), sigma2=cfg.sigma2)
    q = FlowConditional(
        d_x=2, d_z=cfg.d_z, hidden=tuple(cfg.enc_hidden), n_flows=cfg.n_flows, n_householder=cfg.n_householder
    )
    return p, q


def seeds(cfg: RunConfig) -> dict[str, np.random.Generator]:
    """Independent streams derived from the run seed."""
    names = ("train_data", "test_data", "init", "train", "monitor", "eval")
    kids = np.random.SeedSequence(cfg.seed).spawn(len(names))
    return {n: np.random.default_rng(k) for n, k in zip(names, kids)}


def datasets(cfg: RunConfig):
    """(train points, train labels, test points, test labels) as rows."""
    rs = seeds(cfg)
    s_train = int(rs["train_data"].integers(2**31))
    s_test = int(rs["test_data"].integers(2**31))
    xtr, ytr = generate(cfg.dataset, cfg.n_train, s_train)
    xte, yte = generate(cfg.dataset, max(cfg.n_test, 1), s_test)
    return xtr, ytr, xte, yte


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    diverged: bool = False
    steps: int = 0
    pretrain_steps: int = 0

    def metrics_dict(self, cfg: RunConfig) -> dict:
        return {
            "config": cfg.to_dict(),
            "diverged": self.diverged,
            "steps": self.steps,
            "pretrain_steps": self.pretrain_steps,
            "history": self.history,
        }


class _Monitor:
    """Compat and nll terms on a fixed sub-batch with frozen seeds and probes."""

    def __init__(self, p, q, cfg: RunConfig, x_rows: np.ndarray, rng):
        n = min(cfg.n_monitor, len(x_rows))
        self.enabled = n > 0
        if not self.enabled:
            return
        x = x_rows[:n].T.copy()
        self.batch = make_batch(rng, x, cfg.d_z, cfg.k_mc, cfg.probe_kind)
        self.prog = ObjectiveProgram(p, q, "cygen", n, cfg.k_mc, with_grads=False, dtype=np.float64)

    def __call__(self, params) -> dict[str, float]:
        if not self.enabled:
            return {}
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                terms, _ = self.prog.run(params, self.batch)
        except np.linalg.LinAlgError:
            return {"compat": float("nan"), "nll": float("nan")}
        return {"compat": terms["compat"], "nll": terms["nll"]}


def _finite(params) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.values())


def _run_phase(
    phase: str,
    kind: str,
    p,
    q,
    params: dict,
    cfg: RunConfig,
    x_train: np.ndarray,
    n_epochs: int,
    lr: float,
    lr_scale,
    rng: np.random.Generator,
    monitor: _Monitor,
    result: TrainResult,
    weights: LossWeights,
    log=None,
) -> bool:
    """Run ``n_epochs`` of one objective; returns False on divergence."""
    if n_epochs == 0:
        return True
    bs = cfg.batch_size
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    prog = ObjectiveProgram(p, q, kind, bs, cfg.k_mc, weights, n_compat=cfg.n_compat, dtype=dtype)
    opt = Adam(params, lr=lr, weight_decay=cfg.weight_decay, lr_scale=lr_scale)
    window = []
    steps_per_epoch = cfg.steps_per_epoch
    for _ in range(n_epochs):
        order = rng.permutation(len(x_train))
        for b in range(steps_per_epoch):
            idx = order[b * bs : (b + 1) * bs]
            batch = make_batch(rng, x_train[idx].T, cfg.d_z, cfg.k_mc, cfg.probe_kind, n_compat=cfg.n_compat)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    terms, grads = prog.run(params, batch)
            except np.linalg.LinAlgError:
                terms, grads = {"total": float("nan")}, {}
            if not (np.isfinite(terms["total"]) and _finite(grads)):
                result.diverged = True
                result.history.append({"step": result.steps, "phase": phase, "loss": float("nan"), **monitor(params)})
                return False
            opt.step(params, grads)
            result.steps += 1
            window.append(terms["total"])
            if result.steps % cfg.log_every == 0:
                row = {"step": result.steps, "phase": phase, "loss": float(np.mean(window)), **monitor(params)}
                result.history.append(row)
                window = []
                if log:
                    log(row)
            if not _finite(params):
                result.diverged = True
                return False
    return True


def train(cfg: RunConfig, log=None) -> TrainResult:
    """Train per ``cfg.method``; never raises on divergence, flags it instead."""
    p, q = build_models(cfg)
    rs = seeds(cfg)
    xtr, _, _, _ = datasets(cfg)
    params = {**p.init_params(rs["init"]), **q.init_params(rs["init"])}
    monitor = _Monitor(p, q, cfg, xtr, rs["monitor"])
    result = TrainResult(params=params)
    rng = rs["train"]
    base = LossWeights(w_compat=cfg.w_compat, w_nll=cfg.w_nll, beta=cfg.beta)
    decoder_scale = 1.0
    if cfg.uses_pretraining:
        if cfg.pretrained:
            params.update(load_params(cfg.pretrained))
            result.history.append({"step": 0, "phase": "pretrain", "loss": float("nan"), **monitor(params)})
        else:
            ok = _run_phase(
                "pretrain", "elbo", p, q, params, cfg, xtr, cfg.pretrain_epochs, cfg.pretrain_lr, None,
                rng, monitor, result, LossWeights(beta=1.0), log,
            )
            if not ok:
                return result
        result.pretrain_steps = result.steps
        decoder_scale = cfg.decoder_lr_factor
    else:
        result.history.append({"step": 0, "phase": "init", "loss": float("nan"), **monitor(params)})
    kind = {"cygen": "cygen", "cygen_pt": "cygen", "dae": "dae", "vae": "elbo"}[cfg.method]

    def lr_scale(name: str) -> float:
        return decoder_scale if name.startswith(p.prefix) else 1.0

    _run_phase(
        "main", kind, p, q, params, cfg, xtr, cfg.epochs, cfg.learning_rate, lr_scale,
        rng, monitor, result, base, log,
    )
    return result


def pretrain_only(cfg: RunConfig, log=None) -> TrainResult:
    """The ELBO pretraining phase alone, for sharing across methods."""
    return train(cfg.replace(method="vae", epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr, beta=1.0), log=log)


def run_training(cfg: RunConfig, out_dir=None, log=None) -> TrainResult:
    """Train and write checkpoint.json, train_metrics.json and config.toml."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train(cfg, log=log)
    save_params(out / "checkpoint.json", result.params)
    (out / "train_metrics.json").write_text(json.dumps(result.metrics_dict(cfg), indent=1, sort_keys=True))
    write_config_toml(out / "config.toml", cfg)
    print(f"trained {result.steps} steps in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return result
