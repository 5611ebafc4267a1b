"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import SAMPLERS, ConfigError, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("method", "dataset", "out_dir", "seed", "sampler"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _config(args):
    return load_config(args.config, _overrides(args))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cygen-lab", description="Cyclic conditional generative modelling lab.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a labelled synthetic dataset as CSV")
    g.add_argument("--dataset", default="pinwheel")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)

    def run_args(sp, checkpoint: bool):
        sp.add_argument("--config", help="TOML file with RunConfig keys")
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--method")
        sp.add_argument("--dataset")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    run_args(sub.add_parser("train", help="train a method and write checkpoint and metrics"), False)
    run_args(sub.add_parser("eval", help="evaluate a checkpoint"), True)
    s = sub.add_parser("sample", help="run a sampler from a checkpoint and write its trajectory")
    run_args(s, True)
    s.add_argument("--sampler", choices=SAMPLERS)
    s.add_argument("--chains", type=int, default=100)
    s.add_argument("--out", required=True)

    a = sub.add_parser("analyze-discrete", help="compatibility report for finite conditionals")
    a.add_argument("p_csv", help="p(x|z) table, rows x, columns z")
    a.add_argument("q_csv", help="q(z|x) table, rows x, columns z")
    a.add_argument("--out", help="write the JSON report here instead of standard output")
    return ap


def _cmd_gen_data(args) -> int:
    from .datasets import generate, write_points_csv

    try:
        pts, labels = generate(args.dataset, args.n, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_points_csv(args.out, pts, labels)
    return 0


def _cmd_train(args) -> int:
    from .train import run_training

    cfg = _config(args)
    res = run_training(cfg, log=lambda row: print(json.dumps(row), file=sys.stderr))
    if res.diverged:
        print("warning: training diverged; partial artifacts written", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate_checkpoint

    cfg = _config(args)
    doc = evaluate_checkpoint(args.checkpoint, cfg, cfg.out_dir)
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0


def _cmd_sample(args) -> int:
    from ..models import load_params
    from ..samplers import SgldConfig, ancestral, gibbs_chain, sgld_x, sgld_z, write_trajectory_csv
    from .train import build_models, seeds

    cfg = _config(args).replace(n_samples=args.chains)
    path = Path(args.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params = load_params(path)
    p, q = build_models(cfg)
    rng = seeds(cfg)["eval"]
    sg = SgldConfig(eps=cfg.sgld_eps, n_steps=cfg.sgld_steps, noise_scale=cfg.sgld_noise)
    z0 = rng.standard_normal((p.d_z, args.chains))
    name = cfg.sampler_name
    if name == "sgld_z":
        tr = sgld_z(p, q, params, z0, sg, rng)
        write_trajectory_csv(args.out, tr.states, tr.partners, names=("z", "x"))
    elif name == "sgld_x":
        tr = sgld_x(p, q, params, p.sample(params, z0, rng), sg, rng)
        write_trajectory_csv(args.out, tr.states, tr.partners, names=("x", "z"))
    elif name == "gibbs":
        xs, zs = gibbs_chain(p, q, p.sample(params, z0, rng), cfg.sgld_steps, rng, params=params)
        write_trajectory_csv(args.out, xs, zs, names=("x", "z"))
    else:
        x, z = ancestral(p, params, args.chains, rng)
        write_trajectory_csv(args.out, x[None], z[None], names=("x", "z"))
    return 0


def _cmd_analyze(args) -> int:
    from ..finite import analyze, read_p, read_q, report_to_json

    p = read_p(args.p_csv)
    q = read_q(args.q_csv)
    text = report_to_json(analyze(p, q))
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sample": _cmd_sample,
    "analyze-discrete": _cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
