"""Command-line front end: ``bbgp train | eval | validate-bounds | synth``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure (including failed property checks). Data goes to stdout, diagnostics
to stderr. ``BBGP_THREADS`` sets how many seeds run in parallel.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import DataError, NumericalError
from .kernel import Hyperparameters, exact_lml
from .objective import BBGPConfig, estimate_lml
from .training import fit, predict_mean, rmse
from .validation import run_all

log = logging.getLogger("bbgp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SYNTH_TRUTH = {"lengthscale": 0.25, "signal_variance": 1.0, "noise_variance": 0.1}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    target: str = "-1"
    header: bool = True
    synth: tuple | None = None
    synth_seed: int = 0
    epsilon: float = 1.0
    probes: int = 1
    max_iters: int | None = None
    precond_rank: int = 100
    steps: int = 500
    lr: float = 0.1
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str = "runs"
    eval_every: int = 10

    def validate(self):
        if self.command == "train" and (self.data is None) == (self.synth is None):
            raise ConfigError("give exactly one of --data or --synth")
        if self.command == "eval" and self.data is not None and self.synth is not None:
            raise ConfigError("give at most one of --data or --synth")
        if self.command == "synth" and self.synth is None:
            raise ConfigError("synth needs --synth n,D")
        if not self.epsilon > 0:
            raise ConfigError("--epsilon must be positive")
        if self.probes < 1 or self.precond_rank < 0 or self.steps < 0 or self.eval_every < 1:
            raise ConfigError("--probes >= 1, --precond-rank >= 0, --steps >= 0, --eval-every >= 1 required")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("--max-iters must be >= 1")
        if not self.lr > 0:
            raise ConfigError("--lr must be positive")
        if not self.seeds:
            raise ConfigError("--seeds must list at least one seed")
        return self

    def fingerprint(self):
        payload = {k: v for k, v in asdict(self).items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def bbgp(self, seed):
        return BBGPConfig(epsilon=self.epsilon, probes=self.probes, max_krylov_iters=self.max_iters,
                          precond_rank=self.precond_rank, seed=seed)


def _parse_synth(text):
    try:
        n, d = (int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"--synth expects n,D (got {text!r})") from None
    if n < 3 or d < 1:
        raise ConfigError("--synth needs n >= 3 and D >= 1")
    return (n, d)


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects a comma-separated integer list (got {text!r})") from None


def load_dataset(cfg, seed):
    """Build the split and normalized dataset for one seed."""
    if cfg.synth is not None:
        n, d = cfg.synth
        truth = Hyperparameters(np.full(d, SYNTH_TRUTH["lengthscale"]), SYNTH_TRUTH["signal_variance"],
                                SYNTH_TRUTH["noise_variance"])
        ds = data_mod.synth_gp(n, d, truth, seed=cfg.synth_seed)
    else:
        ds = data_mod.load_csv(cfg.data, cfg.target, header=cfg.header)
    return data_mod.normalize(data_mod.split(ds, seed))


def _test_rmse(ds, hp):
    Xtr, ytr = ds.train()
    Xte, yte = ds.test()
    pred = predict_mean(Xtr, ytr, Xte, hp)
    return rmse(ds.denormalize_y(pred), ds.denormalize_y(yte))


def write_params(path, hp, cfg, seed):
    lines = ["# bbgp hyperparameters (constrained values, normalized data units)", f"seed = {seed}"]
    if cfg.synth is not None:
        lines += [f"synth = {cfg.synth[0]},{cfg.synth[1]}", f"synth_seed = {cfg.synth_seed}"]
    else:
        lines += [f"data = {Path(cfg.data).resolve()}", f"target = {cfg.target}", f"header = {int(cfg.header)}"]
    lines += [f"lengthscale.{j} = {float(v)!r}" for j, v in enumerate(hp.lengthscales)]
    lines += [f"signal_variance = {hp.signal_variance!r}", f"noise_variance = {hp.noise_variance!r}",
              f"mean = {hp.mean!r}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path):
    """Parse a parameter file into ``(Hyperparameters, metadata dict)``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such parameter file: {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        entries[key.strip()] = value.strip()
    try:
        ell = [float(entries[f"lengthscale.{j}"]) for j in range(sum(k.startswith("lengthscale.") for k in entries))]
        hp = Hyperparameters(ell, float(entries["signal_variance"]), float(entries["noise_variance"]),
                             float(entries["mean"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed parameter file ({exc})") from None
    return hp, entries


def train_seed(cfg, seed):
    """Fit one seed, write its trace and parameter files, return summary numbers."""
    ds = load_dataset(cfg, seed)
    Xtr, ytr = ds.train()
    fp = cfg.fingerprint()
    hp, trace = fit(Xtr, ytr, cfg.bbgp(seed), steps=cfg.steps, lr=cfg.lr,
                    eval_hook=lambda h: _test_rmse(ds, h), eval_every=cfg.eval_every)
    out = Path(cfg.out)
    with (out / f"trace_seed{seed}.jsonl").open("w") as fh:
        for rec in trace:
            row = {
                "step": rec.step,
                "objective": rec.objective,
                "bias_bound": rec.bias_bound,
                "iters": rec.iters,
                "lanczos_t": rec.lanczos_t,
                "hp": rec.hp.as_dict(),
                "wall_ms": rec.wall_ms,
                "config_fp": fp,
                "seed": seed,
                "diagnostics": {"converged": rec.converged, "cg_iters": rec.cg_iters},
            }
            if rec.rmse is not None:
                row["rmse"] = rec.rmse
            fh.write(json.dumps(row) + "\n")
    write_params(out / f"params_seed{seed}.txt", hp, cfg, seed)
    final_rmse = _test_rmse(ds, hp)
    return {
        "seed": seed,
        "rmse": final_rmse,
        "objective": trace.records[-1].objective if len(trace) else None,
        "total_iters": trace.total_iterations,
    }


def _quantiles(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    q25, q50, q75 = np.quantile(values, [0.25, 0.5, 0.75])
    return {"q25": float(q25), "median": float(q50), "q75": float(q75)}


def cmd_train(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    # fail early on unreadable data before spawning workers
    load_dataset(cfg, cfg.seeds[0])
    workers = max(1, int(os.environ.get("BBGP_THREADS", "1")))
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cfg.seeds))) as pool:
            results = list(pool.map(train_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [train_seed(cfg, s) for s in cfg.seeds]
    summary = {
        "config_fp": cfg.fingerprint(),
        "config": asdict(cfg),
        "seeds": results,
        "rmse": _quantiles([r["rmse"] for r in results]),
        "objective": _quantiles([r["objective"] for r in results]),
        "total_iters": _quantiles([r["total_iters"] for r in results]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=list) + "\n")
    print(json.dumps(summary, default=list))
    return EXIT_OK


def cmd_eval(cfg, params_path):
    hp, meta = read_params(params_path)
    if cfg.data is None and cfg.synth is None:
        if "synth" in meta:
            cfg.synth = _parse_synth(meta["synth"])
            cfg.synth_seed = int(meta.get("synth_seed", 0))
        elif "data" in meta:
            cfg.data = meta["data"]
            cfg.target = meta.get("target", cfg.target)
            cfg.header = bool(int(meta.get("header", 1)))
        else:
            raise ConfigError("parameter file names no dataset; pass --data or --synth")
    seed = int(meta.get("seed", cfg.seeds[0]))
    ds = load_dataset(cfg, seed)
    if hp.dim != ds.dim:
        raise ConfigError(f"parameter file has {hp.dim} lengthscales but data has {ds.dim} inputs")
    Xtr, ytr = ds.train()
    result = {"seed": seed, "n_train": len(ytr), "n_test": len(ds.test_idx), "rmse": _test_rmse(ds, hp)}
    if len(ytr) <= 4096:
        result.update(lml=exact_lml(Xtr, ytr, hp), lml_kind="exact")
    else:
        est = estimate_lml(Xtr, ytr, hp, cfg.bbgp(seed), with_gradient=False)
        result.update(lml=est.value, lml_kind="bbgp-lower-bound", bias_bound=est.bias_bound)
    print(json.dumps(result))
    return EXIT_OK


def cmd_validate_bounds(cfg, seed=0, scale=1.0, inject=None):
    report = run_all(seed=seed, scale=scale, flip_radau=(inject == "radau-side"))
    ok = True
    for name, (passed, total) in report.items():
        status = "PASS" if passed == total else "FAIL"
        ok &= passed == total
        print(json.dumps({"check": name, "passed": passed, "total": total, "status": status}))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_synth(cfg, path, lengthscale, noise):
    n, d = cfg.synth
    truth = Hyperparameters(np.full(d, lengthscale), SYNTH_TRUTH["signal_variance"], noise)
    ds = data_mod.synth_gp(n, d, truth, seed=cfg.synth_seed)
    data_mod.save_csv(ds, path)
    print(json.dumps({"path": str(path), "n": n, "dim": d, "truth": truth.as_dict()}))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="bbgp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_data(sp):
        sp.add_argument("--data", help="CSV file")
        sp.add_argument("--target", default="-1", help="target column name or index (default: last)")
        sp.add_argument("--no-header", action="store_true")
        sp.add_argument("--synth", type=_parse_synth, help="synthetic Matérn-3/2 GP data: n,D")
        sp.add_argument("--synth-seed", type=int, default=0)

    def add_estimator(sp):
        sp.add_argument("--epsilon", type=float, default=1.0)
        sp.add_argument("--probes", type=int, default=1)
        sp.add_argument("--max-iters", type=int, default=None)
        sp.add_argument("--precond-rank", type=int, default=100)
        sp.add_argument("--seeds", type=_parse_seeds, default=[0, 1, 2, 3, 4])

    tr = sub.add_parser("train", help="learn hyperparameters, write traces")
    add_data(tr)
    add_estimator(tr)
    tr.add_argument("--steps", type=int, default=500)
    tr.add_argument("--lr", type=float, default=0.1)
    tr.add_argument("--out", default="runs")
    tr.add_argument("--eval-every", type=int, default=10)

    ev = sub.add_parser("eval", help="test RMSE and LML for a parameter file")
    add_data(ev)
    add_estimator(ev)
    ev.add_argument("--params", required=True)

    vb = sub.add_parser("validate-bounds", help="run the randomized bound property suite")
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--scale", type=float, default=1.0, help="multiplier on trial counts")
    vb.add_argument("--inject-fault", choices=["radau-side"], help=argparse.SUPPRESS)

    sy = sub.add_parser("synth", help="write a synthetic GP dataset as CSV")
    sy.add_argument("--synth", type=_parse_synth, required=True)
    sy.add_argument("--synth-seed", type=int, default=0)
    sy.add_argument("--lengthscale", type=float, default=SYNTH_TRUTH["lengthscale"])
    sy.add_argument("--noise-variance", type=float, default=SYNTH_TRUTH["noise_variance"])
    sy.add_argument("--out", required=True)
    return p


def _config_from(args):
    fields = {k: getattr(args, k) for k in RunConfig.__dataclass_fields__ if hasattr(args, k)}
    fields["command"] = args.command
    if hasattr(args, "no_header"):
        fields["header"] = not args.no_header
    return RunConfig(**fields).validate()


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        cfg = _config_from(args)
        if args.command == "train":
            code = cmd_train(cfg)
        elif args.command == "eval":
            code = cmd_eval(cfg, args.params)
        elif args.command == "validate-bounds":
            code = cmd_validate_bounds(cfg, seed=args.seed, scale=args.scale, inject=args.inject_fault)
        else:
            code = cmd_synth(cfg, args.out, args.lengthscale, args.noise_variance)
    except ConfigError as exc:
        print(f"bbgp: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except DataError as exc:
        print(f"bbgp: data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except NumericalError as exc:
        print(f"bbgp: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
