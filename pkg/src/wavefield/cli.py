"""``wavefield`` command-line entry point.

Usage::

    wavefield <command> [--config PATH] [--seed N] [--out DIR] [--set KEY=VALUE ...]

The config file is a flat YAML mapping; ``--set`` entries override it and are
parsed as YAML scalars/lists. Every command writes UTF-8 CSV files with a
header row into ``--out`` (default ``./out``); floats carry 17 significant
digits. Schemas are listed in ``CSV_SCHEMAS``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import training
from .adjoint import gradcheck_suite
from .model import ModelConfig, model_forward
from .params_io import ParamFileError, load_params, save_params
from .spectral import stability_bound

log = logging.getLogger("wavefield")

CSV_SCHEMAS = {
    "gradcheck": ["instance", "n", "steps", "dt", "max_rel_error"],
    "dt-sweep": ["dt", "mse", "wecs_abs_err", "diverged"],
    "wecs": ["integrator", "steps", "wecs"],
    "curve": ["step", "loss", "metric"],
    "report": ["key", "value"],
    "dump-medium": ["position", "input", "c", "gamma"],
    "bench": ["n", "wave_forward_backward_seconds", "attention_forward_seconds", "ratio"],
}

# command -> {key: default}; unknown keys are rejected
COMMAND_KEYS = {
    "gradcheck": {
        "instances": 100, "sizes": [8, 16, 32], "step_counts": [1, 4, 8],
        "eps": 1e-4, "order": 4, "tolerance": 1e-5, "corrupt_d_gamma": False,
    },
    "dt-sweep": {"dt_grid": [0.01, 0.02, 0.1, 0.2, 0.5, 0.6, 0.7, 1.0], "n": 64, "horizon": 20.0},
    "wecs": {"n": 64, "dt": None, "checkpoints": [1, 10, 100, 1000], "mode": 1},
    "train": {
        "task": "inverse-medium", "n": None, "d": None, "steps": None, "train_steps": None,
        "lr": None, "batch_size": None, "dt": None, "num_samples": None, "log_every": None,
        "vocab": None, "dt0": None, "weight_scale": None, "heldout": None, "dump_medium": True,
    },
    "dump-medium": {"params": None, "tokens": None, "values": None, "block": 0, "sample_seed": None},
    "bench": {"ns": [256, 1024, 4096, 16384, 65536], "d": 64, "steps": 4, "reps": 5, "warmup": 1, "threads": 1},
}
COMMON_KEYS = {"seed", "out", "verbosity"}


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, schema: str, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_SCHEMAS[schema])
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def load_config(command: str, path: str | None, overrides: list[str]) -> dict:
    cfg = dict(COMMAND_KEYS[command])
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a key: value mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = yaml.safe_load(v)
    unknown = set(raw) - set(cfg) - COMMON_KEYS
    if unknown:
        raise ConfigError(
            f"unknown key(s) for {command}: {sorted(unknown)}; allowed: {sorted(set(cfg) | COMMON_KEYS)}"
        )
    cfg.update(raw)
    return cfg


# ---------------------------------------------------------------- commands

def cmd_gradcheck(cfg: dict, seed: int, out: Path) -> int:
    rows = gradcheck_suite(
        int(cfg["instances"]), seed, tuple(cfg["sizes"]), tuple(cfg["step_counts"]),
        float(cfg["eps"]), bool(cfg["corrupt_d_gamma"]), order=int(cfg["order"]),
    )
    write_csv(out / "gradcheck.csv", "gradcheck", [(r.instance, r.n, r.steps, r.dt, r.max_rel_error) for r in rows])
    failed = [r for r in rows if not r.max_rel_error <= cfg["tolerance"]]
    for r in failed:
        print(f"gradcheck: instance {r.instance} (n={r.n}, steps={r.steps}) "
              f"max relative error {r.max_rel_error:.3e} > {cfg['tolerance']:g}", file=sys.stderr)
    return 1 if failed else 0


def cmd_dt_sweep(cfg: dict, seed: int, out: Path) -> int:
    spec = training.default_spec(
        "dt-sweep", seed, n=int(cfg["n"]), dt_grid=tuple(cfg["dt_grid"]),
        extra={"horizon": float(cfg["horizon"])},
    )
    rows = training.run_dt_sweep(spec)
    write_csv(out / "dt_sweep.csv", "dt-sweep", [(r.dt, r.mse, r.wecs_abs_err, r.diverged) for r in rows])
    return 0


def wecs_rows(n: int, dt: float, checkpoints, mode: int = 1):
    rows = []
    for integrator in ("verlet", "euler"):
        for steps in checkpoints:
            pair = training.wecs_pair(n, dt, int(steps), mode)
            rows.append((integrator, int(steps), pair[0] if integrator == "verlet" else pair[1]))
    return rows


def cmd_wecs(cfg: dict, seed: int, out: Path) -> int:
    dt = cfg["dt"] if cfg["dt"] is not None else 0.5 * stability_bound(1.0)
    write_csv(out / "wecs.csv", "wecs", wecs_rows(int(cfg["n"]), float(dt), cfg["checkpoints"], int(cfg["mode"])))
    return 0


_SPEC_FIELDS = ("n", "d", "steps", "train_steps", "lr", "batch_size", "dt", "num_samples", "log_every")
_EXTRA_FIELDS = ("vocab", "dt0", "weight_scale", "heldout")


def train_spec(cfg: dict, seed: int) -> training.TaskSpec:
    task = cfg["task"]
    if task not in ("inverse-medium", "pattern-detect", "universality-fit"):
        raise ConfigError(f"train: task must be inverse-medium, pattern-detect or universality-fit, got {task!r}")
    overrides = {k: cfg[k] for k in _SPEC_FIELDS if cfg.get(k) is not None}
    extra = {k: cfg[k] for k in _EXTRA_FIELDS if cfg.get(k) is not None}
    return training.default_spec(task, seed, extra=extra, **overrides)


def dump_rows(x, params: dict, mcfg: ModelConfig, block: int):
    """(position, input, c, gamma) rows of the medium a forward pass uses in ``block``."""
    if not 0 <= block < mcfg.num_blocks:
        raise ConfigError(f"block {block} out of range for a {mcfg.num_blocks}-block model")
    _, (_, _, caches) = model_forward(x, params, mcfg, return_cache=True)
    medium = caches[block][1].medium
    xs = np.asarray(x)
    if xs.ndim > 1:
        xs = xs[..., 0]
    return [(j, xs[j], medium.c[j], medium.gamma[j]) for j in range(len(medium.c))]


def cmd_train(cfg: dict, seed: int, out: Path) -> int:
    spec = train_spec(cfg, seed)
    report: list[tuple[str, object]] = [("task", spec.task), ("seed", seed)]
    if spec.task == "inverse-medium":
        r = training.run_inverse_medium(spec)
        write_csv(out / "curve.csv", "curve", r.curve)
        save_params(out / "params.txt", {"c": r.c, "gamma": r.gamma}, {"task": spec.task, "kind": "direct-medium"})
        report += [("initial_loss", r.initial_loss), ("final_loss", r.final_loss),
                   ("c_rel_error", r.c_rel_error), ("gamma_weighted_error", r.gamma_weighted_error),
                   ("diverged", r.diverged)]
        if cfg["dump_medium"]:
            write_csv(out / "medium.csv", "dump-medium",
                      [(j, float("nan"), r.c[j], r.gamma[j]) for j in range(spec.n)])
    elif spec.task == "pattern-detect":
        r = training.run_pattern_detect(spec)
        for name in ("wave", "control"):
            write_csv(out / f"curve_{name}.csv", "curve", r.curves[name])
            save_params(out / f"params_{name}.txt", r.params[name],
                        {"task": spec.task, "kind": "model", "model": r.configs[name].to_dict()})
        report += [("wave_accuracy", r.wave_accuracy), ("control_accuracy", r.control_accuracy)]
        if cfg["dump_medium"]:
            seqs, _ = training.motif_batch(np.random.default_rng([seed, 5]), 2, spec.n,
                                           r.configs["wave"].vocab_size)
            write_csv(out / "medium.csv", "dump-medium",
                      dump_rows(seqs[1], r.params["wave"], r.configs["wave"], 0))
    else:
        r = training.run_universality_fit(spec)
        write_csv(out / "curve.csv", "curve", r.curve)
        save_params(out / "params.txt", r.params, {"task": spec.task, "kind": "universality", "steps": spec.steps})
        report += [("sup_error", r.sup_error), ("final_loss", r.final_loss), ("diverged", r.diverged)]
        if cfg["dump_medium"]:
            c, g = training.softplus(r.params["c_raw"]), training.softplus(r.params["gamma_raw"])
            x = training.universality_input(spec.n)
            write_csv(out / "medium.csv", "dump-medium", [(j, x[j], c[j], g[j]) for j in range(spec.n)])
    write_csv(out / "report.csv", "report", report)
    return 0


def cmd_dump_medium(cfg: dict, seed: int, out: Path) -> int:
    if not cfg["params"]:
        raise ConfigError("dump-medium: 'params' (path to a model parameter file) is required")
    params, meta = load_params(cfg["params"])
    if meta.get("kind") != "model" or "model" not in meta:
        raise ParamFileError(f"{cfg['params']}: not a block-model parameter file")
    mcfg = ModelConfig(**meta["model"])
    missing = {k for k in _expected_keys(mcfg)} - set(params)
    if missing:
        raise ParamFileError(f"{cfg['params']}: missing parameters {sorted(missing)}")
    if cfg["tokens"] is not None:
        x = np.asarray(cfg["tokens"], dtype=np.int64)
    elif cfg["values"] is not None:
        x = np.asarray(cfg["values"], dtype=np.float64)
    elif mcfg.input_kind == "tokens":
        s = seed if cfg["sample_seed"] is None else int(cfg["sample_seed"])
        x = training.motif_batch(np.random.default_rng([s, 5]), 2, 128, mcfg.vocab_size)[0][1]
    else:
        raise ConfigError("dump-medium: give 'tokens' or 'values'")
    write_csv(out / "medium.csv", "dump-medium", dump_rows(x, params, mcfg, int(cfg["block"])))
    return 0


def _expected_keys(mcfg: ModelConfig):
    from .model import init_params

    return init_params(mcfg).keys()


def cmd_bench(cfg: dict, seed: int, out: Path) -> int:
    from .bench import run_bench

    rows = run_bench(cfg["ns"], int(cfg["d"]), int(cfg["steps"]), int(cfg["reps"]),
                     int(cfg["warmup"]), seed, int(cfg["threads"]))
    write_csv(out / "bench.csv", "bench", [
        (r.n, "skipped", "skipped", "skipped") if r.skipped
        else (r.n, r.wave_seconds, r.attention_seconds, r.ratio)
        for r in rows
    ])
    return 0


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "dt-sweep": cmd_dt_sweep,
    "wecs": cmd_wecs,
    "train": cmd_train,
    "dump-medium": cmd_dump_medium,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavefield", description="Wave-equation layer experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML file of key: value settings")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.set)
        seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        out = Path(args.out or cfg.get("out") or "out")
        verbosity = args.verbose or int(cfg.get("verbosity", 0))
        logging.basicConfig(
            level=logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, seed, out)
    except (ConfigError, ParamFileError, OSError, ValueError, TypeError, KeyError, IndexError) as exc:
        print(f"wavefield {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
