"""Command-line driver: dataset generation, engine runs, evaluation, tables."""

from __future__ import annotations

import argparse
import configparser
import glob as globmod
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .dataset import DatasetConfig, build_hybrid_dataset, load_dataset, save_dataset
from .engine import ConsistencyConfig, run_engine
from .errors import (
    ConfigError,
    DatasetFormatError,
    InvalidArgument,
    NumericalFailure,
    ShadowforgeError,
    UndefinedMetric,
)
from .learner import LearnerConfig, load_model, predict, r_squared, save_model
from .shadows import purity_variance_bound

# External reference values for the full-scale configuration of this
# experiment family, echoed into run aggregates for context.
REFERENCE_FULL_SCALE = {"baseline_r2": 0.722, "engine_r2": 0.825, "delta": 0.103}

EVAL_SPLITS = ("labeled", "val", "test")


# ---------------------------------------------------------------- config file

def _read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        found = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not found:
        raise ConfigError(f"config file not found: {path}")
    return cp


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key: {section.name}.{key}")
        return default
    raw = section[key].strip()
    if raw.lower() == "none":
        return None
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section.name}.{key}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(raw)


def _int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def _float_pair(raw: str) -> tuple[float, float]:
    parts = [float(tok) for tok in raw.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(raw)
    return parts[0], parts[1]


def dataset_config_from(cp: configparser.ConfigParser) -> DatasetConfig:
    if not cp.has_section("dataset"):
        raise ConfigError("missing required section: dataset")
    sec = cp["dataset"]
    kwargs = {
        "system": _get(sec, "system", str, required=True),
        "N": _get(sec, "N", int, required=True),
        "n": _get(sec, "n", int, required=True),
        "r": _get(sec, "r", float, required=True),
        "m_l": _get(sec, "m_l", int, required=True),
        "m_u": _get(sec, "m_u", int, required=True),
        "n_val": _get(sec, "n_val", int, required=True),
        "task": _get(sec, "task", str, required=True),
        "seed": _get(sec, "seed", int, required=True),
    }
    opt = {
        "param_range": _get(sec, "param_range", _float_pair),
        "use_params_as_features": _get(sec, "use_params_as_features", _bool),
        "n_test": _get(sec, "n_test", int),
        "pauli_file": _get(sec, "pauli_file", str),
    }
    kwargs.update({k: v for k, v in opt.items() if v is not None})
    try:
        return DatasetConfig(**kwargs)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc


def learner_config_from(cp: configparser.ConfigParser) -> LearnerConfig:
    if not cp.has_section("learner"):
        return LearnerConfig()
    sec = cp["learner"]
    fields = {
        "hidden_sizes": _int_tuple,
        "learning_rate": float,
        "batch_size": int,
        "max_epochs": int,
        "patience_initial": int,
        "patience_engine": int,
        "consistency_weight": float,
        "ema_decay": float,
        "ridge": float,
        "holdout_fraction": float,
        "seed": int,
    }
    kwargs = {}
    for key, cast in fields.items():
        value = _get(sec, key, cast)
        if value is not None:
            kwargs[key] = value
    try:
        return LearnerConfig(**kwargs)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc


def engine_params_from(cp: configparser.ConfigParser) -> dict:
    sec = cp["engine"] if cp.has_section("engine") else {}
    getter = lambda key, cast, default: (
        _get(sec, key, cast, default) if sec else default
    )
    cc_kwargs = {}
    if sec:
        for key, cast in (
            ("s", int),
            ("subset_fraction", float),
            ("admitted_fraction", float),
            ("max_retries", int),
            ("tighten_factor", float),
            ("absolute_tau", float),
        ):
            value = _get(sec, key, cast)
            if value is not None:
                cc_kwargs[key] = value
    try:
        cc = ConsistencyConfig(**cc_kwargs)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    paradigm = getter("paradigm", str, "sl")
    T = getter("T", int, 6)
    seeds = getter("seeds", _int_tuple, None)
    if T < 0:
        raise ConfigError("engine.T must be >= 0")
    return {"cc": cc, "T": T, "paradigm": paradigm, "seeds": seeds}


def _threads() -> int:
    raw = os.environ.get("SHADOWFORGE_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad SHADOWFORGE_THREADS value: {raw!r}") from exc
    return max(1, value)


# ---------------------------------------------------------------- file output

def _atomic_write(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json_text(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    cp = _read_config(args.config)
    cfg = dataset_config_from(cp)
    ds = build_hybrid_dataset(cfg, threads=_threads())
    name = (
        f"{cfg.system}_{cfg.task}_N{cfg.N}_n{cfg.n}_r{cfg.r:g}"
        f"_ml{cfg.m_l}_mu{cfg.m_u}_seed{cfg.seed}.jsonl"
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, name)
    tmp = f"{path}.tmp"
    save_dataset(ds, tmp)
    os.replace(tmp, path)
    print(f"wrote {path}")
    print(
        "splits: labeled=%d unlabeled=%d validation=%d test=%d"
        % (len(ds.labeled), len(ds.unlabeled), len(ds.validation), len(ds.test))
    )
    if cfg.task == "entropy":
        for a in range(1, cfg.N):
            std_bound = float(np.sqrt(purity_variance_bound(cfg.m_l, a, 1.0)))
            if std_bound > 0.25:
                print(
                    "warning: prefix %d purity std bound %.3g at m_l=%d; "
                    "labels there are noise-dominated" % (a, std_bound, cfg.m_l)
                )
    return 0


def _test_r2(model, points) -> float:
    preds = [predict(model, p) for p in points]
    return r_squared(preds, [p.labels for p in points])


def _run_one_seed(ds_train, ds_eval, eng, lc_base, seed, out_dir, meta):
    lc = replace(lc_base, seed=seed)
    model, state, rows = run_engine(ds_train, eng["T"], eng["cc"], lc, eng["paradigm"])
    baseline_r2 = _test_r2(state.baseline_model, ds_eval.test)
    engine_r2 = _test_r2(model, ds_eval.test)
    # Wallclock differs between runs; zero it so reruns are byte-identical.
    clean_rows = [dict(row, wallclock_s=0.0) for row in rows]
    report = {"meta": dict(meta, seed=seed), "iterations": clean_rows}
    _atomic_write(os.path.join(out_dir, f"report_seed{seed}.json"), _json_text(report))
    model_path = os.path.join(out_dir, f"model_seed{seed}.json")
    tmp = f"{model_path}.tmp"
    save_model(model, tmp)
    os.replace(tmp, model_path)
    return baseline_r2, engine_r2


def _stats(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "per_seed": [float(v) for v in arr],
        "mean": float(arr.mean()),
        "std": float(arr.std()),
    }


def cmd_run(args) -> int:
    cp = _read_config(args.config)
    lc_base = learner_config_from(cp)
    eng = engine_params_from(cp)
    if args.seeds is not None:
        seeds = _int_tuple(args.seeds)
    elif eng["seeds"] is not None:
        seeds = eng["seeds"]
    else:
        seeds = (lc_base.seed,)
    if not seeds:
        raise ConfigError("seed list is empty")
    # The engine only ever sees the train-scoped view; test labels stay sealed.
    ds_train = load_dataset(args.dataset, scope="train")
    ds_eval = load_dataset(args.dataset)
    cfg = ds_eval.config
    meta = {
        "dataset": os.path.basename(args.dataset),
        "system": cfg.system,
        "task": cfg.task,
        "N": cfg.N,
        "n": cfg.n,
        "r": cfg.r,
        "m_l": cfg.m_l,
        "m_u": cfg.m_u,
        "T": eng["T"],
        "paradigm": eng["paradigm"],
    }
    os.makedirs(args.out, exist_ok=True)

    results: dict[int, tuple[float, float]] = {}
    failures: dict[int, str] = {}

    def work(seed):
        try:
            results[seed] = _run_one_seed(
                ds_train, ds_eval, eng, lc_base, seed, args.out, meta
            )
        except ShadowforgeError as exc:
            failures[seed] = str(exc)

    workers = _threads()
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, seeds))
    else:
        for seed in seeds:
            work(seed)

    ok_seeds = [s for s in seeds if s in results]
    if ok_seeds:
        baselines = [results[s][0] for s in ok_seeds]
        engines = [results[s][1] for s in ok_seeds]
        aggregate = {
            "config": meta,
            "seeds": list(ok_seeds),
            "baseline_r2": _stats(baselines),
            "engine_r2": _stats(engines),
            "delta": _stats([e - b for b, e in zip(baselines, engines)]),
            "reference_full_scale": REFERENCE_FULL_SCALE,
        }
        _atomic_write(os.path.join(args.out, "aggregate.json"), _json_text(aggregate))
        print(
            "aggregate over %d seed(s): baseline %.4f +- %.4f, engine %.4f +- %.4f"
            % (
                len(ok_seeds),
                aggregate["baseline_r2"]["mean"],
                aggregate["baseline_r2"]["std"],
                aggregate["engine_r2"]["mean"],
                aggregate["engine_r2"]["std"],
            )
        )
    for seed, message in sorted(failures.items()):
        print(f"seed {seed} failed: {message}", file=sys.stderr)
    return 3 if failures else 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.dataset)
    points = {
        "labeled": ds.labeled,
        "val": ds.validation,
        "test": ds.test,
    }[args.split]
    if not points:
        raise InvalidArgument(f"split {args.split!r} is empty")
    preds = [predict(model, p) for p in points]
    truths = [p.labels for p in points]
    per_prefix = []
    for k in range(len(truths[0])):
        try:
            per_prefix.append(r_squared([p[k] for p in preds], [t[k] for t in truths]))
        except UndefinedMetric:
            per_prefix.append(None)
    metrics = {
        "r2": r_squared(preds, truths),
        "per_prefix_r2": per_prefix,
        "n_points": len(points),
    }
    print(json.dumps(metrics, sort_keys=True))
    return 0


_TABLE_COLUMNS = ("system", "task", "r", "m_u", "paradigm", "baseline", "engine", "delta")


def cmd_table(args) -> int:
    paths = sorted(globmod.glob(args.reports))
    if not paths:
        raise ConfigError(f"no reports match {args.reports!r}")
    rows = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            agg = json.load(fh)
        if "config" not in agg or "baseline_r2" not in agg:
            raise DatasetFormatError(f"{path} is not a run aggregate")
        cfg = agg["config"]
        rows.append(
            (
                cfg["system"],
                cfg["task"],
                float(cfg["r"]),
                int(cfg["m_u"]),
                cfg["paradigm"],
                agg["baseline_r2"]["mean"],
                agg["engine_r2"]["mean"],
                agg["delta"]["mean"],
            )
        )
    rows.sort(key=lambda row: row[:5])
    header = "%-14s %-8s %5s %6s %-8s %10s %10s %8s" % _TABLE_COLUMNS
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            "%-14s %-8s %5.2f %6d %-8s %10.4f %10.4f %+8.4f"
            % (row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7])
        )
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shadowforge",
        description="Synthetic-label engine for quantum property estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a hybrid dataset file")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=".")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run the engine over a seed list")
    run.add_argument("--config", required=True)
    run.add_argument("--dataset", required=True)
    run.add_argument("--out", default=".")
    run.add_argument("--seeds", default=None, help='comma list, e.g. "1,2,3"')
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="evaluate a saved model on a dataset split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", choices=EVAL_SPLITS, default="test")
    ev.set_defaults(func=cmd_eval)

    table = sub.add_parser("table", help="render a grid of run aggregates")
    table.add_argument("reports", help="glob over aggregate.json files")
    table.set_defaults(func=cmd_table)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, UndefinedMetric) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ShadowforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
