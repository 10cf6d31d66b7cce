"""Command-line entry point: ``gind verify|chains|train|eval``.

Settings come from built-in defaults, then an optional ``key = value`` config
file, then ``--key value`` flags, later sources winning.  Each run writes
``metrics.jsonl`` (one JSON record per line), ``summary.txt`` and, for
training, ``params.txt`` under ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import ChainsSpec, gen_chains, load_dataset
from .errors import ConfigError, DatasetError, GindError, InputError, NumericalError, ShapeError
from .graph import orient
from .layer import Regularizer, SolverConfig
from .training import TrainConfig, evaluate, init_model, load_params, save_params, train
from .verify import check_matrix

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("verify", "chains", "train", "eval")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(kind):
    def parse(text):
        return tuple(kind(t) for t in str(text).replace(",", " ").split())
    parse.__name__ = f"list of {kind.__name__}"
    return parse


def _size(text: str) -> tuple[int, int]:
    n, h = text.lower().split("x")
    return int(n), int(h)


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "out": (str, "gind-out"),
    # verification matrix
    "trials": (int, 20),
    "activations": (_list(str), ("tanh", "identity")),
    "sizes": (_list(_size), ((6, 2), (8, 3))),
    "k_caps": (_list(float), (0.5, 0.95)),
    # solver
    "alpha": (float, 0.8),
    "tol": (float, 1e-6),
    "max_iter": (int, 50),
    "reg": (str, "none"),
    "eta": (float, 0.0),
    "phantom_steps": (int, 4),
    "warm_start": (_bool, False),
    # model
    "hidden": (int, 16),
    "var_norm": (_bool, True),
    "epsilon": (float, 1e-5),
    "activation": (str, "tanh"),
    "spectral_cap": (float, 0.95),
    "k_norm": (float, 0.5),
    # optimizer
    "lr": (float, 0.01),
    "weight_decay": (float, 5e-4),
    "epochs": (int, 500),
    "patience": (int, 100),
    "gamma_min": (float, 1e-3),
    # chains benchmark
    "lengths": (_list(int), (10, 20, 50, 100)),
    "repeats": (int, 5),
    "num_chains": (int, 20),
    "num_classes": (int, 2),
    "feature_dim": (int, 100),
    "noise_std": (float, 0.0),
    # train / eval
    "dataset": (str, ""),
    "params": (str, ""),
    "split": (str, "test"),
}

# Settings the chains benchmark uses unless overridden: heavy damping with
# warm-started solves, which the normalized layer needs to stay stable.
CHAINS_DEFAULTS = {
    "alpha": 0.02,
    "max_iter": 200,
    "warm_start": True,
    "epochs": 200,
    "patience": 1000,
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    def solver(self) -> SolverConfig:
        v = self.values
        return SolverConfig(alpha=v["alpha"], tol=v["tol"], max_iter=v["max_iter"],
                            reg=Regularizer.parse(v["reg"]), eta=v["eta"],
                            phantom_steps=v["phantom_steps"], warm_start=v["warm_start"])

    def trainer(self) -> TrainConfig:
        v = self.values
        return TrainConfig(lr=v["lr"], weight_decay=v["weight_decay"], epochs=v["epochs"],
                           patience=v["patience"], gamma_min=v["gamma_min"], seed=v["seed"])

    def chains_spec(self, length: int, seed: int) -> ChainsSpec:
        v = self.values
        return ChainsSpec(num_chains=v["num_chains"], chain_length=length, num_classes=v["num_classes"],
                          feature_dim=v["feature_dim"], noise_std=v["noise_std"], seed=seed)


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["run"])


def build_config(command: str, file_values: dict[str, str], overrides: dict[str, str]) -> RunConfig:
    """Merge defaults, file values and overrides, then validate every field."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    values = {k: d for k, (_, d) in SCHEMA.items()}
    if command == "chains":
        values.update(CHAINS_DEFAULTS)
    for source in (file_values, overrides):
        for key, raw in source.items():
            key = key.replace("-", "_")
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            parse = SCHEMA[key][0]
            try:
                values[key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
    cfg = RunConfig(command, values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    v = cfg.values
    if v["reg"] not in ("none", "laplacian", "decorrelation"):
        raise ConfigError(f"unknown regularizer {v['reg']!r}")
    cfg.solver()
    cfg.trainer()
    if v["activation"] not in ("tanh", "identity"):
        raise ConfigError(f"unknown activation {v['activation']!r}")
    if v["trials"] < 1:
        raise ConfigError(f"trials must be >= 1, got {v['trials']}")
    if v["repeats"] < 1:
        raise ConfigError(f"repeats must be >= 1, got {v['repeats']}")
    if v["hidden"] < 1:
        raise ConfigError(f"hidden must be >= 1, got {v['hidden']}")
    if not 0.0 < v["spectral_cap"] < 1.0:
        raise ConfigError(f"spectral_cap must lie in (0, 1), got {v['spectral_cap']}")
    if v["epsilon"] <= 0:
        raise ConfigError("epsilon must be positive")
    if v["split"] not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {v['split']!r}")
    for act in v["activations"]:
        if act not in ("tanh", "identity"):
            raise ConfigError(f"unknown activation {act!r}")
    if not v["sizes"] or any(n < 1 or h < 1 for n, h in v["sizes"]):
        raise ConfigError("sizes must be a non-empty list of NxH with positive entries")
    if not v["k_caps"] or any(k < 0 for k in v["k_caps"]):
        raise ConfigError("k_caps must be a non-empty list of non-negative norms")
    if not v["lengths"]:
        raise ConfigError("lengths must not be empty")
    for length in v["lengths"]:
        cfg.chains_spec(length, 0).validate()
    if cfg.command in ("train", "eval") and not v["dataset"]:
        raise ConfigError(f"{cfg.command} needs a dataset directory (--dataset)")


# -- output ------------------------------------------------------------------

class RecordWriter:
    """Serialized writer for ``metrics.jsonl``; keys keep insertion order."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = path.open("w", encoding="utf-8")

    def write(self, record: dict):
        self._fh.write(json.dumps(record, default=_jsonable) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_summary(out: Path, lines: list[str]):
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- commands ----------------------------------------------------------------

def run_verify(cfg: RunConfig) -> int:
    reports = check_matrix(cfg["activations"], cfg["sizes"], cfg["k_caps"], trials=cfg["trials"],
                           seed=cfg["seed"], tol=cfg["tol"])
    with RecordWriter(cfg.out / "metrics.jsonl") as w:
        for r in reports:
            w.write(r.to_record())
    failed = [r for r in reports if not r.passed]
    lines = [f"{'check':<18} {'act':<9} {'n':>3} {'h':>3} {'k':>5} {'violation':>11} {'threshold':>10} status"]
    for r in reports:
        lines.append(f"{r.check:<18} {r.detail.get('activation', ''):<9} {r.n:>3} {r.h:>3} "
                     f"{r.detail.get('k_norm', 0.0):>5.2f} {r.violation:>11.3e} {r.threshold:>10.1e} {r.status}")
    lines.append(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    _write_summary(cfg.out, lines)
    print(lines[-1])
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def chains_cell(cfg: RunConfig, length: int, seed: int) -> dict:
    """Train a fresh model on one Chains instance and report its test accuracy."""
    ds = gen_chains(cfg.chains_spec(length, seed))
    inc = orient(ds.graph, seed)
    model = _init(cfg, ds.num_features, ds.num_classes, seed)
    solver = cfg.solver()
    start = time.perf_counter()
    best, history = train(model, inc, solver, _with_seed(cfg.trainer(), seed), ds)
    test = evaluate(best, inc, solver, ds, "test")
    return {
        "length": length,
        "seed": seed,
        "test_acc": test["accuracy"],
        "test_loss": test["loss"],
        "epochs": len(history),
        "seconds": round(time.perf_counter() - start, 3),
    }


def _with_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return replace(tc, seed=seed)


def _init(cfg: RunConfig, p: int, c: int, seed: int):
    return init_model(p, cfg["hidden"], c, seed=seed, var_norm=cfg["var_norm"],
                      activation=cfg["activation"], spectral_cap=cfg["spectral_cap"],
                      k_norm=cfg["k_norm"], epsilon=cfg["epsilon"])


def run_chains(cfg: RunConfig) -> int:
    rows = []
    with RecordWriter(cfg.out / "metrics.jsonl") as w:
        for length in cfg["lengths"]:
            for r in range(cfg["repeats"]):
                rec = chains_cell(cfg, length, cfg["seed"] + r)
                w.write(rec)
                rows.append(rec)
                print(f"length {length:>4} seed {rec['seed']:>3} test_acc {rec['test_acc']:.4f} "
                      f"({rec['seconds']:.1f}s)", flush=True)
    lines = [f"{'length':>6} {'mean':>8} {'std':>8} {'runs':>4}"]
    for length in cfg["lengths"]:
        accs = np.array([r["test_acc"] for r in rows if r["length"] == length])
        lines.append(f"{length:>6} {accs.mean():>8.4f} {accs.std():>8.4f} {accs.size:>4}")
    _write_summary(cfg.out, lines)
    print("\n".join(lines))
    return EXIT_OK


def run_train(cfg: RunConfig) -> int:
    ds = load_dataset(cfg["dataset"])
    inc = orient(ds.graph, cfg["seed"])
    solver = cfg.solver()
    model = _init(cfg, ds.num_features, ds.num_classes, cfg["seed"])
    with RecordWriter(cfg.out / "metrics.jsonl") as w:
        best, history = train(model, inc, solver, cfg.trainer(), ds, on_epoch=w.write)
    save_params(best, cfg.out / "params.txt")
    metrics = {s: evaluate(best, inc, solver, ds, s) for s in ("train", "val", "test") if ds.mask(s).any()}
    lines = [f"epochs {len(history)}"]
    lines += [f"{s}_acc {m['accuracy']!r}\n{s}_loss {m['loss']!r}" for s, m in metrics.items()]
    _write_summary(cfg.out, lines)
    print(json.dumps({"epochs": len(history), **{f"{s}_acc": m["accuracy"] for s, m in metrics.items()}}))
    return EXIT_OK


def run_eval(cfg: RunConfig) -> int:
    ds = load_dataset(cfg["dataset"])
    params = Path(cfg["params"]) if cfg["params"] else cfg.out / "params.txt"
    model = load_params(params)
    if model.dims[0] != ds.num_features or model.dims[2] != ds.num_classes:
        raise ShapeError(f"parameters expect {model.dims[0]} features and {model.dims[2]} classes, "
                         f"dataset has {ds.num_features} and {ds.num_classes}")
    inc = orient(ds.graph, cfg["seed"])
    m = evaluate(model, inc, cfg.solver(), ds, cfg["split"])
    record = {"split": cfg["split"], "accuracy": m["accuracy"], "loss": m["loss"]}
    print(json.dumps(record))
    return EXIT_OK


RUNNERS = {"verify": run_verify, "chains": run_chains, "train": run_train, "eval": run_eval}


# -- argument handling -------------------------------------------------------

def parse_args(argv: list[str]) -> tuple[str, dict[str, str], dict[str, str]]:
    ap = argparse.ArgumentParser(prog="gind", description="Implicit nonlinear graph diffusion experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value config file")
    args, rest = ap.parse_known_args(argv)
    overrides: dict[str, str] = {}
    i = 0
    while i < len(rest):
        flag = rest[i]
        if not flag.startswith("--"):
            raise ConfigError(f"unexpected argument {flag!r}")
        if "=" in flag:
            key, val = flag[2:].split("=", 1)
            i += 1
        elif i + 1 < len(rest):
            key, val = flag[2:], rest[i + 1]
            i += 2
        else:
            raise ConfigError(f"missing value for {flag}")
        overrides[key] = val
    file_values = read_config_file(args.config) if args.config else {}
    return args.command, file_values, overrides


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, file_values, overrides = parse_args(argv)
        cfg = build_config(command, file_values, overrides)
    except ConfigError as exc:
        print(f"gind: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return RUNNERS[cfg.command](cfg)
    except NumericalError as exc:
        ctx = {k: v for k, v in exc.context.items() if k != "residuals"}
        print(f"gind: numerical failure: {exc} {ctx}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DatasetError, ShapeError, InputError, GindError) as exc:
        print(f"gind: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
