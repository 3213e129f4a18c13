"""``modelbridge`` command line.

Subcommands: gen-data, calibrate, bridge, predict, convergence.
Exit codes: 0 ok, 1 I/O error, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dist2dist import BridgingModel
from .herding import Grid, HerdingConfig, herd, write_samples_csv
from .kernel_abc import run_calibration
from .kernels import NumericalError
from .pipeline import (
    Embedder,
    ExperimentConfig,
    bridge_predict,
    convergence_table,
    generate_datasets,
    pre_learn,
    train_bridge,
    theta_kernel_for,
)
from .simulators import Dataset, make_simulator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("modelbridge")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def load_config(path, seed: Optional[int] = None, seed_field: str = "seed",
                threads: Optional[int] = None) -> tuple:
    """Parse a JSON or TOML experiment config; returns (config, extras, hash)."""
    path = Path(path)
    text = path.read_text()  # OSError -> exit 1
    try:
        raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    extras = {k: raw.pop(k) for k in ("L_grid",) if k in raw}
    if seed is not None:
        raw[seed_field] = seed
    if threads is not None:
        raw["threads"] = threads
    try:
        config = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    digest = hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    return config, extras, digest


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MB_THREADS")
    return int(env) if env else None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def write_manifest(path: Path, command: str, config_hash: str, seeds: dict, artifacts: list,
                   started: float, simulator_calls: int) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": config_hash,
        "seeds": seeds,
        "artifacts": [str(p) for p in artifacts],
        "timing_s": round(time.time() - started, 3),
        "simulator_calls": simulator_calls,
    }
    tmp = path.with_name(path.name + ".tmp")
    _write_json(tmp, manifest)
    os.replace(tmp, path)


def _dataset_files(directory: Path) -> list:
    files = sorted(directory.glob("dataset_*.csv"))
    if not files:
        raise FileNotFoundError(f"no dataset_*.csv files in {directory}")
    return files


# --- commands -------------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    started = time.time()
    config, _, digest = load_config(args.config, args.seed, "data_seed", _threads(args))
    out = Path(args.out)
    sim = make_simulator(config.simulator)
    datasets = generate_datasets(config, sim)
    # stage into a temp dir so a failure never leaves a partial output
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".gen-", dir=out.parent))
    try:
        for l, d in enumerate(datasets):
            d.to_csv(stage / f"dataset_{l:03d}.csv")
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for f in sorted(stage.iterdir()):
            os.replace(f, out / f.name)
            if f.suffix == ".csv":
                paths.append(out / f.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    write_manifest(out / "manifest.json", "gen-data", digest, {"data_seed": config.data_seed}, paths, started, sim.calls)
    print(f"wrote {len(paths)} datasets to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    started = time.time()
    config, _, digest = load_config(args.config, args.seed, threads=_threads(args))
    dataset = Dataset.from_csv(args.dataset)
    sim = make_simulator(config.simulator)
    abc = config.abc_config(theta_kernel_for(config))
    cal = run_calibration(sim, dataset, config.prior, abc)
    samples = herd(cal.posterior, config.herding_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "posterior.json", cal.to_dict())
    write_samples_csv(samples, out / "theta_samples.csv")
    write_manifest(out / "manifest.json", "calibrate", digest, {"seed": config.seed},
                   [out / "posterior.json", out / "theta_samples.csv"], started, cal.simulator_calls)
    _print_summary(samples)
    print(f"simulator calls: {cal.simulator_calls}")
    return EXIT_OK


def _herding_to_dict(h: HerdingConfig) -> dict:
    if isinstance(h.candidates, Grid):
        g = h.candidates
        return {"n_samples": h.n_samples,
                "grid": {"resolution": g.resolution, "lower": list(g.lower), "upper": list(g.upper)}}
    return {"n_samples": h.n_samples, "candidates": "atoms"}


def _herding_from_dict(d: dict) -> HerdingConfig:
    if "grid" in d:
        return HerdingConfig(d["n_samples"], Grid(**d["grid"]))
    return HerdingConfig(d["n_samples"])


def cmd_bridge(args) -> int:
    started = time.time()
    config, _, digest = load_config(args.config, args.seed, threads=_threads(args))
    datasets = [Dataset.from_csv(f) for f in _dataset_files(Path(args.prelearn_dir))]
    sim = make_simulator(config.simulator)
    pool = pre_learn(datasets, sim, config)
    model = train_bridge(pool, config.lam, config.sigma_mu)
    doc = model.to_dict()
    doc["embedder"] = pool.embedder.to_dict()
    doc["herding"] = _herding_to_dict(config.herding_config())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, doc)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "bridge", digest, {"seed": config.seed},
                   [out], started, pool.simulator_calls)
    print(f"bridging model on L={len(datasets)} datasets written to {out} "
          f"(lambda={model.lam:g}, sigma_mu={model.sigma_mu:.4g}, simulator calls {pool.simulator_calls})")
    return EXIT_OK


def load_bridge(path) -> tuple:
    doc = json.loads(Path(path).read_text())
    try:
        return BridgingModel.from_dict(doc), Embedder.from_dict(doc["embedder"]), _herding_from_dict(doc["herding"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path} is not a bridging model file: {exc}") from exc


def _print_summary(samples: np.ndarray) -> None:
    print(f"{'param':>8} {'mean':>12} {'std':>12}")
    for i, (mu, sd) in enumerate(zip(samples.mean(axis=0), samples.std(axis=0)), start=1):
        print(f"{'theta' + str(i):>8} {mu:12.5g} {sd:12.5g}")


def cmd_predict(args) -> int:
    started = time.time()
    model, embedder, herding = load_bridge(args.model)
    dataset = Dataset.from_csv(args.dataset)
    x_new = np.array([float(v) for v in args.x.split(",")])
    pred = bridge_predict(model, embedder, dataset, x_new.reshape(1, -1), herding)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_samples_csv(pred.theta_samples, out)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "predict", "", {}, [out], started, 0)
    print("y_hat at x =", ",".join(repr(float(v)) for v in x_new), ":",
          ",".join(f"{float(v):.6g}" for v in np.ravel(pred.y_hat)))
    _print_summary(pred.theta_samples)
    return EXIT_OK


def cmd_convergence(args) -> int:
    started = time.time()
    config, extras, digest = load_config(args.config, args.seed, threads=_threads(args))
    grid = sorted({int(v) for v in extras.get("L_grid", [5, 10, config.L])})
    if not grid or min(grid) < 1:
        raise ConfigError("L_grid entries must be >= 1")
    sim = make_simulator(config.simulator)
    datasets = generate_datasets(config, sim, count=max(grid) + 1)
    pool = pre_learn(datasets, sim, config)
    rows = convergence_table(pool, config, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["L,mean_gap,std_gap,baseline"]
    lines += [f"{r.L},{r.mean_gap!r},{r.std_gap!r},{r.baseline!r}" for r in rows]
    out.write_text("\n".join(lines) + "\n", newline="\n")
    write_manifest(out.with_name(out.stem + ".manifest.json"), "convergence", digest,
                   {"seed": config.seed, "data_seed": config.data_seed}, [out], started, pool.simulator_calls)
    for r in rows:
        print(f"L={r.L:4d}  gap {r.mean_gap:.4g} +- {r.std_gap:.3g}   prior-only {r.baseline:.4g}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelbridge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment config (.json or .toml)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=int, default=None, help="worker threads (env: MB_THREADS)")

    sp = sub.add_parser("gen-data", help="generate L regime-shift datasets")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("calibrate", help="kernel-ABC calibration of one dataset + herded samples")
    sp.add_argument("dataset")
    common(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("bridge", help="pre-learn a dataset directory and fit the bridging function")
    sp.add_argument("prelearn_dir")
    common(sp)
    sp.set_defaults(func=cmd_bridge)

    sp = sub.add_parser("predict", help="prediction and herded parameters for a new dataset")
    sp.add_argument("model")
    sp.add_argument("dataset")
    sp.add_argument("--x", required=True, help="new input, comma-separated coordinates")
    common(sp, config=False)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("convergence", help="leave-one-out RKHS gap against number of training datasets")
    common(sp)
    sp.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
