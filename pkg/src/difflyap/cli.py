"""Command-line front end: ``difflyap {train,eval,simulate,export-grid,bench-lasa}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import data as D
from .base_functions import BaseFunction
from .diffeo_net import DiffeoNet, InverseNotConverged, load, save
from .lyapunov import (DEFAULT_EXCLUSION_RADIUS, LyapunovCandidate, evaluate_grid,
                       violation_rate, write_grid)
from .trainer import TrainConfig, TrainingError, train

log = logging.getLogger("difflyap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# protocol defaults for bench-lasa; the subset size is a tuning parameter
LASA_SUBSET = 200
LASA_SEEDS = 5
LASA_TRAIN = {"kappa": 20.0, "hinge_margin": 0.2, "anchor_weight": 1000.0,
              "stop_on_zero_violations": False}


class UsageError(Exception):
    pass


# -- run manifest ------------------------------------------------------------------

def code_version() -> str:
    try:
        return metadata.version("difflyap")
    except metadata.PackageNotFoundError:
        return "unknown"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    version: str = field(default_factory=code_version)
    wall_time: float = 0.0
    outputs: list[str] = field(default_factory=list)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def write(self, path) -> Path:
        return write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def write_json(path, obj) -> Path:
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sidecar(model_path, suffix: str) -> Path:
    p = Path(model_path)
    return p.with_name(p.stem + suffix)


# -- configuration ------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))  # JSON is valid YAML
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a mapping")
    unknown = set(doc) - {"seed", "data", "system", "base", "train"}
    if unknown:
        raise UsageError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def set_dotted(cfg: dict, assignment: str) -> None:
    """Apply ``section.key=value`` with the value parsed as YAML."""
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise UsageError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(raw)


def train_config(cfg: dict) -> TrainConfig:
    opts = dict(cfg.get("train", {}))
    if "seed" in cfg:
        opts["seed"] = cfg["seed"]
    try:
        return TrainConfig.from_dict(opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from None


def make_base(spec: dict | None, data: D.TrajectoryDataset | None = None) -> BaseFunction:
    spec = dict(spec or {"kind": "point_attractor", "scale": 0.1})
    if spec.get("kind") == "limit_cycle_ring" and spec.get("radius", "auto") == "auto":
        if data is None or not np.any(data.attractor):
            raise UsageError("radius 'auto' needs attractor-flagged samples")
        spec["radius"] = float(np.mean(np.linalg.norm(data.x[data.attractor], axis=1)))
    try:
        return BaseFunction.from_dict(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid base function: {exc}") from None


# -- synthetic systems ----------------------------------------------------------------

def simulate_spec(spec: dict) -> D.TrajectoryDataset:
    """Dataset for a system spec ``{kind, ...}``.

    Defaults per kind: warped_linear starts on a ring of radius 1,
    two_attractor uses the six standard starts and van_der_pol combines 20
    cycle samples with four trajectories from the corners (+-3, +-3).
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    sample_every = int(spec.pop("sample_every", 5))
    starts = spec.pop("initial_states", None)
    h = float(spec.pop("h", 0.01))
    duration = spec.pop("duration", None)
    if kind == "warped_linear":
        n_starts = int(spec.pop("starts", 6))
        radius = float(spec.pop("radius", 1.0))
        phase = float(spec.pop("phase", 0.0))
        system, _ = D.make_warped_linear(int(spec.pop("seed", 0)), h=h)
        starts = D.ring_states(n_starts, radius, phase) if starts is None else starts
        extra = None
    elif kind == "two_attractor":
        system = D.two_attractor_system(float(spec.pop("twist", 2.5)), h=h)
        starts = D.TWO_ATTRACTOR_STARTS if starts is None else starts
        extra = None
    elif kind == "van_der_pol":
        system = D.van_der_pol(float(spec.pop("mu", 1.0)), h=h)
        corner = float(spec.pop("corner", 3.0))
        starts = (np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]]) * corner
                  if starts is None else starts)
        extra = D.sample_limit_cycle(system, int(spec.pop("cycle_samples", 20)))
    elif kind == "linear":
        system = D.linear_system(float(spec.pop("rate", 1.0)), h=h)
        if starts is None:
            raise UsageError("linear system needs initial_states")
        extra = None
    else:
        raise UsageError(f"unknown system kind {kind!r}")
    if spec:
        raise UsageError(f"unknown system options {sorted(spec)}")
    ds = D.simulate(system, np.asarray(starts, float), duration, sample_every=sample_every)
    if extra is not None:
        ds = D.TrajectoryDataset.concat([ds, extra])
    return ds


def system_field(spec: dict):
    """Vector field of a system spec, for overlays and evaluation."""
    spec = dict(spec)
    kind = spec.get("kind")
    if kind == "warped_linear":
        return D.make_warped_linear(int(spec.get("seed", 0)))[0]
    if kind == "two_attractor":
        return D.two_attractor_system(float(spec.get("twist", 2.5)))
    if kind == "van_der_pol":
        return D.van_der_pol(float(spec.get("mu", 1.0)))
    if kind == "linear":
        return D.linear_system(float(spec.get("rate", 1.0)))
    raise UsageError(f"unknown system kind {kind!r}")


def prepare_data(cfg: dict, files, manifest: RunManifest | None) -> D.TrajectoryDataset:
    dcfg = dict(cfg.get("data", {}))
    files = list(files or dcfg.pop("files", []))
    dcfg.pop("files", None)
    fmt = dcfg.pop("format", "generic_csv")
    if files:
        ds = D.load_trajectories(files, fmt)
        if manifest is not None:
            for f in files:
                manifest.add_input(f)
    elif "system" in cfg:
        ds = simulate_spec(cfg["system"])
    else:
        raise UsageError("no training data: give data files or a system section")
    if "trajectories" in dcfg:
        ds = ds.trajectories(dcfg.pop("trajectories"))
    if "subsample" in dcfg:
        ds = D.subsample(ds, int(dcfg.pop("subsample")))
    if dcfg.pop("normalize", False):
        ds = D.normalize(ds, dcfg.pop("equilibrium", np.zeros(ds.dim)))
    dcfg.pop("equilibrium", None)
    if dcfg:
        raise UsageError(f"unknown data options {sorted(dcfg)}")
    return ds


def normalization_of(ds: D.TrajectoryDataset) -> dict | None:
    if ds.scale is None:
        return None
    return {"offset": np.asarray(ds.offset).tolist(), "scale": np.asarray(ds.scale).tolist()}


# -- subcommands -------------------------------------------------------------------------

def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    for a in args.set or []:
        set_dotted(cfg, a)
    for key in ("iterations", "horizon", "neurons"):
        if getattr(args, key) is not None:
            cfg.setdefault("train", {})[key] = getattr(args, key)
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = train_config(cfg)
    manifest = RunManifest("train", cfg, config.seed)
    if args.config:
        manifest.add_input(args.config)
    ds = prepare_data(cfg, args.data, manifest)
    base = make_base(cfg.get("base"), ds)
    lines = []

    def on_iteration(entry):
        lines.append(json.dumps(entry, sort_keys=True))
        if args.verbose:
            print(f"iteration {entry['iteration']}: risk {entry['risk']:.6g}, "
                  f"violations {entry['violation_rate']:.2f}%", file=sys.stderr)

    result = train(config, base, ds, callback=on_iteration)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(result.net, out)
    meta_path = write_json(sidecar(out, ".meta.json"), {
        "base": base.to_dict(), "normalization": normalization_of(ds),
        "train": config.to_dict(), "stopped": result.stopped, "layers": len(result.net)})
    log_path = write_text(sidecar(out, ".log.jsonl"), "\n".join(lines) + ("\n" if lines else ""))
    report = violation_rate(LyapunovCandidate(base, result.net), ds, config.exclusion_radius)
    outputs = [str(out), str(meta_path), str(log_path)]
    if args.figure:
        from .figures import plot_grid, plot_training_log
        outputs.append(str(plot_training_log(result.log, sidecar(out, ".log.png"))))
        if ds.dim == 2:
            cand = LyapunovCandidate(base, result.net)
            grid = evaluate_grid(cand, _data_bounds(ds), (121, 121))
            _, vd = violation_rate(cand, ds, config.exclusion_radius, return_vdot=True)
            outputs.append(str(plot_grid(grid, sidecar(out, ".png"), ds, vd, title="V")))
    manifest.outputs = outputs
    manifest.wall_time = time.perf_counter() - t0
    manifest.write(sidecar(out, ".manifest.json"))
    print(f"trained {len(result.net)} layers ({result.stopped}); training {report}")
    return EXIT_OK


def _data_bounds(ds: D.TrajectoryDataset, pad: float = 0.1):
    lo, hi = ds.x.min(axis=0), ds.x.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    return [(float(a - pad * s), float(b + pad * s)) for a, b, s in zip(lo, hi, span)]


def read_meta(model_path, meta_arg) -> dict:
    path = Path(meta_arg) if meta_arg else sidecar(model_path, ".meta.json")
    if not path.exists():
        if meta_arg:
            raise FileNotFoundError(f"metadata file not found: {path}")
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def load_candidate(args) -> tuple[LyapunovCandidate, dict]:
    if not Path(args.model).exists():
        raise FileNotFoundError(f"model file not found: {args.model}")
    try:
        net = load(args.model)
    except ValueError as exc:
        raise D.DataError(f"{args.model}: {exc}") from None
    meta = read_meta(args.model, args.meta)
    base = make_base(meta.get("base"))
    if args.base:
        base = make_base(json.loads(args.base))
    return LyapunovCandidate(base, net), meta


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cand, meta = load_candidate(args)
    manifest = RunManifest("eval", {"model": args.model, "data": args.data,
                                    "exclusion_radius": args.exclusion_radius}, None)
    manifest.add_input(args.model)
    ds = D.load_trajectories(args.data, args.format)
    for f in args.data:
        manifest.add_input(f)
    norm = meta.get("normalization")
    if norm and not args.raw_coordinates:
        ds = D.apply_normalization(ds, norm["offset"], norm["scale"])
    if ds.dim != cand.net.dim:
        raise D.DataError(f"data dimension {ds.dim} differs from model dimension {cand.net.dim}")
    report, vdot = violation_rate(cand, ds, args.exclusion_radius, return_vdot=True)
    print(report)
    outputs = []
    if args.json:
        doc = report.to_dict()
        doc["points"] = [{"traj_id": int(k), "t": float(t), "vdot": float(v)}
                         for k, t, v in zip(ds.traj_id, ds.t, vdot)]
        outputs.append(str(write_json(args.json, doc)))
    if args.figure:
        from .figures import plot_grid
        grid = evaluate_grid(cand, _data_bounds(ds), (121, 121))
        outputs.append(str(plot_grid(grid, args.figure, ds, vdot, title="evaluation")))
    if args.manifest:
        manifest.outputs = outputs
        manifest.wall_time = time.perf_counter() - t0
        manifest.write(args.manifest)
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    spec = dict(cfg.get("system", {}))
    if args.system:
        spec["kind"] = args.system
    if args.seed is not None:
        spec["seed"] = args.seed
    for a in args.set or []:
        wrapper = {"system": spec}
        set_dotted(wrapper, a if a.startswith("system.") else "system." + a)
        spec = wrapper["system"]
    ds = simulate_spec(spec)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.write_csv(ds, out)
    outputs = [str(out)]
    if args.figure:
        from .figures import plot_dataset
        outputs.append(str(plot_dataset(ds, sidecar(out, ".png"), title=spec.get("kind", ""))))
    manifest = RunManifest("simulate", {"system": spec}, spec.get("seed"))
    if args.config:
        manifest.add_input(args.config)
    manifest.outputs = outputs
    manifest.wall_time = time.perf_counter() - t0
    manifest.write(sidecar(out, ".manifest.json"))
    print(f"wrote {len(ds)} samples in {len(ds.trajectory_ids)} trajectories to {out}")
    return EXIT_OK


def _parse_bounds(text: str) -> list[tuple[float, float]]:
    """``lo1,hi1,lo2,hi2,...`` into per-axis pairs."""
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bounds must be numbers lo1,hi1,lo2,hi2,... (got {text!r})") from None
    if len(vals) < 2 or len(vals) % 2:
        raise UsageError(f"bounds need an even number of values (got {text!r})")
    return [(vals[k], vals[k + 1]) for k in range(0, len(vals), 2)]


def cmd_export(args) -> int:
    t0 = time.perf_counter()
    cand, _ = load_candidate(args)
    bounds = _parse_bounds(args.bounds)
    res = [int(r) for r in args.resolution.split(",")]
    if len(res) == 1:
        res = res * len(bounds)
    if len(bounds) != cand.net.dim:
        raise UsageError(f"model has dimension {cand.net.dim} but {len(bounds)} bounds given")
    f = system_field({"kind": args.field, "seed": args.field_seed}) if args.field else None
    try:
        grid = evaluate_grid(cand, bounds, res, f)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_grid(grid, args.output)
    outputs = [str(args.output)]
    if args.figure:
        from .figures import plot_grid
        outputs.append(str(plot_grid(grid, args.figure, title="V")))
    manifest = RunManifest("export-grid", {"model": args.model, "bounds": bounds,
                                           "resolution": res, "field": args.field}, None)
    manifest.add_input(args.model)
    manifest.outputs = outputs
    manifest.wall_time = time.perf_counter() - t0
    manifest.write(sidecar(args.output, ".manifest.json"))
    print(f"wrote {len(grid.points)} grid nodes to {args.output}")
    return EXIT_OK


# -- LASA protocol --------------------------------------------------------------------

def lasa_split(full: D.TrajectoryDataset, subset: int = LASA_SUBSET):
    """Training subset of the first demonstration and the remaining demos as
    evaluation data, both normalized with the training transform."""
    ids = full.trajectory_ids
    if len(ids) < 2:
        raise D.DataError("LASA protocol needs at least two demonstrations")
    train_ds = D.normalize(D.subsample(full.trajectories(ids[:1]), subset), np.zeros(full.dim))
    test_ds = D.apply_normalization(full.trajectories(ids[1:]), train_ds.offset, train_ds.scale)
    return train_ds, test_ds


def run_lasa_protocol(full: D.TrajectoryDataset, seeds=range(LASA_SEEDS),
                      subset: int = LASA_SUBSET, train_opts: dict | None = None,
                      base: BaseFunction | None = None, model_dir=None) -> dict:
    """Train on a subset of demo 1 once per seed; evaluate on the others.

    Returns per-seed held-out violation rates, their mean and population
    standard deviation and the identity-candidate rate for comparison.
    """
    opts = dict(LASA_TRAIN if train_opts is None else train_opts)
    base = base or BaseFunction.point(0.1)
    train_ds, test_ds = lasa_split(full, subset)
    identity = violation_rate(LyapunovCandidate(base, DiffeoNet(full.dim)), test_ds)
    runs = []
    for seed in seeds:
        config = TrainConfig.from_dict({**opts, "seed": int(seed)})
        result = train(config, base, train_ds)
        cand = LyapunovCandidate(base, result.net)
        report = violation_rate(cand, test_ds, config.exclusion_radius)
        if model_dir is not None:
            save(result.net, Path(model_dir) / f"seed{seed}.json")
        runs.append({"seed": int(seed), "layers": len(result.net), "stopped": result.stopped,
                     "train_violation_rate": result.log[-1]["violation_rate"] if result.log else None,
                     "test": report.to_dict()})
    rates = np.array([r["test"]["violation_rate"] for r in runs])
    return {"runs": runs, "mean": float(rates.mean()), "std": float(rates.std()),
            "identity_violation_rate": identity.violation_rate,
            "subset": subset, "train": opts}


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    for a in args.set or []:
        set_dotted(cfg, a)
    opts = {**LASA_TRAIN, **cfg.get("train", {})}
    base = make_base(cfg.get("base"))
    manifest = RunManifest("bench-lasa", {"train": opts, "base": base.to_dict(),
                                          "seeds": args.seeds, "subset": args.subset}, None)
    out_dir = Path(args.out_dir) if args.out_dir else None
    results = {}
    for path in args.data:
        name = Path(path).stem
        full = D.load_trajectories(path, "lasa_mat_export_csv")
        manifest.add_input(path)
        model_dir = None
        if out_dir is not None:
            model_dir = out_dir / name
            model_dir.mkdir(parents=True, exist_ok=True)
        res = run_lasa_protocol(full, range(args.seeds), args.subset, opts, base, model_dir)
        results[name] = res
        print(f"{name}: {res['mean']:.2f} +- {res['std']:.2f} "
              f"(identity {res['identity_violation_rate']:.2f})")
    if out_dir is not None:
        report = write_json(out_dir / "bench.json", results)
        outputs = [str(report)]
        if args.figure:
            outputs += _bench_figures(args.data, results, out_dir, base)
        manifest.outputs = outputs
        manifest.wall_time = time.perf_counter() - t0
        manifest.write(out_dir / "bench.manifest.json")
    return EXIT_OK


def _bench_figures(paths, results, out_dir: Path, base: BaseFunction) -> list[str]:
    from .figures import plot_grid
    outputs = []
    for path in paths:
        name = Path(path).stem
        full = D.load_trajectories(path, "lasa_mat_export_csv")
        _, test_ds = lasa_split(full, results[name]["subset"])
        net = load(out_dir / name / "seed0.json")
        cand = LyapunovCandidate(base, net)
        _, vd = violation_rate(cand, test_ds, return_vdot=True)
        grid = evaluate_grid(cand, _data_bounds(test_ds), (121, 121))
        outputs.append(str(plot_grid(grid, out_dir / f"{name}.png", test_ds, vd, title=name)))
    return outputs


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="difflyap", description=(
        "Learn diffeomorphic Lyapunov functions from trajectory data."))
    p.add_argument("-v", "--verbose", action="store_true", help="progress output on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from data files or a simulated system")
    t.add_argument("--config", help="YAML or JSON run config (sections seed, data, system, base, train)")
    t.add_argument("--data", nargs="+", help="trajectory CSV files (override data.files)")
    t.add_argument("-o", "--output", required=True, help="model file to write")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--iterations", type=int, help="override train.iterations")
    t.add_argument("--horizon", type=int, help="override train.horizon")
    t.add_argument("--neurons", type=int, help="override train.neurons")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config value, e.g. train.kappa=4 (repeatable)")
    t.add_argument("--figure", action="store_true", help="also render PNG figures next to the model")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="violation report of a model on trajectory data")
    e.add_argument("model", help="model file")
    e.add_argument("data", nargs="+", help="trajectory CSV files")
    e.add_argument("--format", default="generic_csv", choices=["generic_csv", "lasa_mat_export_csv"],
                   help="data file format")
    e.add_argument("--meta", help="metadata file (default: <model stem>.meta.json)")
    e.add_argument("--base", help="base function as JSON, overrides the metadata")
    e.add_argument("--exclusion-radius", type=float, default=DEFAULT_EXCLUSION_RADIUS,
                   help="ignore samples this close to the attractor set")
    e.add_argument("--raw-coordinates", action="store_true",
                   help="do not apply the training normalization to the data")
    e.add_argument("--json", help="write the report with per-point dV/dt as JSON")
    e.add_argument("--figure", help="render a contour plot with the data to this file")
    e.add_argument("--manifest", help="write a run manifest to this file")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="integrate a synthetic system into a dataset CSV")
    s.add_argument("--config", help="config file with a system section")
    s.add_argument("--system", choices=["warped_linear", "two_attractor", "van_der_pol", "linear"],
                   help="system kind (overrides the config)")
    s.add_argument("--seed", type=int, help="warp seed for warped_linear")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a system option, e.g. mu=2 (repeatable)")
    s.add_argument("-o", "--output", required=True, help="dataset CSV to write")
    s.add_argument("--figure", action="store_true", help="also render the trajectories as PNG")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("export-grid", help="tabulate V, |grad V| and optionally dV/dt on a grid")
    g.add_argument("model", help="model file")
    g.add_argument("--bounds", required=True, metavar="LO1,HI1,LO2,HI2",
                   help="axis ranges; write --bounds=-1,1,-1,1 when the first value is negative")
    g.add_argument("--resolution", default="101", help="nodes per axis, e.g. 101 or 101,51")
    g.add_argument("--meta", help="metadata file (default: <model stem>.meta.json)")
    g.add_argument("--base", help="base function as JSON, overrides the metadata")
    g.add_argument("--field", choices=["warped_linear", "two_attractor", "van_der_pol"],
                   help="add the dV/dt column for this system's vector field")
    g.add_argument("--field-seed", type=int, default=0, help="seed for the warped_linear field")
    g.add_argument("-o", "--output", required=True, help="grid file to write")
    g.add_argument("--figure", help="render a contour plot to this file")
    g.set_defaults(func=cmd_export)

    b = sub.add_parser("bench-lasa", help="LASA protocol: train on demo 1, evaluate demos 2-7")
    b.add_argument("data", nargs="+", help="LASA export CSV per shape")
    b.add_argument("--seeds", type=int, default=LASA_SEEDS, help="number of seeds")
    b.add_argument("--subset", type=int, default=LASA_SUBSET, help="training samples from demo 1")
    b.add_argument("--config", help="config with train/base overrides")
    b.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    b.add_argument("--out-dir", help="directory for per-seed models and bench.json")
    b.add_argument("--figure", action="store_true", help="render one contour plot per shape")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"difflyap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, D.DataError) as exc:
        print(f"difflyap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, InverseNotConverged, ArithmeticError, FloatingPointError) as exc:
        print(f"difflyap: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
