"""Command-line interface: register, synth, verify, resample."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .boost import (
    BoostError,
    BoostState,
    FieldSampler,
    Problem,
    StopConfig,
    build_standard_sphere,
    extract_map,
    optimize,
)
from .losses import LossWeights, dice_loss, ncc
from .metrics import table_row
from .mesh import TriMesh, icosphere, load_field, load_mesh, save_mesh
from .task import LandmarkSpec, TaskContext, load_landmarks, resample_spec, save_landmarks

log = logging.getLogger("boostsphere")

MODES = ("landmarks", "intensity", "hybrid", "identity-check")
FIELD_NAMES = ("moving", "fixed", "moving_labels", "fixed_labels")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "landmarks"
    moving: str | None = None
    fixed: str | None = None
    landmarks: str | None = None
    fields: dict = field(default_factory=dict)
    weights: str | dict = "task=5,bm=1,folding=20,bs=0.5,bc=0.1,smooth=0.01"
    rings: int = 24
    max_iters: int = 3000
    step_size: float = 1e-2
    seed: int = 0
    out: str = "out"

    def loss_weights(self) -> LossWeights:
        if isinstance(self.weights, dict):
            return LossWeights(**self.weights)
        return LossWeights.parse(self.weights)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        self.loss_weights()
        if self.rings < 2:
            raise ConfigError("rings must be at least 2")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        for name in self.fields:
            if name not in FIELD_NAMES:
                raise ConfigError(f"unknown field name {name!r} (expected one of {', '.join(FIELD_NAMES)})")
        if self.mode in ("landmarks", "hybrid") and not self.landmarks:
            raise ConfigError(f"mode {self.mode!r} needs --landmarks")
        if self.mode in ("intensity", "hybrid"):
            has_int = {"moving", "fixed"} <= set(self.fields)
            has_lab = {"moving_labels", "fixed_labels"} <= set(self.fields)
            if not (has_int or has_lab):
                raise ConfigError(f"mode {self.mode!r} needs --field moving=... and --field fixed=... "
                                  "(or moving_labels/fixed_labels)")
        if self.mode != "identity-check" and not self.moving:
            raise ConfigError("--moving mesh is required")


# ---------------------------------------------------------------------------
# register

def _load_config(args) -> RunConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        base = Path(args.config).parent
        for key in ("moving", "fixed", "landmarks"):
            if data.get(key):
                data[key] = str(base / data[key])
        data["fields"] = {k: str(base / v) for k, v in data.get("fields", {}).items()}
    for key in ("mode", "moving", "fixed", "landmarks", "weights", "rings", "max_iters", "step_size", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    for item in args.field or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--field expects name=path, got {item!r}")
        data.setdefault("fields", {})[name] = path
    unknown = set(data) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def _build_task(cfg: RunConfig) -> tuple[TaskContext, TriMesh]:
    if cfg.mode == "identity-check":
        moving = load_mesh(cfg.moving) if cfg.moving else icosphere(3)
        rng = np.random.default_rng(cfg.seed)
        pts = rng.normal(size=(20, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        return TaskContext(landmarks=LandmarkSpec.from_points(pts, pts), moving_mesh=moving), moving
    moving = load_mesh(cfg.moving)
    fixed = load_mesh(cfg.fixed) if cfg.fixed else moving
    task = TaskContext(moving_mesh=moving, fixed_mesh=fixed)
    if cfg.mode in ("landmarks", "hybrid"):
        task.landmarks = load_landmarks(cfg.landmarks, moving)
    if cfg.mode in ("intensity", "hybrid"):
        f = cfg.fields
        if "moving" in f and "fixed" in f:
            task.moving_field = load_field(f["moving"])
            task.fixed_field = load_field(f["fixed"])
        if "moving_labels" in f and "fixed_labels" in f:
            task.moving_labels = load_field(f["moving_labels"]).astype(np.int64)
            task.fixed_labels = load_field(f["fixed_labels"]).astype(np.int64)
    return task, moving


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def field_metrics(task: TaskContext, deformed_vertices) -> dict:
    """NCC / Dice of the moving data against the fixed data pulled back through the map."""
    out = {}
    if task.has_intensity:
        sampler = FieldSampler(task.fixed_mesh, task.fixed_field)
        out["ncc"] = ncc(task.moving_field, sampler.sample(deformed_vertices))
        out["ncc_identity"] = ncc(task.moving_field, sampler.sample(task.moving_mesh.vertices))
    if task.has_labels:
        P = int(max(task.moving_labels.max(), task.fixed_labels.max())) + 1
        onehot = np.eye(P)[task.fixed_labels]
        sampler = FieldSampler(task.fixed_mesh, onehot)
        pulled = np.argmax(sampler.sample(deformed_vertices), axis=1)
        out["dice"] = 1.0 - dice_loss(task.moving_labels, pulled, P)
    return out


def run_register(cfg: RunConfig, progress_every: int = 0) -> tuple[int, dict]:
    task, moving = _build_task(cfg)
    weights = cfg.loss_weights()
    sphere = build_standard_sphere(cfg.rings)
    problem = Problem(sphere, task, weights)
    state = BoostState.identity(sphere, weights, cfg.step_size)

    def callback(st, ev):
        if progress_every and st.iteration % progress_every == 0:
            log.info("iter %d total %.6g folds %d", st.iteration, ev.total, ev.folds)

    result = optimize(state, problem, StopConfig(max_iters=cfg.max_iters), callback)
    verts, mu = extract_map(result, moving)
    deformed = moving.with_positions(verts)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"deformed": out / "deformed.off", "reference": out / "reference.off",
             "mu": out / "face_mu.csv", "history": out / "loss_history.csv", "report": out / "report.json"}
    save_mesh(deformed, paths["deformed"])
    save_mesh(moving, paths["reference"])
    _write_csv(paths["mu"], ["face", "abs_mu"], ((i, repr(float(m))) for i, m in enumerate(mu)))
    keys = ["iteration", "task", "bm", "folding", "bs", "bc", "smooth", "folds", "total"]
    _write_csv(paths["history"], keys, ([row.get(k, "") for k in keys] for row in result.history))
    if task.landmarks is not None:
        paths["landmarks"] = out / "landmarks.json"
        save_landmarks(task.landmarks, paths["landmarks"])

    row = table_row(moving, deformed, task.landmarks)
    metrics = {"folds": row.folds, "mean_mu": row.mean_mu, "max_mu": row.max_mu,
               "landmark_mse": row.landmark_mse, "chamfer": row.chamfer}
    metrics.update(field_metrics(task, verts))
    report = {
        "config": asdict(cfg),
        "metrics": metrics,
        "in_loop": {
            "total": result.total,
            "breakdown": result.breakdown,
            "standard_folds": result.folds,
            "chart_mu": {"south_mean": float(result.mu_south.mean()), "south_max": float(result.mu_south.max()),
                         "north_mean": float(result.mu_north.mean()), "north_max": float(result.mu_north.max())},
        },
        "iterations": result.iterations,
        "seconds": result.seconds,
        "converged": result.converged,
        "failed": bool(result.failed or row.folds > 0),
        "history": result.history[::max(1, len(result.history) // 200)],
        "paths": {k: str(v) for k, v in paths.items()},
    }
    paths["report"].write_text(json.dumps(report, indent=1, default=float))
    return (2 if report["failed"] else 0), report


def cmd_register(args) -> int:
    cfg = _load_config(args)
    code, report = run_register(cfg, progress_every=args.progress)
    m = report["metrics"]
    print(f"iterations={report['iterations']} seconds={report['seconds']:.1f} folds={m['folds']} "
          f"mean|mu|={m['mean_mu']:.6g} max|mu|={m['max_mu']:.6g} total={report['in_loop']['total']:.6g}")
    if code == 2:
        print("registration finished with folded faces", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.case == "twist":
        case = synth.twist_case(args.n, seed=args.seed)
        mode, fields = "landmarks", {}
    elif args.case == "i-to-c":
        case = synth.i_to_c_case()
        mode, fields = "hybrid", {"moving": "moving.csv", "fixed": "fixed.csv"}
    else:
        case = synth.random_smooth_field(seed=args.seed)
        mode, fields = "intensity", {"moving": "moving.csv", "fixed": "fixed.csv"}
    paths = case.write(out)
    config = {"mode": mode, "moving": "moving.off", "fixed": "fixed.off", "fields": fields}
    if "landmarks" in paths:
        config["landmarks"] = "landmarks.json"
    (out / "config.json").write_text(json.dumps(config, indent=1))
    print(json.dumps(paths, indent=1))
    return 0


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args) -> int:
    spec = None
    stored = None
    if args.report:
        report = json.loads(Path(args.report).read_text())
        p = report["paths"]
        reference = load_mesh(p["reference"])
        deformed = load_mesh(p["deformed"])
        if "landmarks" in p:
            spec = load_landmarks(p["landmarks"], reference)
        stored = report["metrics"]
    else:
        if not (args.reference and args.deformed):
            raise ConfigError("verify needs --report or both --reference and --deformed")
        reference = load_mesh(args.reference)
        deformed = load_mesh(args.deformed)
        if args.landmarks:
            spec = load_landmarks(args.landmarks, reference)
    if reference.n_vertices != deformed.n_vertices or not np.array_equal(reference.faces, deformed.faces):
        print("error: deformed mesh does not share the reference connectivity", file=sys.stderr)
        return 1
    row = table_row(reference, deformed, spec)
    print(row.format("verify"))
    if stored is not None:
        diffs = [abs(getattr(row, k) - stored[k]) for k in ("folds", "mean_mu", "max_mu", "landmark_mse", "chamfer")
                 if stored.get(k) is not None and getattr(row, k) is not None]
        print(f"max deviation from report: {max(diffs, default=0.0):.3g}")
    if args.json:
        print(json.dumps(row.as_dict()))
    return 0 if (row.folds == 0 and row.max_mu < 1) else 2


# ---------------------------------------------------------------------------
# resample

def cmd_resample(args) -> int:
    spec = load_landmarks(args.spec)
    new, R = resample_spec(spec, args.points)
    if args.out:
        save_landmarks(new, args.out)
    else:
        print(json.dumps({**new.to_json(), "rotation": R.tolist()}))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boostsphere", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="optimize a sphere self-map")
    r.add_argument("--config", help="JSON file with RunConfig keys; command-line values override it")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--moving")
    r.add_argument("--fixed")
    r.add_argument("--landmarks")
    r.add_argument("--field", action="append", metavar="NAME=PATH",
                   help="per-vertex field; names: " + ", ".join(FIELD_NAMES))
    r.add_argument("--weights", help="e.g. task=5,bm=1,folding=20,bs=0.5,bc=0.1,smooth=0.01")
    r.add_argument("--rings", type=int)
    r.add_argument("--max-iters", dest="max_iters", type=int)
    r.add_argument("--step-size", dest="step_size", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--progress", type=int, default=0, help="log every N iterations")
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("synth", help="generate a synthetic case")
    s.add_argument("--case", choices=("twist", "i-to-c", "random-smooth-field"), required=True)
    s.add_argument("--n", type=int, default=2, choices=(2, 3, 4))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("verify", help="recompute quality metrics of a result")
    v.add_argument("--report")
    v.add_argument("--reference")
    v.add_argument("--deformed")
    v.add_argument("--landmarks")
    v.add_argument("--json", action="store_true", help="also print the row as JSON")
    v.set_defaults(func=cmd_verify)

    q = sub.add_parser("resample", help="resample landmark curves and align them by rotation")
    q.add_argument("--spec", required=True)
    q.add_argument("--points", type=int, default=60)
    q.add_argument("--out")
    q.set_defaults(func=cmd_resample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # surfaced to the shell as exit code 1
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
