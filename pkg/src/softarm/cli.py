"""Command-line entry point: ``softarm <command> [options]``.

Configuration is resolved in three layers. A ``key = value`` file given by
``--config`` comes first. Command-line flags override it. The ``SOFTARM_SEED``
environment variable overrides the seed from either. The resolved
configuration is written into the header of every artifact produced.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import artifacts as art
from .control import (
    KINDS,
    HARDWARE_TRACKING_MM,
    TrajectorySpec,
    WorkspaceBox,
    gen_planar_trajectory,
    report_metrics,
    report_svg,
    track,
    trajectory_waypoints,
)
from .datagen import DataGenConfig, generate_dataset
from .errors import (
    CompatibilityError,
    ConfigError,
    DependencyError,
    ParseError,
    PartialAblationError,
    SoftArmError,
)
from .models import (
    VARIANTS,
    TrainConfig,
    canonical_variant,
    evaluate_forward,
    evaluate_inverse_on_plant,
    train_forward,
    train_inverse,
)
from .plant import PlantParams

SEED_ENV = "SOFTARM_SEED"
SHORT = {"f+i": "i", "f+i+c": "ic", "f+c": "c"}
# Mean tracking error (mm) per loss setting on the physical arm; shown, never asserted.
HARDWARE_TABLE_MM = {"f+i": 43.94, "f+i+c": 36.03, "f+c": 30.47}
DEFAULT_SEEDS = (1, 2, 3)
ABLATION_COLUMNS = ["variant", "seed", "mean", "std", "max", "n"]


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class RunConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    data: DataGenConfig = field(default_factory=DataGenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_waypoints: int = 60
    scale: float = 0.6
    out: str = "runs"
    seed: int = 0

    def to_dict(self):
        d = {"out": self.out, "seed": str(self.seed)}
        d.update(self.plant.to_dict())
        d.update(self.data.to_dict())
        d.update(self.train.to_dict())
        d["traj.n_waypoints"] = str(self.n_waypoints)
        d["traj.scale"] = repr(float(self.scale))
        return d

    @property
    def out_dir(self):
        return Path(self.out)


def read_config_file(path):
    items = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: line {n}: expected 'key = value'")
        items[key.strip()] = val.strip()
    return items


KNOWN_PREFIXES = ("plant.", "datagen.", "train.", "traj.")


def resolve_config(args, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    items = read_config_file(args.config) if getattr(args, "config", None) else {}
    for k in items:
        if not (k.startswith(KNOWN_PREFIXES) or k in ("out", "seed")):
            raise ConfigError(f"unknown config key {k!r}")
    try:
        plant_d = PlantParams().to_dict()
        plant_d.update({k: v for k, v in items.items() if k.startswith("plant.")})
        plant = PlantParams.from_dict(plant_d)
        data = DataGenConfig.from_dict(items)
        train = TrainConfig.from_dict(items)
        n_wp = int(items.get("traj.n_waypoints", 60))
        scale = float(items.get("traj.scale", 0.6))
        seed = int(items["seed"]) if "seed" in items else None
    except (ValueError, SoftArmError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    out = items.get("out", "runs")

    if getattr(args, "out", None):
        out = args.out
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if getattr(args, "frames", None) is not None:
        data = replace(data, total_frames=args.frames)
    if getattr(args, "lam", None) is not None:
        train = replace(train, lam=args.lam)
    if getattr(args, "loss", None):
        train = replace(train, variant=canonical_variant(args.loss))
    if environ.get(SEED_ENV):
        try:
            seed = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if seed is not None:
        data = replace(data, seed=seed)
        train = replace(train, seed=seed)
    else:
        seed = data.seed
    if data.total_frames < 10:
        raise ConfigError("need at least 10 frames")
    return RunConfig(plant, data, train, n_wp, scale, out, seed)


# ---------------------------------------------------------------- file layout


def data_path(cfg):
    return cfg.out_dir / "data.csv"


def forward_path(cfg):
    return cfg.out_dir / "forward.ckpt"


def inverse_path(cfg, variant, seed=None):
    tag = SHORT[canonical_variant(variant)]
    name = f"inverse-{tag}.ckpt" if seed is None else f"inverse-{tag}-s{seed}.ckpt"
    return cfg.out_dir / name


def _require(path, what):
    if not Path(path).exists():
        raise DependencyError(f"{what} not found at {path}; run the step that produces it first")
    return Path(path)


def write_loss_curve(path, history):
    keys = []
    for row in history:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    Path(path).write_text(buf.getvalue())


def _save_ckpt(path, ck, cfg):
    path.parent.mkdir(parents=True, exist_ok=True)
    art.save_checkpoint(path, ck, cfg.to_dict())
    write_loss_curve(path.with_suffix(".loss.csv"), ck.history)


def _load_data(cfg):
    ds = art.load_dataset(_require(data_path(cfg), "dataset"))
    if ds.plant.fingerprint() != cfg.plant.fingerprint():
        raise CompatibilityError("dataset was generated with different plant parameters than the current config")
    return ds


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg, args):
    ds = generate_dataset(cfg.plant, cfg.data)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    art.save_dataset(data_path(cfg), ds, cfg.to_dict())
    box = WorkspaceBox.from_positions(ds.p)
    print(f"wrote {len(ds)} frames to {data_path(cfg)}")
    print("workspace box (mm): " + "  ".join(f"{a} [{l:.1f}, {h:.1f}]" for a, l, h in zip("xyz", box.lo, box.hi)))
    return 0


def _train_forward(cfg, args):
    ds = _load_data(cfg)
    ck = train_forward(ds, cfg.train, epochs=getattr(args, "epochs", None))
    _save_ckpt(forward_path(cfg), ck, cfg)
    rep = evaluate_forward(ck, ds, "val")
    diag = WorkspaceBox.from_positions(ds.p).diagonal
    print(f"wrote {forward_path(cfg)} (best epoch {ck.meta['best_epoch']})")
    print(f"validation RMSE {rep.rmse:.3f} mm ({100 * rep.rmse / diag:.2f}% of workspace diagonal)")
    return ck


def _train_inverse(cfg, args, variant=None, seed=None, fwd=None, ds=None):
    ds = ds or _load_data(cfg)
    fwd = fwd or art.load_checkpoint(_require(forward_path(cfg), "forward checkpoint"))
    tc = cfg.train if variant is None else replace(cfg.train, variant=variant)
    if seed is not None:
        tc = replace(tc, seed=seed)
    ck = train_inverse(ds, fwd, tc, epochs=getattr(args, "epochs", None))
    path = inverse_path(cfg, tc.variant, seed)
    _save_ckpt(path, ck, replace(cfg, train=tc))
    return ck, path


def cmd_train(cfg, args):
    if args.kind == "forward":
        _train_forward(cfg, args)
        return 0
    ck, path = _train_inverse(cfg, args)
    print(f"wrote {path} (variant {ck.config.variant}, best epoch {ck.meta['best_epoch']}, "
          f"forward {ck.meta['forward_fingerprint']})")
    return 0


def cmd_eval(cfg, args):
    ds = _load_data(cfg)
    fwd = art.load_checkpoint(_require(forward_path(cfg), "forward checkpoint"))
    box = WorkspaceBox.from_positions(ds.p)
    rep = evaluate_forward(fwd, ds, "val")
    tr = ds.train_split().p
    va = ds.val_split().p[3:]
    base = float(np.sqrt(np.mean(np.sum((va - tr.mean(axis=0)) ** 2, axis=1))))
    print(f"forward validation RMSE {rep.rmse:.3f} mm over {rep.n} samples; per axis "
          + " ".join(f"{v:.3f}" for v in rep.rmse_axis))
    print(f"workspace diagonal {box.diagonal:.1f} mm; model {100 * rep.rmse / box.diagonal:.2f}%, "
          f"mean predictor {100 * base / box.diagonal:.2f}%")
    for v in VARIANTS:
        p = inverse_path(cfg, v)
        if p.exists():
            err = evaluate_inverse_on_plant(art.load_checkpoint(p), ds, "val")
            print(f"inverse {v:6s} plant error on validation targets: mean {err.mean():.3f} mm, max {err.max():.3f} mm")
    return 0


def _kinds(traj):
    return list(KINDS) if traj in (None, "all") else [traj]


def _track_one(cfg, ck, box, kind, labels):
    planar, wp = trajectory_waypoints(kind, box, cfg.n_waypoints, cfg.scale)
    lab = {"trajectory": kind, "variant": ck.config.variant, **labels}
    return planar, track(cfg.plant, ck, wp, labels=lab)


def cmd_track(cfg, args):
    ds = _load_data(cfg)
    path = Path(args.checkpoint) if args.checkpoint else inverse_path(cfg, cfg.train.variant)
    ck = art.load_checkpoint(_require(path, "inverse checkpoint"))
    if ck.kind != "inverse":
        raise CompatibilityError(f"{path} is a {ck.kind} checkpoint; tracking needs an inverse one")
    box = WorkspaceBox.from_positions(ds.p)
    all_err = []
    tag = SHORT[ck.config.variant]
    for kind in _kinds(args.traj):
        planar, rep = _track_one(cfg, ck, box, kind, {"checkpoint": str(path)})
        stem = cfg.out_dir / f"track-{tag}-{kind}"
        art.save_report(stem.with_suffix(".csv"), rep)
        stem.with_suffix(".svg").write_text(report_svg(planar, rep))
        mean, std, mx = report_metrics(rep)
        print(f"{kind:8s} mean {mean:7.3f}  std {std:7.3f}  max {mx:7.3f} mm  -> {stem}.csv")
        all_err.append(rep.errors)
    if len(all_err) > 1:
        mean, std, mx = report_metrics(np.concatenate(all_err))
        print(f"{'all':8s} mean {mean:7.3f}  std {std:7.3f}  max {mx:7.3f} mm")
    ref = HARDWARE_TRACKING_MM
    print(f"reference (physical arm): mean {ref['mean']}  std {ref['std']}  max {ref['max']} mm")
    return 0


# ---------------------------------------------------------------- ablation


def _ablation_cell(cfg, variant, seed, epochs):
    """Train one inverse variant for one seed and track all four shapes."""
    ds = art.load_dataset(data_path(cfg))
    fwd = art.load_checkpoint(forward_path(cfg))
    ns = argparse.Namespace(epochs=epochs)
    ck, path = _train_inverse(cfg, ns, variant, seed, fwd, ds)
    box = WorkspaceBox.from_positions(ds.p)
    errs = []
    for kind in KINDS:
        planar, rep = _track_one(cfg, ck, box, kind, {"seed": str(seed)})
        stem = cfg.out_dir / "ablation" / f"track-{SHORT[variant]}-s{seed}-{kind}"
        stem.parent.mkdir(parents=True, exist_ok=True)
        art.save_report(stem.with_suffix(".csv"), rep)
        stem.with_suffix(".svg").write_text(report_svg(planar, rep))
        errs.append(rep.errors)
    e = np.concatenate(errs)
    mean, std, mx = report_metrics(e)
    return {"variant": variant, "seed": seed, "mean": mean, "std": std, "max": mx, "n": len(e)}


def write_ablation_csv(path, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in ABLATION_COLUMNS})
    Path(path).write_text(buf.getvalue())


def read_ablation_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for n, r in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append({"variant": r["variant"], "seed": int(r["seed"]), "mean": float(r["mean"]),
                             "std": float(r["std"]), "max": float(r["max"]), "n": int(r["n"])})
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad ablation row: {exc}", n) from None
    return rows


def ablation_summary(rows):
    """Median over seeds of each variant's mean/std/max, plus the ordering verdict."""
    summary = {}
    for v in VARIANTS:
        sel = [r for r in rows if r["variant"] == v]
        if sel:
            summary[v] = {k: float(np.median([r[k] for r in sel])) for k in ("mean", "std", "max")}
    ok = len(summary) == 3 and summary["f+c"]["mean"] < summary["f+i+c"]["mean"] < summary["f+i"]["mean"]
    gain = 1 - summary["f+c"]["mean"] / summary["f+i"]["mean"] if len(summary) == 3 else float("nan")
    return summary, bool(ok), gain


def format_ablation(rows, summary, ok, gain):
    lines = [f"{'variant':8s} {'seed':>4s} {'mean':>9s} {'std':>9s} {'max':>9s}"]
    for r in rows:
        lines.append(f"{r['variant']:8s} {r['seed']:4d} {r['mean']:9.3f} {r['std']:9.3f} {r['max']:9.3f}")
    for v, s in summary.items():
        lines.append(f"{v:8s} {'med':>4s} {s['mean']:9.3f} {s['std']:9.3f} {s['max']:9.3f}")
    lines.append("reference mean errors on the physical arm (not asserted):")
    for v, m in HARDWARE_TABLE_MM.items():
        lines.append(f"  {v:8s} {m:.2f} mm")
    lines.append(f"ordering f+c < f+i+c < f+i: {'PASS' if ok else 'FAIL'}")
    lines.append(f"f+c improvement over f+i: {100 * gain:.1f}% ({'PASS' if gain >= 0.10 else 'FAIL'} at 10%)")
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg, args):
    seeds = args.seeds or list(DEFAULT_SEEDS)
    if not data_path(cfg).exists():
        cmd_gen_data(cfg, args)
    if not forward_path(cfg).exists():
        _train_forward(cfg, argparse.Namespace(epochs=None))
    cells = [(v, s) for s in seeds for v in VARIANTS]
    rows, failures = [], []
    epochs = getattr(args, "epochs", None)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futs = [(c, pool.submit(_ablation_cell, cfg, *c, epochs)) for c in cells]
            for c, f in futs:
                try:
                    rows.append(f.result())
                except Exception as exc:  # noqa: BLE001 - reported as a partial table
                    failures.append((c, exc))
    else:
        for c in cells:
            try:
                rows.append(_ablation_cell(cfg, *c, epochs))
            except Exception as exc:  # noqa: BLE001
                failures.append((c, exc))
            else:
                r = rows[-1]
                print(f"{r['variant']:6s} seed {r['seed']}: mean {r['mean']:.3f} mm", flush=True)
    order = {v: i for i, v in enumerate(VARIANTS)}
    rows.sort(key=lambda r: (r["seed"], order[r["variant"]]))
    csv_path = cfg.out_dir / "ablation.csv"
    write_ablation_csv(csv_path, rows)
    if failures:
        done = [(r["variant"], r["seed"]) for r in rows]
        msg = "; ".join(f"{v}/seed {s}: {e}" for (v, s), e in failures)
        raise PartialAblationError(f"ablation incomplete ({msg}); completed cells: {done}", done)
    # the verdict is computed from the emitted file, not from memory
    rows = read_ablation_csv(csv_path)
    summary, ok, gain = ablation_summary(rows)
    text = format_ablation(rows, summary, ok, gain)
    (cfg.out_dir / "ablation.txt").write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- plot


def _loss_curve_svg(path, size=480):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParseError("empty loss curve", 1)
    cols = [c for c in rows[0] if c != "epoch"]
    series = {c: [(int(r["epoch"]), float(r[c])) for r in rows if r.get(c) not in (None, "")] for c in cols}
    vals = [np.log10(max(v, 1e-300)) for s in series.values() for _, v in s]
    lo, hi = min(vals), max(vals)
    span = max(hi - lo, 1e-9)
    last = max(int(r["epoch"]) for r in rows) or 1
    pad = 30
    palette = ["red", "green", "blue", "black", "orange", "purple"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             '<rect width="100%" height="100%" fill="white"/>']
    for i, (name, pts) in enumerate(series.items()):
        xy = [(pad + (size - 2 * pad) * e / last, size - pad - (size - 2 * pad) * (np.log10(max(v, 1e-300)) - lo) / span)
              for e, v in pts]
        color = palette[i % len(palette)]
        d = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
        parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad}" y="{14 + 12 * i}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(cfg, args):
    for name in args.files:
        path = Path(name)
        if not path.exists():
            raise DependencyError(f"{path} not found")
        if path.name.endswith(".loss.csv"):
            svg = _loss_curve_svg(path)
        else:
            rep = art.load_report(path)
            kind = rep.labels.get("trajectory")
            planar = gen_planar_trajectory(TrajectorySpec(kind, len(rep))) if kind in KINDS else np.zeros((0, 2))
            svg = report_svg(planar, rep)
        out = path.with_suffix(".svg")
        out.write_text(svg)
        print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="softarm",
        description="Synthetic soft-arm plant, forward/inverse kinematics training and trajectory tracking.",
        epilog=f"Environment: {SEED_ENV}=N overrides the seed from the config file and --seed. "
        "Exit codes: 0 ok, 1 error, 2 usage/config, 3 missing dependency, 4 incompatible artifacts, "
        "5 partial ablation.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("--frames", type=int, help="number of frames to generate")
    common.add_argument("--loss", choices=["i", "ic", "c"], help="inverse loss: f+i, f+i+c or f+c")
    common.add_argument("--lambda", dest="lam", type=float, metavar="X", help="consistency weight")
    common.add_argument("--out", metavar="DIR", help="output directory (default: runs)")
    common.add_argument("--epochs", type=int, help="override the epoch budget of the phase being trained")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the excitation dataset")
    t = sub.add_parser("train", parents=[common], help="train the forward or an inverse model")
    t.add_argument("kind", choices=["forward", "inverse"])
    sub.add_parser("eval", parents=[common], help="report forward RMSE and inverse plant error")
    tr = sub.add_parser("track", parents=[common], help="track planar trajectories with an inverse model")
    tr.add_argument("--traj", choices=[*KINDS, "all"], default="all")
    tr.add_argument("--checkpoint", metavar="PATH", help="inverse checkpoint (default: from --loss)")
    ab = sub.add_parser("ablate", parents=[common], help="compare the three loss settings over seeds")
    ab.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], metavar="1,2,3")
    ab.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    pl = sub.add_parser("plot", parents=[common], help="render report or loss-curve CSV files as SVG")
    pl.add_argument("files", nargs="+")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "track": cmd_track,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except SoftArmError as exc:
        print(f"softarm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"softarm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
