"""Text artifact formats: datasets, checkpoints and tracking reports.

Datasets and checkpoints share a header of ``key = value`` lines closed by a
``---`` line. Floats are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import datetime as _dt
from pathlib import Path

import numpy as np

from .control import TrackingReport, report_from_csv, report_to_csv
from .datagen import DataGenConfig, NormStats, RawDataset
from .errors import ParseError, VersionError
from .models import FORWARD_TOPOLOGY, INVERSE_TOPOLOGY, Checkpoint, TrainConfig
from .plant import PlantParams

FORMAT_VERSION = "1"
DATASET_FORMAT = "softarm-dataset"
CHECKPOINT_FORMAT = "softarm-checkpoint"
SEP = "---"
DATASET_COLUMNS = "t,u1,u2,u3,u4,u5,u6,x,y,z"


def _fmt(v):
    return repr(float(v))


def write_header(items):
    lines = []
    for k, v in items.items():
        v = str(v)
        if "\n" in v or " = " in k:
            raise ValueError(f"header entry {k!r} cannot be serialized")
        lines.append(f"{k} = {v}")
    lines.append(SEP)
    return lines


def read_header(lines, expected_format):
    """Parse header lines; returns (dict, index of the first body line)."""
    header = {}
    for n, line in enumerate(lines):
        if line == SEP:
            break
        key, sep, val = line.partition(" = ")
        if not sep:
            raise ParseError("malformed header line", n + 1)
        header[key.strip()] = val
    else:
        raise ParseError("header is not terminated", len(lines))
    if header.get("format") != expected_format:
        raise ParseError(f"not a {expected_format} file (format = {header.get('format')!r})", 1)
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(header.get("format_version"), FORMAT_VERSION)
    return header, n + 1


def _check_format_version(header):
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(header.get("format_version"), FORMAT_VERSION)


# ---------------------------------------------------------------- dataset


def dataset_to_text(ds: RawDataset, run_config=None):
    head = {"format": DATASET_FORMAT, "format_version": FORMAT_VERSION, "frames": len(ds)}
    head.update(ds.plant.to_dict())
    head.update(ds.config.to_dict())
    for k, v in sorted((run_config or {}).items()):
        head[f"run.{k}"] = v
    lines = write_header(head)
    lines.append(DATASET_COLUMNS)
    data = np.column_stack([ds.t, ds.u, ds.p])
    for row in data:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def dataset_from_text(text):
    lines = text.splitlines()
    header, i = read_header(lines, DATASET_FORMAT)
    if i >= len(lines) or lines[i] != DATASET_COLUMNS:
        raise ParseError("missing dataset column header", i + 1)
    rows = []
    for n in range(i + 1, len(lines)):
        parts = lines[n].split(",")
        if len(parts) != 10:
            raise ParseError(f"expected 10 fields, got {len(parts)}", n + 1)
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(str(exc), n + 1) from None
    try:
        expected = int(header["frames"])
    except (KeyError, ValueError):
        raise ParseError("header lacks a valid frame count", 1) from None
    if len(rows) != expected:
        raise ParseError(f"expected {expected} frames, found {len(rows)} (truncated file?)", len(lines))
    a = np.array(rows).reshape(-1, 10)
    plant = PlantParams.from_dict(header)
    cfg = DataGenConfig.from_dict(header)
    run = {k[4:]: v for k, v in header.items() if k.startswith("run.")}
    return RawDataset(a[:, 0].copy(), a[:, 1:7].copy(), a[:, 7:10].copy(), plant, cfg, run)


def save_dataset(path, ds, run_config=None):
    Path(path).write_text(dataset_to_text(ds, run_config))


def load_dataset(path):
    return dataset_from_text(Path(path).read_text())


# ---------------------------------------------------------------- checkpoint


def _topology_str(kind):
    topo = FORWARD_TOPOLOGY if kind == "forward" else INVERSE_TOPOLOGY
    return " ".join(f"{n}:{k}:{i}x{o}" for n, k, i, o in topo)


def checkpoint_to_text(ck: Checkpoint, run_config=None):
    meta = dict(ck.meta)
    meta.setdefault("created", _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    head = {
        "format": CHECKPOINT_FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": ck.kind,
        "topology": _topology_str(ck.kind),
        "plant_fingerprint": ck.plant_fingerprint,
    }
    head.update(ck.config.to_dict())
    head.update(ck.stats.to_dict())
    for k, v in sorted(meta.items()):
        head[f"meta.{k}"] = v
    for k, v in sorted((run_config or {}).items()):
        head[f"run.{k}"] = v
    lines = write_header(head)
    for name in sorted(ck.params):
        a = np.asarray(ck.params[name], dtype=float)
        a2 = a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(1, -1)
        lines.append(f"[{name} {' '.join(str(s) for s in a.shape)}]")
        for row in a2:
            lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parameter_blocks(text):
    """The parameter section of a checkpoint file, verbatim."""
    return text.split("\n" + SEP + "\n", 1)[1]


def checkpoint_from_text(text):
    lines = text.splitlines()
    header, i = read_header(lines, CHECKPOINT_FORMAT)
    kind = header.get("kind")
    if kind not in ("forward", "inverse"):
        raise ParseError(f"unknown checkpoint kind {kind!r}", 1)
    if header.get("topology") != _topology_str(kind):
        raise ParseError("checkpoint topology does not match this build", 1)
    params = {}
    n = i
    while n < len(lines):
        line = lines[n]
        if not (line.startswith("[") and line.endswith("]")):
            raise ParseError("expected a parameter block header", n + 1)
        parts = line[1:-1].split()
        try:
            name, shape = parts[0], tuple(int(s) for s in parts[1:])
        except (IndexError, ValueError):
            raise ParseError("malformed parameter block header", n + 1) from None
        n_rows = shape[0] if len(shape) > 1 else 1
        rows = []
        for r in range(n_rows):
            if n + 1 + r >= len(lines):
                raise ParseError(f"parameter block {name} is truncated", len(lines))
            try:
                rows.append([float(v) for v in lines[n + 1 + r].split(",")])
            except ValueError as exc:
                raise ParseError(str(exc), n + 2 + r) from None
        a = np.array(rows)
        if a.size != int(np.prod(shape)):
            raise ParseError(f"parameter block {name} has {a.size} values, expected shape {shape}", n + 1)
        params[name] = a.reshape(shape)
        n += 1 + n_rows
    topo = FORWARD_TOPOLOGY if kind == "forward" else INVERSE_TOPOLOGY
    expected = {f"{l[0]}.{p}" for l in topo for p in (("Wx", "Wh", "b") if l[1] == "lstm" else ("W", "b"))}
    if set(params) != expected:
        raise ParseError(f"parameter blocks missing or unexpected: {sorted(expected ^ set(params))}")
    try:
        stats = NormStats.from_dict(header)
        cfg = TrainConfig.from_dict(header)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}") from None
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    ck = Checkpoint(kind, params, stats, cfg, header["plant_fingerprint"], meta)
    ck.run_config = {k[4:]: v for k, v in header.items() if k.startswith("run.")}
    return ck


def save_checkpoint(path, ck, run_config=None):
    Path(path).write_text(checkpoint_to_text(ck, run_config))


def load_checkpoint(path):
    return checkpoint_from_text(Path(path).read_text())


# ---------------------------------------------------------------- report


def save_report(path, report: TrackingReport):
    Path(path).write_text(report_to_csv(report))


def load_report(path):
    return report_from_csv(Path(path).read_text())
