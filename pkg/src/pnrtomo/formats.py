"""CSV / JSON readers and writers for POVMs, outcome statistics and reports.

Floats are written as ``%.16e`` so every value round-trips exactly. Files may
start with ``#`` comment lines carrying provenance; readers skip them.
"""

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .detector import N_OUTCOMES, PovmMatrix
from .errors import ParameterError, SchemaError
from .simulator import OutcomeStats

POVM_HEADER = ["m"] + [f"xi{n}" for n in range(N_OUTCOMES)]
STATS_HEADER = ["j", "mean_photons", "gated_pulses"] + [f"c{n}" for n in range(N_OUTCOMES)]
QGRID_HEADER = ["re", "im"] + [f"q{n}" for n in range(N_OUTCOMES)]
OVERLAY_HEADER = ["j", "re", "im"] + [f"q{n}" for n in range(N_OUTCOMES)]


def fmt(x: float) -> str:
    return f"{x:.16e}"


def provenance_line(config_hash: str = "") -> str:
    line = f"# pnrtomo {__version__}"
    if config_hash:
        line += f" config_sha256={config_hash}"
    return line + "\n"


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _csv_rows(path):
    """Yield (line_number, row) for non-comment, non-blank lines."""
    with open(path, newline="") as fh:
        lines = [(i, line) for i, line in enumerate(fh, start=1)]
    body = [(i, line) for i, line in lines if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.reader(line for _, line in body)
    return [(i, row) for (i, _), row in zip(body, reader)]


def write_povm_csv(path, povm: PovmMatrix, config_hash: str = ""):
    buf = _io.StringIO()
    buf.write(provenance_line(config_hash))
    buf.write(",".join(POVM_HEADER) + "\n")
    for m in range(povm.truncation + 1):
        buf.write(",".join([str(m)] + [fmt(v) for v in povm.values[:, m]]) + "\n")
    return _write_text(path, buf.getvalue())


def read_povm_csv(path) -> PovmMatrix:
    rows = _csv_rows(path)
    if not rows:
        raise SchemaError(f"{path}: empty POVM file")
    line, header = rows[0]
    if [h.strip() for h in header] != POVM_HEADER:
        raise SchemaError(f"{path}:{line}: expected header {','.join(POVM_HEADER)}")
    cols = []
    for expected_m, (line, row) in enumerate(rows[1:]):
        try:
            if len(row) != len(POVM_HEADER):
                raise ValueError(f"expected {len(POVM_HEADER)} fields, got {len(row)}")
            if int(row[0]) != expected_m:
                raise ValueError(f"expected m={expected_m}, got {row[0]}")
            cols.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise SchemaError(f"{path}:{line}: bad POVM row: {exc}") from None
    if not cols:
        raise SchemaError(f"{path}: POVM file has no data rows")
    return PovmMatrix(np.array(cols).T)


def write_stats_csv(path, stats: OutcomeStats, config_hash: str = ""):
    buf = _io.StringIO()
    buf.write(provenance_line(config_hash))
    buf.write(",".join(STATS_HEADER) + "\n")
    for j in range(stats.n_probes):
        fields = [str(j), fmt(stats.means[j]), str(int(stats.gated_pulses[j]))]
        fields += [str(int(c)) for c in stats.counts[:, j]]
        buf.write(",".join(fields) + "\n")
    return _write_text(path, buf.getvalue())


def _stats_from_records(path, records):
    """records: list of (location, j, mean, gated, counts, offered-or-None)."""
    if not records:
        raise SchemaError(f"{path}: no probe rows")
    records = sorted(records, key=lambda r: r[1])
    for expected, (where, j, mean, gated, counts, _) in enumerate(records):
        if j != expected:
            raise SchemaError(f"{where}: probe index {j} out of sequence (expected {expected})")
        if not (math.isfinite(mean) and mean >= 0):
            raise SchemaError(f"{where}: mean_photons must be finite and >= 0")
        if len(counts) != N_OUTCOMES or any(c < 0 for c in counts):
            raise SchemaError(f"{where}: need {N_OUTCOMES} nonnegative counts")
        if sum(counts) != gated or gated < 1:
            raise SchemaError(f"{where}: counts sum to {sum(counts)} but gated_pulses is {gated}")
    offered = [r[5] for r in records]
    try:
        return OutcomeStats(
            counts=np.array([r[4] for r in records], dtype=np.int64).T,
            means=np.array([r[2] for r in records]),
            offered_pulses=None if None in offered else np.array(offered),
        )
    except ParameterError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def read_stats_csv(path) -> OutcomeStats:
    rows = _csv_rows(path)
    if not rows:
        raise SchemaError(f"{path}: empty stats file")
    line, header = rows[0]
    if [h.strip() for h in header] != STATS_HEADER:
        raise SchemaError(f"{path}:{line}: expected header {','.join(STATS_HEADER)}")
    records = []
    for line, row in rows[1:]:
        where = f"{path}:{line}"
        try:
            if len(row) != len(STATS_HEADER):
                raise ValueError(f"expected {len(STATS_HEADER)} fields, got {len(row)}")
            records.append(
                (where, int(row[0]), float(row[1]), int(row[2]), [int(c) for c in row[3:]], None)
            )
        except ValueError as exc:
            raise SchemaError(f"{where}: bad stats row: {exc}") from None
    return _stats_from_records(path, records)


def stats_to_dict(stats: OutcomeStats) -> list:
    return [
        {
            "j": j,
            "mean_photons": float(stats.means[j]),
            "gated_pulses": int(stats.gated_pulses[j]),
            "offered_pulses": int(stats.offered_pulses[j]),
            "counts": [int(c) for c in stats.counts[:, j]],
        }
        for j in range(stats.n_probes)
    ]


def read_stats_json(path) -> OutcomeStats:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    probes = doc.get("probes") if isinstance(doc, dict) else None
    if not isinstance(probes, list):
        raise SchemaError(f"{path}: missing 'probes' list")
    records = []
    for i, entry in enumerate(probes):
        where = f"{path}: probes[{i}]"
        try:
            records.append(
                (
                    where,
                    int(entry["j"]),
                    float(entry["mean_photons"]),
                    int(entry["gated_pulses"]),
                    [int(c) for c in entry["counts"]],
                    int(entry["offered_pulses"]) if "offered_pulses" in entry else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: bad entry ({exc!r})") from None
    return _stats_from_records(path, records)


def read_stats(path) -> OutcomeStats:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_stats_json(path)
    return read_stats_csv(path)


def write_json(path, doc: dict):
    return _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_qgrid_csv(path, grid, config_hash: str = ""):
    buf = _io.StringIO()
    buf.write(provenance_line(config_hash))
    buf.write(",".join(QGRID_HEADER) + "\n")
    for iy, y in enumerate(grid.im):
        for ix, x in enumerate(grid.re):
            vals = [fmt(x), fmt(y)] + [fmt(v) for v in grid.values[:, iy, ix]]
            buf.write(",".join(vals) + "\n")
    return _write_text(path, buf.getvalue())


def write_overlay_csv(path, grid, config_hash: str = ""):
    buf = _io.StringIO()
    buf.write(provenance_line(config_hash))
    buf.write(",".join(OVERLAY_HEADER) + "\n")
    for j, x in enumerate(grid.overlay_re):
        vals = [str(j), fmt(x), fmt(0.0)] + [fmt(v) for v in grid.overlay[:, j]]
        buf.write(",".join(vals) + "\n")
    return _write_text(path, buf.getvalue())


def read_qgrid_csv(path):
    """Return (re, im, q) arrays, one entry per mesh point."""
    rows = _csv_rows(path)
    if not rows or [h.strip() for h in rows[0][1]] != QGRID_HEADER:
        raise SchemaError(f"{path}: expected header {','.join(QGRID_HEADER)}")
    data = np.array([[float(v) for v in row] for _, row in rows[1:]])
    return data[:, 0], data[:, 1], data[:, 2:].T
