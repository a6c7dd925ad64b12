"""File formats: binary model/truth artifacts and long-format CSV.

The binary container is a magic string, a little-endian uint64 manifest
length, a UTF-8 JSON manifest, then the raw array payloads in manifest
order — float64/complex128/int64, little-endian, row-major, complex
values interleaved re/im.  Arrays round-trip bit-exactly.  The manifest
carries ``format`` (artifact kind) and ``format_version``; loading
refuses a different major version.

CSV panels and curve tables use the long format ``subject,curve,time,
value`` with 1-based subject/curve indices, a header row, UTF-8, LF
newlines, and shortest round-trippable decimals.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import FrequencyGrid, ObservationSet, TimeGrid
from .filters import FilterBank
from .scores import ScoreArray, ScoreLayout
from .simgen import SimConfig, TruthPanel
from .tasks import FittedModel

__all__ = [
    "DataFormatError",
    "FORMAT_VERSION",
    "MODEL_FORMAT",
    "TRUTH_FORMAT",
    "TruthArtifact",
    "write_container",
    "read_container",
    "save_model",
    "load_model",
    "save_truth",
    "load_truth",
    "write_panel_csv",
    "read_panel_csv",
    "write_curves_csv",
    "read_curves_csv",
]

MAGIC = b"SMPCABIN"
FORMAT_VERSION = "1.0"
MODEL_FORMAT = "spectral-mpca-model"
TRUTH_FORMAT = "spectral-mpca-truth"

_DTYPES = {"<f8": np.dtype("<f8"), "<c16": np.dtype("<c16"), "<i8": np.dtype("<i8")}


class DataFormatError(ValueError):
    """Malformed or incompatible file contents."""


def _dtype_tag(a: np.ndarray) -> str:
    if np.issubdtype(a.dtype, np.complexfloating):
        return "<c16"
    if np.issubdtype(a.dtype, np.integer):
        return "<i8"
    if np.issubdtype(a.dtype, np.floating):
        return "<f8"
    raise DataFormatError(f"unsupported array dtype {a.dtype}")


def write_container(path, kind: str, manifest: dict, arrays: dict) -> None:
    """Write one artifact: JSON manifest plus named arrays, in order."""
    meta = []
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _dtype_tag(arr)
        out = np.ascontiguousarray(arr.astype(_DTYPES[tag], copy=False))
        meta.append({"name": name, "dtype": tag, "shape": list(arr.shape)})
        payload.append(out.tobytes())
    head = {"format": kind, "format_version": FORMAT_VERSION}
    head.update(manifest)
    head["arrays"] = meta
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def read_container(path, kind: str | None = None):
    """Read an artifact back; returns (manifest, dict of arrays)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}: not a recognized artifact file")
    (blob_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + blob_len > len(data):
        raise DataFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start : start + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable manifest ({exc})") from exc
    version = str(manifest.get("format_version", ""))
    major = version.split(".", 1)[0]
    if major != FORMAT_VERSION.split(".", 1)[0]:
        raise DataFormatError(
            f"{path}: format version {version!r} is incompatible with "
            f"{FORMAT_VERSION} (major version must match)"
        )
    if kind is not None and manifest.get("format") != kind:
        raise DataFormatError(
            f"{path}: expected a {kind!r} artifact, found {manifest.get('format')!r}"
        )
    offset = start + blob_len
    arrays = {}
    for meta in manifest.get("arrays", []):
        tag = meta["dtype"]
        if tag not in _DTYPES:
            raise DataFormatError(f"{path}: unknown dtype tag {tag!r}")
        dt = _DTYPES[tag]
        shape = tuple(int(s) for s in meta["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * dt.itemsize
        if end > len(data):
            raise DataFormatError(f"{path}: truncated payload for {meta['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
        arrays[meta["name"]] = arr.reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise DataFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return manifest, arrays


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def save_model(model: FittedModel, path) -> None:
    """Write a fitted model; array fields round-trip bit-exactly."""
    layout = model.scores.layout
    manifest = {
        "dims": {
            "n_subjects": model.n_subjects,
            "n_curves": layout.n_curves,
            "n_components": model.n_components,
            "n_time_points": model.time_grid.size,
            "n_frequencies": model.freq_grid.size,
        },
        "max_lags": list(model.bank.max_lags),
        "lag_window": int(model.lag_window),
        "diagnostics": _jsonable(model.diagnostics),
    }
    arrays = {
        "time_points": model.time_grid.points,
        "time_weights": model.time_grid.weights,
        "freq_points": model.freq_grid.points,
        "freq_weights": model.freq_grid.weights,
        "means": model.means,
        "noise_variances": model.noise_variances,
        "eta": model.eta,
        "filters": np.concatenate(model.bank.filters, axis=0),
        "scores": model.scores.flat,
    }
    write_container(path, MODEL_FORMAT, manifest, arrays)


def load_model(path) -> FittedModel:
    """Rebuild a fitted model saved by :func:`save_model`."""
    manifest, arrays = read_container(path, MODEL_FORMAT)
    try:
        dims = manifest["dims"]
        max_lags = tuple(int(L) for L in manifest["max_lags"])
        tgrid = TimeGrid(arrays["time_points"], arrays["time_weights"])
        fgrid = FrequencyGrid(arrays["freq_points"], arrays["freq_weights"])
        splits = np.cumsum([2 * L + 1 for L in max_lags])[:-1]
        bank = FilterBank(tgrid, tuple(np.split(arrays["filters"], splits)), max_lags)
        layout = ScoreLayout(int(dims["n_subjects"]), int(dims["n_curves"]), max_lags)
        return FittedModel(
            time_grid=tgrid,
            freq_grid=fgrid,
            means=arrays["means"],
            bank=bank,
            noise_variances=arrays["noise_variances"],
            eta=arrays["eta"],
            scores=ScoreArray(layout, arrays["scores"]),
            lag_window=int(manifest["lag_window"]),
            diagnostics=manifest.get("diagnostics", {}),
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise DataFormatError(f"{path}: inconsistent model artifact ({exc})") from exc


@dataclass(frozen=True)
class TruthArtifact:
    """Latent curves saved alongside a simulated panel, for scoring."""

    config: SimConfig
    site_grid: TimeGrid
    n_total_curves: int
    curves: np.ndarray  # (p, n_total_curves, n_sites)
    noise_scale: np.ndarray  # (p,)


def save_truth(panel: TruthPanel, path) -> None:
    """Write the latent truth of a simulated panel (curves and config)."""
    manifest = {
        "sim_config": _jsonable(dataclasses.asdict(panel.config)),
        "n_total_curves": int(panel.n_total_curves),
    }
    arrays = {
        "site_points": panel.site_grid.points,
        "site_weights": panel.site_grid.weights,
        "curves": panel.curves,
        "noise_scale": panel.noise_scale,
    }
    write_container(path, TRUTH_FORMAT, manifest, arrays)


def load_truth(path) -> TruthArtifact:
    """Rebuild the truth artifact saved by :func:`save_truth`."""
    manifest, arrays = read_container(path, TRUTH_FORMAT)
    try:
        raw = dict(manifest["sim_config"])
        for key in ("max_lags", "rho", "n_range", "edge_bounds"):
            raw[key] = tuple(raw[key])
        cfg = SimConfig(**raw)
        return TruthArtifact(
            config=cfg,
            site_grid=TimeGrid(arrays["site_points"], arrays["site_weights"]),
            n_total_curves=int(manifest["n_total_curves"]),
            curves=arrays["curves"],
            noise_scale=arrays["noise_scale"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: inconsistent truth artifact ({exc})") from exc


CSV_HEADER = "subject,curve,time,value"


def _format_float(x: float) -> str:
    return repr(float(x))


def write_panel_csv(obs: ObservationSet, path) -> None:
    """Write observations as ``subject,curve,time,value`` rows (1-based)."""
    lines = [CSV_HEADER]
    for i in range(obs.n_subjects):
        for j in range(obs.n_curves):
            t, v = obs.times[i][j], obs.values[i][j]
            for a in range(t.size):
                lines.append(
                    f"{i + 1},{j + 1},{_format_float(t[a])},{_format_float(v[a])}"
                )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_rows(path):
    """Shared CSV row parser: yields (subject, curve, time, value)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if [c.strip() for c in header.split(",")] != CSV_HEADER.split(","):
            raise DataFormatError(
                f"{path}: expected header {CSV_HEADER!r}, found {header!r}"
            )
        rows = []
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{ln}: expected 4 fields")
            try:
                subject, curve = int(parts[0]), int(parts[1])
                time, value = float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc}") from exc
            if subject < 1 or curve < 1:
                raise DataFormatError(
                    f"{path}:{ln}: subject and curve indices are 1-based"
                )
            rows.append((subject, curve, time, value))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return rows


def read_panel_csv(path) -> ObservationSet:
    """Read a long-format observation panel back into memory.

    Rows may appear in any order; every subject must cover curves
    1..J (curves with no rows become empty).  Within a curve, readings
    are kept in file order.
    """
    rows = _parse_rows(path)
    n_subj = max(r[0] for r in rows)
    n_curv = max(r[1] for r in rows)
    times = [[[] for _ in range(n_curv)] for _ in range(n_subj)]
    values = [[[] for _ in range(n_curv)] for _ in range(n_subj)]
    for subject, curve, time, value in rows:
        times[subject - 1][curve - 1].append(time)
        values[subject - 1][curve - 1].append(value)
    return ObservationSet(
        [[np.array(c, float) for c in ti] for ti in times],
        [[np.array(c, float) for c in vi] for vi in values],
    )


def write_curves_csv(curves: np.ndarray, grid: TimeGrid, path, first_curve: int = 1) -> None:
    """Write dense curves (p, n, Mt) as long-format rows; curve indices
    start at ``first_curve`` (e.g. J+1 for forecasts)."""
    curves = np.asarray(curves, float)
    p, n, mt = curves.shape
    if mt != grid.size:
        raise DataFormatError("curve array does not match the grid")
    lines = [CSV_HEADER]
    for i in range(p):
        for j in range(n):
            for a in range(mt):
                lines.append(
                    f"{i + 1},{first_curve + j},{_format_float(grid.points[a])},"
                    f"{_format_float(curves[i, j, a])}"
                )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curves_csv(path, grid: TimeGrid, tol: float = 1e-8):
    """Read dense curves written by :func:`write_curves_csv`.

    Every listed (subject, curve) must cover each grid point exactly
    once.  Returns (sorted 1-based curve indices, (p, n, Mt) array).
    """
    rows = _parse_rows(path)
    n_subj = max(r[0] for r in rows)
    curve_ids = sorted({r[1] for r in rows})
    index = {c: j for j, c in enumerate(curve_ids)}
    out = np.full((n_subj, len(curve_ids), grid.size), np.nan)
    pts = grid.points
    for subject, curve, time, value in rows:
        a = int(np.searchsorted(pts, time))
        hit = None
        for b in (a - 1, a, a + 1):
            if 0 <= b < pts.size and abs(pts[b] - time) <= tol:
                hit = b
                break
        if hit is None:
            raise DataFormatError(f"{path}: time {time!r} is not a grid point")
        out[subject - 1, index[curve], hit] = value
    if np.isnan(out).any():
        raise DataFormatError(f"{path}: incomplete curve coverage on the grid")
    return np.array(curve_ids, dtype=int), out
