"""On-disk formats, feature containers, pooling and sampling.

Formats handled here:

* Binary feature matrix, magic ``DELF``: u16 version (1), u8 dtype code
  (0 = f32, 1 = f64), u8 reserved (0), u64 row count, u64 column count,
  every integer little-endian, followed by the row-major payload.
  Sample ids live in an optional UTF-8 sidecar ``<path>.ids`` holding
  one id per line; without the sidecar ids default to the row index.
* CSV feature matrix: ``id,v_1,...,v_d`` with no header row by default.
* Binary feature-map tensor, magic ``DELM``: the DELF header with a
  third u64 axis (rows, channels, spatial cells), used as input to
  global average pooling.
* Label manifest: CSV with header ``id,style,genre``; an empty cell
  marks the id as unlabeled in that column.
* Cluster assignments: CSV with header ``id,cluster,q_0..q_{k-1}``
  where the soft-assignment columns are optional.

Everything is float64 in memory; f32 payloads are widened on read and
narrowed again only when explicitly written as f32.  Arrays held by the
container types are marked read-only so they can be shared safely.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .rng import Rng

_MAGIC_MATRIX = b"DELF"
_MAGIC_MAPS = b"DELM"
_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_NAMES = {"f32": 0, "f64": 1}


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=np.float64)
    out.setflags(write=False)
    return out


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        pos = ", ".join(str(int(i)) for i in bad)
        raise DataError(f"{what} contains a non-finite value at ({pos})")


def default_ids(n: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(n))


def _check_ids(ids: Sequence[str], n: int) -> tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    if len(ids) != n:
        raise DataError(f"expected {n} ids, got {len(ids)}")
    if len(set(ids)) != len(ids):
        seen = set()
        for i in ids:
            if i in seen:
                raise DataError(f"duplicate id {i!r}")
            seen.add(i)
    for i in ids:
        if not i or "\n" in i or "\r" in i:
            raise DataError(f"invalid id {i!r}: ids must be non-empty single-line strings")
    return ids


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable (n, d) float64 matrix with one opaque id per row."""

    values: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"feature matrix must be 2-d, got shape {values.shape}")
        n, d = values.shape
        if n < 1 or d < 1:
            raise DataError(f"feature matrix must be at least 1x1, got {n}x{d}")
        _check_finite(values, "feature matrix")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "ids", _check_ids(self.ids, n))

    @classmethod
    def from_array(cls, values: np.ndarray, ids: Sequence[str] | None = None) -> "FeatureMatrix":
        values = np.asarray(values, dtype=np.float64)
        if ids is None:
            ids = default_ids(values.shape[0]) if values.ndim == 2 else ()
        return cls(values=values, ids=tuple(ids))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def row_index(self) -> dict[str, int]:
        return {i: r for r, i in enumerate(self.ids)}


@dataclass(frozen=True)
class FeatureMapBlock:
    """Immutable (n, c, s) tensor of per-channel spatial cells."""

    values: np.ndarray
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise DataError(f"feature map block must be 3-d, got shape {values.shape}")
        n = values.shape[0]
        if n < 1:
            raise DataError("feature map block must hold at least one row")
        _check_finite(values, "feature map block")
        object.__setattr__(self, "values", _freeze(values))
        ids = self.ids if self.ids else default_ids(n)
        object.__setattr__(self, "ids", _check_ids(ids, n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def c(self) -> int:
        return self.values.shape[1]

    @property
    def s(self) -> int:
        return self.values.shape[2]


def global_average_pool(block: FeatureMapBlock) -> FeatureMatrix:
    """Collapse each channel's spatial cells to their mean.

    The result is the (n, c) matrix fed to the autoencoder; each output
    value is bounded by the min and max of the cells it averages.
    """
    if block.s == 0:
        raise DataError("cannot pool feature maps with zero spatial cells")
    if block.c == 0:
        raise DataError("cannot pool feature maps with zero channels")
    pooled = block.values.mean(axis=2)
    return FeatureMatrix(values=pooled, ids=block.ids)


# ---------------------------------------------------------------------------
# binary containers


def _pack_header(magic: bytes, dtype_code: int, dims: Sequence[int]) -> bytes:
    return magic + struct.pack("<HBB", _VERSION, dtype_code, 0) + b"".join(
        struct.pack("<Q", dim) for dim in dims
    )


def _read_exact(data: bytes, offset: int, size: int, path: str, what: str) -> bytes:
    if offset + size > len(data):
        raise FormatError(
            f"{path}: truncated {what} at byte offset {offset}: "
            f"need {size} bytes, have {len(data) - offset}"
        )
    return data[offset : offset + size]


def _parse_header(data: bytes, path: str, magic: bytes, n_dims: int):
    off = 0
    got = _read_exact(data, off, 4, path, "magic")
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r} at byte offset 0, expected {magic!r}")
    off = 4
    (version,) = struct.unpack("<H", _read_exact(data, off, 2, path, "version"))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    off = 6
    dtype_code = data[off]
    if dtype_code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {dtype_code} at byte offset 6")
    off = 7
    if data[off] != 0:
        raise FormatError(f"{path}: reserved byte must be 0 at byte offset 7")
    off = 8
    dims = []
    for _ in range(n_dims):
        (dim,) = struct.unpack("<Q", _read_exact(data, off, 8, path, "dimension"))
        if dim == 0:
            raise FormatError(f"{path}: zero dimension at byte offset {off}")
        dims.append(dim)
        off += 8
    return _DTYPE_CODES[dtype_code], tuple(dims), off


def _read_payload(data: bytes, off: int, dtype: np.dtype, dims: tuple[int, ...], path: str):
    count = 1
    for dim in dims:
        count *= dim
    expected = count * dtype.itemsize
    if len(data) - off != expected:
        raise FormatError(
            f"{path}: payload size mismatch at byte offset {off}: "
            f"expected {expected} bytes, found {len(data) - off}"
        )
    flat = np.frombuffer(data, dtype=dtype, count=count, offset=off)
    return flat.astype(np.float64).reshape(dims)


def _read_id_sidecar(path: str, n: int) -> tuple[str, ...] | None:
    sidecar = path + ".ids"
    try:
        with open(sidecar, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        return None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != n:
        raise FormatError(f"{sidecar}: expected {n} id lines, found {len(lines)}")
    return tuple(lines)


def _write_id_sidecar(path: str, ids: tuple[str, ...]) -> None:
    sidecar = path + ".ids"
    if ids == default_ids(len(ids)):
        return
    with open(sidecar, "w", encoding="utf-8", newline="") as fh:
        for i in ids:
            fh.write(i + "\n")


def _infer_format(path: str) -> str:
    lowered = path.lower()
    if lowered.endswith(".csv"):
        return "csv"
    if lowered.endswith(".delf"):
        return "binary"
    raise ConfigError(
        f"cannot infer feature format from {path!r}; pass format='binary' or 'csv'"
    )


def read_features(path: str, fmt: str = "auto", header: bool = False) -> FeatureMatrix:
    """Read a feature matrix from a DELF binary or CSV file."""
    if fmt == "auto":
        fmt = _infer_format(path)
    if fmt == "binary":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"features file not found: {path}")
        dtype, (n, d), off = _parse_header(data, path, _MAGIC_MATRIX, 2)
        values = _read_payload(data, off, dtype, (n, d), path)
        ids = _read_id_sidecar(path, n) or default_ids(n)
        return FeatureMatrix(values=values, ids=ids)
    if fmt == "csv":
        return _read_features_csv(path, header)
    raise ConfigError(f"unknown feature format {fmt!r}")


def _read_features_csv(path: str, header: bool) -> FeatureMatrix:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError(f"features file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if header and rows:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise FormatError(f"{path}: row 1 has no feature columns")
    ids = []
    values = np.empty((len(rows), width - 1), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f"{path}: row {r + 1} has {len(row)} columns, expected {width}"
            )
        ids.append(row[0])
        for c, cell in enumerate(row[1:]):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}: row {r + 1}, column {c + 2}: cannot parse {cell!r} as a number"
                )
    return FeatureMatrix(values=values, ids=tuple(ids))


def write_features(
    matrix: FeatureMatrix, path: str, fmt: str = "auto", dtype: str = "f64"
) -> None:
    """Write a feature matrix; binary f64 writes round-trip bit-exactly."""
    if fmt == "auto":
        fmt = _infer_format(path)
    if fmt == "binary":
        if dtype not in _DTYPE_NAMES:
            raise ConfigError(f"unknown payload dtype {dtype!r}")
        code = _DTYPE_NAMES[dtype]
        payload = np.ascontiguousarray(matrix.values, dtype=_DTYPE_CODES[code])
        with open(path, "wb") as fh:
            fh.write(_pack_header(_MAGIC_MATRIX, code, (matrix.n, matrix.d)))
            fh.write(payload.tobytes(order="C"))
        _write_id_sidecar(path, matrix.ids)
        return
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for i, row in zip(matrix.ids, matrix.values):
                writer.writerow([i] + [repr(float(v)) for v in row])
        return
    raise ConfigError(f"unknown feature format {fmt!r}")


def read_feature_maps(path: str) -> FeatureMapBlock:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"feature map file not found: {path}")
    dtype, (n, c, s), off = _parse_header(data, path, _MAGIC_MAPS, 3)
    values = _read_payload(data, off, dtype, (n, c, s), path)
    ids = _read_id_sidecar(path, n) or default_ids(n)
    return FeatureMapBlock(values=values, ids=ids)


def write_feature_maps(block: FeatureMapBlock, path: str, dtype: str = "f64") -> None:
    if dtype not in _DTYPE_NAMES:
        raise ConfigError(f"unknown payload dtype {dtype!r}")
    code = _DTYPE_NAMES[dtype]
    payload = np.ascontiguousarray(block.values, dtype=_DTYPE_CODES[code])
    with open(path, "wb") as fh:
        fh.write(_pack_header(_MAGIC_MAPS, code, (block.n, block.c, block.s)))
        fh.write(payload.tobytes(order="C"))
    _write_id_sidecar(path, block.ids)


# ---------------------------------------------------------------------------
# label manifests


_MANIFEST_HEADER = ["id", "style", "genre"]


@dataclass(frozen=True)
class LabelManifest:
    """Optional style and genre labels keyed by sample id.

    Class indices are dense from 0 in sorted class-name order, so the
    same manifest always produces the same integer labels.
    """

    rows: tuple[tuple[str, str | None, str | None], ...]

    def __post_init__(self):
        ids = [r[0] for r in self.rows]
        _check_ids(ids, len(ids))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r[0] for r in self.rows)

    def _column(self, column: str) -> dict[str, str]:
        if column == "style":
            pairs = ((r[0], r[1]) for r in self.rows)
        elif column == "genre":
            pairs = ((r[0], r[2]) for r in self.rows)
        else:
            raise ConfigError(f"unknown label column {column!r}")
        return {i: v for i, v in pairs if v is not None}

    def class_names(self, column: str) -> tuple[str, ...]:
        return tuple(sorted(set(self._column(column).values())))

    def label_map(self, column: str) -> dict[str, int]:
        """id -> dense class index for the ids labeled in that column."""
        names = {name: idx for idx, name in enumerate(self.class_names(column))}
        return {i: names[v] for i, v in self._column(column).items()}


def read_label_manifest(path: str) -> LabelManifest:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError(f"label manifest not found: {path}")
    with fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != _MANIFEST_HEADER:
        raise FormatError(f"{path}: first row must be the header 'id,style,genre'")
    out = []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"{path}: row {r} has {len(row)} columns, expected 3")
        out.append((row[0], row[1] or None, row[2] or None))
    if not out:
        raise FormatError(f"{path}: manifest holds no rows")
    return LabelManifest(rows=tuple(out))


def write_label_manifest(manifest: LabelManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_MANIFEST_HEADER)
        for i, style, genre in manifest.rows:
            writer.writerow([i, style or "", genre or ""])


def labels_for(
    manifest: LabelManifest,
    matrix: FeatureMatrix,
    column: str,
    require_cover: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense class indices for the matrix rows labeled in the manifest.

    Returns (row_indices, class_indices) covering exactly the labeled
    rows.  With require_cover=True every matrix row must be labeled.
    """
    mapping = manifest.label_map(column)
    rows = []
    classes = []
    for r, i in enumerate(matrix.ids):
        if i in mapping:
            rows.append(r)
            classes.append(mapping[i])
        elif require_cover:
            raise DataError(f"id {i!r} has no {column} label")
    return np.array(rows, dtype=np.int64), np.array(classes, dtype=np.int64)


# ---------------------------------------------------------------------------
# cluster assignments


@dataclass(frozen=True)
class ClusterAssignments:
    """Hard labels and optional soft assignment rows keyed by id."""

    ids: tuple[str, ...]
    hard: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        hard = np.asarray(self.hard, dtype=np.int64)
        n = hard.shape[0]
        object.__setattr__(self, "ids", _check_ids(self.ids, n))
        if hard.ndim != 1:
            raise DataError("hard labels must be 1-d")
        if n < 1:
            raise DataError("assignments must hold at least one row")
        if hard.min() < 0:
            raise DataError("hard labels must be non-negative")
        q = self.q
        if q is not None:
            q = np.asarray(q, dtype=np.float64)
            if q.ndim != 2 or q.shape[0] != n:
                raise DataError(f"soft assignments must be (n, k), got {q.shape}")
            _check_finite(q, "soft assignments")
            if q.min() < 0:
                raise DataError("soft assignments must be non-negative")
            sums = q.sum(axis=1)
            off = np.abs(sums - 1.0)
            if off.max() > 1e-9:
                row = int(np.argmax(off))
                raise DataError(
                    f"soft assignment row {row} sums to {sums[row]!r}, expected 1"
                )
            if hard.max() >= q.shape[1]:
                raise DataError("hard label exceeds soft assignment width")
            q = _freeze(q)
        hard.setflags(write=False)
        object.__setattr__(self, "hard", hard)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.hard.shape[0]

    @property
    def k(self) -> int:
        if self.q is not None:
            return self.q.shape[1]
        return int(self.hard.max()) + 1


def write_assignments(assignments: ClusterAssignments, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["id", "cluster"]
        if assignments.q is not None:
            header += [f"q_{j}" for j in range(assignments.q.shape[1])]
        writer.writerow(header)
        for r in range(assignments.n):
            row = [assignments.ids[r], str(int(assignments.hard[r]))]
            if assignments.q is not None:
                row += [repr(float(v)) for v in assignments.q[r]]
            writer.writerow(row)


def read_assignments(path: str) -> ClusterAssignments:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError(f"assignments file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["id", "cluster"]:
        raise FormatError(f"{path}: header must start with 'id,cluster'")
    q_cols = header[2:]
    for j, name in enumerate(q_cols):
        if name != f"q_{j}":
            raise FormatError(f"{path}: unexpected soft assignment column {name!r}")
    ids = []
    hard = []
    q_rows = [] if q_cols else None
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: row {r} has {len(row)} columns, expected {len(header)}")
        ids.append(row[0])
        try:
            hard.append(int(row[1]))
        except ValueError:
            raise FormatError(f"{path}: row {r}: cannot parse cluster {row[1]!r}")
        if q_rows is not None:
            try:
                q_rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise FormatError(f"{path}: row {r}: cannot parse soft assignments")
    if not ids:
        raise FormatError(f"{path}: no data rows")
    q = np.array(q_rows, dtype=np.float64) if q_rows is not None else None
    return ClusterAssignments(ids=tuple(ids), hard=np.array(hard, dtype=np.int64), q=q)


# ---------------------------------------------------------------------------
# sampling


def stratified_sample(
    matrix: FeatureMatrix,
    labels: Mapping[str, object],
    fraction: float,
    seed: int,
) -> FeatureMatrix:
    """Deterministic per-class sample keeping original row order.

    Each class contributes round(fraction * class_count) rows (half up).
    Every matrix id must appear in the label mapping.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"sample fraction must be in (0, 1], got {fraction}")
    missing = [i for i in matrix.ids if i not in labels]
    if missing:
        raise DataError(f"id {missing[0]!r} has no label for stratified sampling")
    by_class: dict[str, list[int]] = {}
    for r, i in enumerate(matrix.ids):
        by_class.setdefault(str(labels[i]), []).append(r)
    rng = Rng(seed)
    chosen: list[int] = []
    for cls in sorted(by_class):
        rows = by_class[cls]
        want = int(np.floor(fraction * len(rows) + 0.5))
        want = min(want, len(rows))
        if want == 0:
            continue
        pool = list(rows)
        for i in range(want):
            j = i + rng.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        chosen.extend(pool[:want])
    if not chosen:
        raise DataError("stratified sample selected no rows; fraction too small")
    chosen.sort()
    values = matrix.values[chosen]
    ids = tuple(matrix.ids[r] for r in chosen)
    return FeatureMatrix(values=values, ids=ids)
