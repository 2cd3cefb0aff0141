"""Dataset loading, missingness masks, normalization and CV splits."""
from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, InvalidArgument, ParseError, SplitError

MISSING_TOKENS = ("?", "", "NA", "NaN")
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class DatasetWithMask:
    """Rows, missingness mask (True = missing), optional labels.

    ``norm`` holds the per-column (shift, scale) already applied, so that
    original = values * scale + shift.
    """

    values: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None
    norm: dict | None = None
    label_names: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.mask = np.atleast_2d(np.asarray(self.mask, dtype=bool))
        if self.values.shape != self.mask.shape:
            raise InvalidArgument("values and mask shapes differ")
        if not np.all(np.isfinite(self.values[~self.mask])):
            raise InvalidArgument("observed entries must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[0],):
                raise InvalidArgument("one label per row required")
            if self.labels.size and self.labels.min() < 0:
                raise InvalidArgument("labels must be non-negative")
        if self.norm is not None:
            scale = np.asarray(self.norm["scale"], dtype=np.float64)
            if np.any(scale <= 0):
                raise InvalidArgument("normalization scales must be positive")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels is not None and self.labels.size else 0

    def missing_fraction(self):
        return float(self.mask.mean()) if self.mask.size else 0.0

    def with_nan(self):
        """Values with NaN at missing cells."""
        return np.where(self.mask, np.nan, self.values)

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return DatasetWithMask(self.values[idx], self.mask[idx], labels, self.norm,
                               list(self.label_names))

    def replace(self, values=None, mask=None):
        return DatasetWithMask(self.values if values is None else values,
                               self.mask if mask is None else mask,
                               self.labels, self.norm, list(self.label_names))

    # serialization ----------------------------------------------------------

    def to_dict(self):
        vals = np.where(self.mask, 0.0, self.values)
        return {
            "values": vals.tolist(),
            "mask": self.mask.astype(int).tolist(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "norm": None if self.norm is None else {
                "scheme": self.norm["scheme"],
                "shift": np.asarray(self.norm["shift"]).tolist(),
                "scale": np.asarray(self.norm["scale"]).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc):
        mask = np.array(doc["mask"], dtype=bool)
        values = np.array(doc["values"], dtype=np.float64).reshape(mask.shape)
        values[mask] = np.nan
        norm = doc.get("norm")
        if norm is not None:
            norm = {"scheme": norm["scheme"], "shift": np.array(norm["shift"], dtype=np.float64),
                    "scale": np.array(norm["scale"], dtype=np.float64)}
        return cls(values, mask, doc.get("labels"), norm)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# CSV


def load_csv(path, missing_tokens=MISSING_TOKENS, label_column=None, delimiter=",",
             header=False, drop_columns=()):
    """Parse delimited text into a DatasetWithMask.

    ``label_column`` and ``drop_columns`` are column indices (or names when
    ``header`` is true). Labels are integer-encoded by first appearance.
    """
    tokens = {t.strip() for t in missing_tokens}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)]
    rows = [r for r in rows if any(c.strip() for c in r)]
    names = None
    if header and rows:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise EmptyDataset("no data rows in file")
    width = len(rows[0])

    def resolve(col):
        if isinstance(col, str):
            if names is None or col not in names:
                raise ParseError(f"unknown column {col!r}")
            return names.index(col)
        if not -width <= col < width:
            raise ParseError(f"unknown column {col}")
        return col % width

    label_idx = None if label_column is None else resolve(label_column)
    drop = {resolve(c) for c in drop_columns}
    keep = [j for j in range(width) if j != label_idx and j not in drop]

    values = np.empty((len(rows), len(keep)))
    mask = np.zeros((len(rows), len(keep)), dtype=bool)
    labels = [] if label_idx is not None else None
    codes: dict[str, int] = {}
    line0 = 2 if header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", row=i + line0)
        for out_j, j in enumerate(keep):
            cell = row[j].strip()
            if cell in tokens:
                mask[i, out_j] = True
                values[i, out_j] = np.nan
                continue
            try:
                values[i, out_j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=i + line0, column=j + 1) from None
            if not np.isfinite(values[i, out_j]):
                raise ParseError(f"non-finite cell {cell!r}", row=i + line0, column=j + 1)
        if labels is not None:
            lab = row[label_idx].strip()
            if lab in tokens:
                raise ParseError("missing label", row=i + line0, column=label_idx + 1)
            labels.append(codes.setdefault(lab, len(codes)))
    names_out = sorted(codes, key=codes.get)
    return DatasetWithMask(values, mask, labels, None, names_out)


# --------------------------------------------------------------------------
# IDX


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path):
    """Read an IDX file (unsigned byte payload); returns a uint8 array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ParseError("truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise ParseError(f"unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    payload = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if payload.size != int(np.prod(dims)):
        raise ParseError("IDX payload size does not match header")
    return payload.reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    head = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(head + array.tobytes())


def load_images(images, labels=None, n=None, seed=0):
    """Image data set from IDX files or a CSV fallback (label first, pixels after).

    Pixels are flattened row-major. When ``n`` is given, a seeded subsample
    of that many rows is kept (in increasing index order).
    """
    if str(images).endswith((".csv", ".csv.gz")):
        opener = gzip.open if str(images).endswith(".gz") else open
        with opener(images, "rt") as fh:
            arr = np.loadtxt(fh, delimiter=",", ndmin=2)
        lab, pix = arr[:, 0].astype(np.int64), arr[:, 1:]
    else:
        img = read_idx(images)
        pix = img.reshape(img.shape[0], -1).astype(np.float64)
        lab = read_idx(labels).astype(np.int64) if labels is not None else None
        if lab is not None and lab.shape[0] != pix.shape[0]:
            raise ParseError("image and label counts differ")
    if n is not None and n < pix.shape[0]:
        idx = np.sort(np.random.default_rng(seed).choice(pix.shape[0], size=n, replace=False))
        pix = pix[idx]
        lab = lab[idx] if lab is not None else None
    return DatasetWithMask(pix, np.zeros(pix.shape, dtype=bool), lab)


# --------------------------------------------------------------------------
# masks


@dataclass
class MaskPolicy:
    kind: str = "as-is"
    p: float = 0.0
    h: int = 0
    w_patch: int = 0
    grid_h: int = 0
    grid_w: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("as-is", "mcar", "patch"):
            raise InvalidArgument(f"unknown mask policy {self.kind!r}")
        if self.kind == "mcar" and not 0.0 <= self.p < 1.0:
            raise InvalidArgument("mcar probability must lie in [0, 1)")
        if self.kind == "patch":
            if not (0 < self.h <= self.grid_h and 0 < self.w_patch <= self.grid_w):
                raise InvalidArgument("patch must fit inside the grid")

    def to_dict(self):
        return dict(self.__dict__)


def apply_mask(data, policy):
    """Add missing cells according to ``policy``; never unmasks a cell."""
    if policy.kind == "as-is":
        return data.replace()
    rng = np.random.default_rng(policy.seed)
    mask = data.mask.copy()
    if policy.kind == "mcar":
        mask |= rng.random(mask.shape) < policy.p
    else:
        if data.d != policy.grid_h * policy.grid_w:
            raise InvalidArgument(f"patch policy needs {policy.grid_h}x{policy.grid_w} grid data, "
                                  f"got width {data.d}")
        tops = rng.integers(0, policy.grid_h - policy.h + 1, size=data.n)
        lefts = rng.integers(0, policy.grid_w - policy.w_patch + 1, size=data.n)
        grid = mask.reshape(data.n, policy.grid_h, policy.grid_w)
        for i, (t, l) in enumerate(zip(tops, lefts)):
            grid[i, t:t + policy.h, l:l + policy.w_patch] = True
    values = np.where(mask, np.nan, data.values)
    return data.replace(values=values, mask=mask)


# --------------------------------------------------------------------------
# normalization


def normalize(data, scheme="zscore"):
    """Per-column scaling from observed entries only; constant columns get scale 1."""
    if scheme not in ("minmax01", "zscore"):
        raise InvalidArgument(f"unknown normalization {scheme!r}")
    obs = ~data.mask
    vals = np.where(obs, data.values, 0.0)
    count = obs.sum(axis=0)
    shift = np.zeros(data.d)
    scale = np.ones(data.d)
    for j in range(data.d):
        col = vals[obs[:, j], j]
        if col.size == 0:
            continue
        if scheme == "minmax01":
            lo, hi = col.min(), col.max()
            shift[j] = lo
            scale[j] = hi - lo
        else:
            shift[j] = col.mean()
            scale[j] = col.std()
    scale[(scale <= 0) | (count == 0)] = 1.0
    out = np.where(obs, (vals - shift) / scale, np.nan)
    return DatasetWithMask(out, data.mask.copy(), data.labels, {"scheme": scheme, "shift": shift,
                                                                "scale": scale},
                           list(data.label_names))


def apply_normalization(data, norm):
    """Apply stored (shift, scale) from another data set (e.g. test with train stats)."""
    obs = ~data.mask
    out = np.where(obs, (np.where(obs, data.values, 0.0) - norm["shift"]) / norm["scale"], np.nan)
    return DatasetWithMask(out, data.mask.copy(), data.labels, dict(norm), list(data.label_names))


def denormalize(data):
    if data.norm is None:
        return data.replace()
    obs = ~data.mask
    out = np.where(obs, np.where(obs, data.values, 0.0) * data.norm["scale"] + data.norm["shift"],
                   np.nan)
    return DatasetWithMask(out, data.mask.copy(), data.labels, None, list(data.label_names))


# --------------------------------------------------------------------------
# splits


def kfold_split(data, folds, stratified=False, seed=0):
    """Seeded k-fold partition; returns a list of (train_idx, test_idx)."""
    n = data.n if hasattr(data, "n") else len(data)
    if folds < 2 or folds > n:
        raise SplitError(f"need 2 <= folds <= {n}, got {folds}")
    rng = np.random.default_rng(seed)
    assign = np.empty(n, dtype=np.int64)
    if stratified:
        labels = data.labels
        if labels is None:
            raise SplitError("stratified split needs labels")
        offset = 0
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            if idx.size < folds:
                raise SplitError(f"class {c} has {idx.size} rows, fewer than {folds} folds")
            idx = rng.permutation(idx)
            # continue the round-robin across classes so fold sizes stay balanced
            assign[idx] = (np.arange(idx.size) + offset) % folds
            offset = (offset + idx.size) % folds
    else:
        perm = rng.permutation(n)
        assign[perm] = np.arange(n) % folds
    return [(np.flatnonzero(assign != f), np.flatnonzero(assign == f)) for f in range(folds)]


__all__ = [
    "DatasetWithMask", "MaskPolicy", "MISSING_TOKENS", "load_csv", "read_idx", "write_idx",
    "load_images", "apply_mask", "normalize", "apply_normalization", "denormalize",
    "kfold_split",
]
