"""Bilevel problem definitions, datasets and partitioning.

A distributed bilevel problem has ``N`` workers.  Worker ``i`` owns an
upper-level objective ``G_i(x_i, y_i)`` and a lower-level objective
``g_i(v, y')``.  The master holds the consensus copies ``v`` (length
``n``) and ``z`` (length ``m``).

Every problem exposes per-worker values and first derivatives plus the
mixed second-derivative products of ``g_i`` needed to linearize the lower
level in ``v``::

    mixed_jvp(i, vbar, y, dv) = d/dv [grad_y g_i](vbar, y) @ dv      (m-vector)
    mixed_vjp(i, vbar, y, u)  = d/dv [grad_y g_i](vbar, y).T @ u     (n-vector)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, DatasetFormatError

logger = logging.getLogger(__name__)

__all__ = [
    "ProblemDims",
    "BilevelProblem",
    "QuadraticToy",
    "HyperCleaning",
    "RegCoef",
    "Dataset",
    "CorruptionRecord",
    "upper_sum",
    "make_quadratic_toy",
    "make_hypercleaning",
    "make_regcoef",
    "corrupt_labels",
    "load_dataset",
    "partition_dataset",
    "train_val_split",
    "make_synthetic_classification",
]


@dataclass(frozen=True)
class ProblemDims:
    N: int
    n: int
    m: int

    def __post_init__(self):
        for name in ("N", "n", "m"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


class BilevelProblem:
    """Base class for per-worker bilevel objectives.

    Subclasses implement the values and gradients.  The mixed products
    default to central finite differences so a user problem only has to
    supply first derivatives; the built-in problems override them with
    exact forms.
    """

    dims: ProblemDims

    # upper level, G_i(x_i, y_i)
    def upper_value(self, i, x, y):
        raise NotImplementedError

    def upper_grad_x(self, i, x, y):
        raise NotImplementedError

    def upper_grad_y(self, i, x, y):
        raise NotImplementedError

    # lower level, g_i(v, y')
    def lower_value(self, i, v, y):
        raise NotImplementedError

    def lower_grad_v(self, i, v, y):
        raise NotImplementedError

    def lower_grad_y(self, i, v, y):
        raise NotImplementedError

    def mixed_jvp(self, i, vbar, y, dv):
        dv = np.asarray(dv, dtype=float)
        scale = np.linalg.norm(dv)
        if scale == 0.0:
            return np.zeros(self.dims.m)
        d = dv / scale
        h = 1e-6 * (1.0 + np.linalg.norm(vbar))
        gp = self.lower_grad_y(i, vbar + h * d, y)
        gm = self.lower_grad_y(i, vbar - h * d, y)
        return scale * (gp - gm) / (2.0 * h)

    def mixed_vjp(self, i, vbar, y, u):
        # d/dv <grad_y g, u> == d/ds grad_v g(vbar, y + s u) at s = 0
        u = np.asarray(u, dtype=float)
        scale = np.linalg.norm(u)
        if scale == 0.0:
            return np.zeros(self.dims.n)
        d = u / scale
        h = 1e-6 * (1.0 + np.linalg.norm(y))
        gp = self.lower_grad_v(i, vbar, y + h * d)
        gm = self.lower_grad_v(i, vbar, y - h * d)
        return scale * (gp - gm) / (2.0 * h)

    def lower_sum(self, v, ys):
        return float(sum(self.lower_value(i, v, ys[i]) for i in range(self.dims.N)))


def _check_stack(arr, rows, cols, name):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1 and rows == 1:
        arr = arr.reshape(1, -1)
    if arr.shape != (rows, cols):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({rows}, {cols})")
    return arr


def upper_sum(problem, xs, ys):
    """Total upper objective ``F = sum_i G_i(x_i, y_i)``."""
    d = problem.dims
    xs = _check_stack(xs, d.N, d.n, "x")
    ys = _check_stack(ys, d.N, d.m, "y")
    return float(sum(problem.upper_value(i, xs[i], ys[i]) for i in range(d.N)))


# --------------------------------------------------------------------------
# synthetic quadratic oracle problem


class QuadraticToy(BilevelProblem):
    """``G_i = ||x - a_i||^2 + ||y - b_i||^2``, ``g_i = ||y' - C_i v||^2``."""

    def __init__(self, a, b, C):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.C = np.asarray(C, dtype=float)
        N, n = self.a.shape
        m = self.b.shape[1]
        self.dims = ProblemDims(N, n, m)

    def upper_value(self, i, x, y):
        return float(np.sum((x - self.a[i]) ** 2) + np.sum((y - self.b[i]) ** 2))

    def upper_grad_x(self, i, x, y):
        return 2.0 * (np.asarray(x, dtype=float) - self.a[i])

    def upper_grad_y(self, i, x, y):
        return 2.0 * (np.asarray(y, dtype=float) - self.b[i])

    def lower_value(self, i, v, y):
        r = y - self.C[i] @ v
        return float(r @ r)

    def lower_grad_v(self, i, v, y):
        return -2.0 * self.C[i].T @ (y - self.C[i] @ v)

    def lower_grad_y(self, i, v, y):
        return 2.0 * (np.asarray(y, dtype=float) - self.C[i] @ v)

    def mixed_jvp(self, i, vbar, y, dv):
        return -2.0 * self.C[i] @ np.asarray(dv, dtype=float)

    def mixed_vjp(self, i, vbar, y, u):
        return -2.0 * self.C[i].T @ np.asarray(u, dtype=float)

    def consensus_lower_optimum(self, v):
        """Exact minimizer of ``sum_i ||z - C_i v||^2`` over a shared ``z``."""
        return np.mean(self.C @ np.asarray(v, dtype=float), axis=0)


def make_quadratic_toy(N, n, m, a, b, c):
    """Build a :class:`QuadraticToy` from per-worker coefficients.

    ``a[i]`` is a scalar or ``n``-vector, ``b[i]`` a scalar or
    ``m``-vector and ``c[i]`` either a scalar (meaning ``c * I``, which
    needs ``n == m``) or an ``m x n`` matrix.
    """
    dims = ProblemDims(N, n, m)
    if not (len(a) == len(b) == len(c) == N):
        raise ConfigError(
            f"coefficient lists must have length N={N}, got {len(a)}, {len(b)}, {len(c)}"
        )
    A = np.empty((N, n))
    B = np.empty((N, m))
    Cs = np.empty((N, m, n))
    for i in range(N):
        A[i] = np.broadcast_to(np.asarray(a[i], dtype=float), (n,))
        B[i] = np.broadcast_to(np.asarray(b[i], dtype=float), (m,))
        ci = np.asarray(c[i], dtype=float)
        if ci.ndim == 0:
            if n != m:
                raise ConfigError("scalar c_i requires n == m")
            Cs[i] = float(ci) * np.eye(m)
        elif ci.shape == (m, n):
            Cs[i] = ci
        else:
            raise ConfigError(f"c[{i}] has shape {ci.shape}, expected () or ({m}, {n})")
    prob = QuadraticToy(A, B, Cs)
    assert prob.dims == dims
    return prob


# --------------------------------------------------------------------------
# logistic-loss problems


def _logloss(s, lab):
    return np.logaddexp(0.0, -lab * s)


def _dlogloss(s, lab):
    return -lab * expit(-lab * s)


def _sigmoid_prime(p):
    s = expit(p)
    return s * (1.0 - s)


@dataclass
class _Shard:
    X_tr: np.ndarray
    y_tr: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    index_tr: np.ndarray


def _shards_from(datasets):
    shards = []
    for k, ds in enumerate(datasets):
        tr, val = ds.train(), ds.validation()
        if tr.n_samples == 0 or val.n_samples == 0:
            raise ConfigError(f"worker {k} needs nonempty train and validation shards")
        for part in (tr, val):
            bad = set(np.unique(part.labels)) - {-1, 1}
            if bad:
                raise ConfigError(f"worker {k}: labels must be in {{-1, +1}}, found {sorted(bad)}")
        shards.append(
            _Shard(
                tr.features, tr.labels.astype(float), val.features,
                val.labels.astype(float), tr.index,
            )
        )
    widths = {s.X_tr.shape[1] for s in shards} | {s.X_val.shape[1] for s in shards}
    if len(widths) != 1:
        raise ConfigError(f"inconsistent feature dimensions across shards: {sorted(widths)}")
    return shards


class _ValidationUpper:
    """Upper level shared by both logistic problems: mean validation log-loss of ``y``."""

    shards: list

    def upper_value(self, i, x, y):
        s = self.shards[i]
        return float(np.mean(_logloss(s.X_val @ y, s.y_val)))

    def upper_grad_x(self, i, x, y):
        return np.zeros(self.dims.n)

    def upper_grad_y(self, i, x, y):
        s = self.shards[i]
        return s.X_val.T @ _dlogloss(s.X_val @ y, s.y_val) / len(s.y_val)


class HyperCleaning(_ValidationUpper, BilevelProblem):
    """Distributed data hyper-cleaning.

    ``v`` holds one weight logit per training sample across all workers;
    worker ``i`` reads the slice ``self.slices[i]``.  The lower level is the
    sigmoid-weighted training log-loss plus ``C_r ||w||^2``.
    """

    def __init__(self, datasets, C_r=0.0):
        if C_r < 0:
            raise ConfigError("C_r must be >= 0")
        self.shards = _shards_from(datasets)
        self.C_r = float(C_r)
        sizes = [len(s.y_tr) for s in self.shards]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.slices = [slice(int(offsets[k]), int(offsets[k + 1])) for k in range(len(sizes))]
        self.train_index = np.concatenate([s.index_tr for s in self.shards])
        self.dims = ProblemDims(len(self.shards), int(offsets[-1]), self.shards[0].X_tr.shape[1])

    def lower_value(self, i, v, y):
        s, sl = self.shards[i], self.slices[i]
        loss = _logloss(s.X_tr @ y, s.y_tr)
        return float(np.mean(expit(v[sl]) * loss) + self.C_r * (y @ y))

    def lower_grad_v(self, i, v, y):
        s, sl = self.shards[i], self.slices[i]
        out = np.zeros(self.dims.n)
        out[sl] = _sigmoid_prime(v[sl]) * _logloss(s.X_tr @ y, s.y_tr) / len(s.y_tr)
        return out

    def lower_grad_y(self, i, v, y):
        s, sl = self.shards[i], self.slices[i]
        r = expit(v[sl]) * _dlogloss(s.X_tr @ y, s.y_tr)
        return s.X_tr.T @ r / len(s.y_tr) + 2.0 * self.C_r * y

    def mixed_jvp(self, i, vbar, y, dv):
        s, sl = self.shards[i], self.slices[i]
        r = _sigmoid_prime(vbar[sl]) * np.asarray(dv)[sl] * _dlogloss(s.X_tr @ y, s.y_tr)
        return s.X_tr.T @ r / len(s.y_tr)

    def mixed_vjp(self, i, vbar, y, u):
        s, sl = self.shards[i], self.slices[i]
        out = np.zeros(self.dims.n)
        out[sl] = (
            _sigmoid_prime(vbar[sl]) * _dlogloss(s.X_tr @ y, s.y_tr) * (s.X_tr @ u) / len(s.y_tr)
        )
        return out

    def sample_weights(self, v):
        """``sigmoid(v)`` keyed by original dataset row index."""
        return dict(zip(self.train_index.tolist(), expit(np.asarray(v)).tolist()))


class RegCoef(_ValidationUpper, BilevelProblem):
    """Regularization-coefficient optimization: lower level adds ``sum_k v_k w_k^2``."""

    def __init__(self, datasets):
        self.shards = _shards_from(datasets)
        d = self.shards[0].X_tr.shape[1]
        self.dims = ProblemDims(len(self.shards), d, d)

    def lower_value(self, i, v, y):
        s = self.shards[i]
        return float(np.mean(_logloss(s.X_tr @ y, s.y_tr)) + np.sum(v * y * y))

    def lower_grad_v(self, i, v, y):
        return np.asarray(y, dtype=float) ** 2

    def lower_grad_y(self, i, v, y):
        s = self.shards[i]
        return s.X_tr.T @ _dlogloss(s.X_tr @ y, s.y_tr) / len(s.y_tr) + 2.0 * v * y

    def mixed_jvp(self, i, vbar, y, dv):
        return 2.0 * np.asarray(y) * np.asarray(dv)

    def mixed_vjp(self, i, vbar, y, u):
        return 2.0 * np.asarray(y) * np.asarray(u)


def make_hypercleaning(datasets, C_r=0.0):
    return HyperCleaning(datasets, C_r)


def make_regcoef(datasets):
    return RegCoef(datasets)


# --------------------------------------------------------------------------
# datasets

TRAIN, VALIDATION = "train", "val"


@dataclass
class Dataset:
    """Dense feature matrix with labels, split tags and original row ids."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray = None
    index: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per sample")
        if self.split is None:
            self.split = np.full(self.n_samples, TRAIN, dtype=object)
        else:
            self.split = np.asarray(self.split, dtype=object)
            unknown = set(self.split.tolist()) - {TRAIN, VALIDATION}
            if unknown:
                raise ValueError(f"unknown split tags {sorted(unknown)}")
        if self.index is None:
            self.index = np.arange(self.n_samples)
        else:
            self.index = np.asarray(self.index, dtype=int)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def label_set(self):
        return np.unique(self.labels)

    def subset(self, mask_or_idx):
        return Dataset(
            self.features[mask_or_idx], self.labels[mask_or_idx],
            self.split[mask_or_idx], self.index[mask_or_idx],
        )

    def train(self):
        return self.subset(self.split == TRAIN)

    def validation(self):
        return self.subset(self.split == VALIDATION)


@dataclass
class CorruptionRecord:
    indices: np.ndarray
    rate: float
    seed: int = None

    def __len__(self):
        return len(self.indices)


def corrupt_labels(dataset, rate, seed=None, label_set=None):
    """Replace each training label, with probability ``rate``, by a different class.

    The replacement is drawn uniformly from the *other* labels, so every
    selected sample really changes.  Validation rows are never touched.
    Returned indices are original row ids (``dataset.index``).
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"corruption rate must be in [0, 1], got {rate}")
    classes = np.unique(dataset.labels) if label_set is None else np.asarray(label_set)
    if len(classes) < 2 and rate > 0:
        raise ConfigError("label corruption needs at least two classes")
    rng = np.random.default_rng(seed)
    labels = dataset.labels.copy()
    is_train = dataset.split == TRAIN
    hit = (rng.random(dataset.n_samples) < rate) & is_train
    picks = rng.integers(0, max(len(classes) - 1, 1), size=dataset.n_samples)
    for j in np.flatnonzero(hit):
        others = classes[classes != labels[j]]
        labels[j] = others[picks[j] % len(others)]
    out = Dataset(dataset.features.copy(), labels, dataset.split.copy(), dataset.index.copy())
    return out, CorruptionRecord(dataset.index[hit].copy(), float(rate), seed)


def _parse_label(tok, lineno):
    try:
        val = float(tok.replace("−", "-"))
    except ValueError:
        raise DatasetFormatError(f"bad label {tok!r}", lineno) from None
    return int(val) if val.is_integer() else val


def _parse_float(tok, lineno):
    try:
        return float(tok.replace("−", "-"))
    except ValueError:
        raise DatasetFormatError(f"bad numeric value {tok!r}", lineno) from None


def _load_csv(path, header):
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not c.strip() for c in rec):
                continue
            labels.append(_parse_label(rec[0].strip(), lineno))
            rows.append([_parse_float(c.strip(), lineno) for c in rec[1:]])
            if len(rows[-1]) != len(rows[0]):
                raise DatasetFormatError(
                    f"expected {len(rows[0])} features, found {len(rows[-1])}", lineno
                )
    if not rows:
        raise DatasetFormatError("no samples found")
    return np.array(rows, dtype=float), np.array(labels)


def _load_libsvm(path, n_features):
    entries, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_parse_label(toks[0], lineno))
            feats = {}
            for tok in toks[1:]:
                idx, sep, val = tok.partition(":")
                if not sep or not idx.isdigit() or int(idx) < 1:
                    raise DatasetFormatError(f"bad feature token {tok!r}", lineno)
                feats[int(idx)] = _parse_float(val, lineno)
            entries.append(feats)
    if not entries:
        raise DatasetFormatError("no samples found")
    width = max((max(f) for f in entries if f), default=0)
    if n_features is not None:
        if width > n_features:
            raise DatasetFormatError(f"feature index {width} exceeds n_features={n_features}")
        width = n_features
    X = np.zeros((len(entries), width))
    for r, feats in enumerate(entries):
        for idx, val in feats.items():
            X[r, idx - 1] = val
    return X, np.array(labels)


def load_dataset(path, format="csv", header=False, n_features=None):
    """Read a CSV (``label,f1,f2,...``) or LIBSVM (``label idx:val ...``) file."""
    path = Path(path)
    if format == "csv":
        X, y = _load_csv(path, header)
    elif format == "libsvm":
        X, y = _load_libsvm(path, n_features)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    return Dataset(X, y)


def partition_dataset(dataset, N, seed=None):
    """Shuffle and split into ``N`` disjoint shards.

    Training and validation rows are dealt out separately, so each shard
    receives its share of both and shard sizes differ by at most one per tag.
    """
    if N < 1 or N > dataset.n_samples:
        raise ConfigError(f"cannot split {dataset.n_samples} samples over {N} workers")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(N)]
    offset = 0
    for tag in (TRAIN, VALIDATION):
        rows = np.flatnonzero(dataset.split == tag)
        # rotate the starting shard so remainders do not pile onto shard 0
        for k, chunk in enumerate(np.array_split(rng.permutation(rows), N)):
            parts[(k + offset) % N].append(chunk)
        offset += len(rows) % N
    return [dataset.subset(np.sort(np.concatenate(p))) for p in parts]


def train_val_split(dataset, val_fraction, seed=None):
    """Tag a random ``val_fraction`` of the rows as validation (at least one of each when possible)."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must be in (0, 1)")
    n = dataset.n_samples
    n_val = int(round(val_fraction * n))
    n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
    perm = np.random.default_rng(seed).permutation(n)
    split = np.full(n, TRAIN, dtype=object)
    split[perm[:n_val]] = VALIDATION
    return Dataset(dataset.features, dataset.labels, split, dataset.index)


def make_synthetic_classification(n_samples, n_features, seed=None, margin=0.0):
    """Gaussian features labelled ``+-1`` by a random hyperplane."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n_features)
    w /= np.linalg.norm(w)
    X = rng.standard_normal((n_samples, n_features))
    s = X @ w
    if margin > 0:
        X += np.outer(np.sign(s) * margin, w)
        s = X @ w
    y = np.where(s >= 0, 1, -1)
    return Dataset(X, y)
