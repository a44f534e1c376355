"""Fingerprint similarity metrics, rank-based accept/reject and scoring."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin

DATA_RANGE = 2.0
PSNR_CLAMP_DB = 120.0
NMSE_FLOOR_DB = -120.0
SSIM_WINDOW = 7


def _same_shape(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _planes(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    raise ValueError(f"expected a 2-D plane or (planes, H, W) image, got shape {x.shape}")


def ssim(a, b, data_range: float = DATA_RANGE, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over valid uniform-window positions, averaged over planes.

    The window shrinks to the image size when the image is smaller than it.
    Local statistics use population (1/N) moments.
    """
    a, b = _same_shape(a, b)
    a = _planes(a.astype(np.float64))
    b = _planes(b.astype(np.float64))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = (min(window, a.shape[1]), min(window, a.shape[2]))
    vals = []
    for pa, pb in zip(a, b):
        wa = sliding_window_view(pa, win)
        wb = sliding_window_view(pb, win)
        mu_a = wa.mean(axis=(-2, -1))
        mu_b = wb.mean(axis=(-2, -1))
        var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a ** 2
        var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b ** 2
        cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def psnr(a, b, data_range: float = DATA_RANGE) -> float:
    a, b = _same_shape(a, b)
    mse = float(np.mean(np.abs(a.astype(np.complex128) - b) ** 2))
    if mse == 0.0:
        return PSNR_CLAMP_DB
    return float(min(10.0 * np.log10(data_range ** 2 / mse), PSNR_CLAMP_DB))


def cosine_sim(a, b) -> float:
    a, b = _same_shape(a, b)
    a = a.astype(np.complex128).ravel()
    b = b.astype(np.complex128).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for an all-zero input")
    # real part of the Hermitian inner product; the plain dot product for real data
    return float(np.real(np.vdot(a, b)) / (na * nb))


def nmse_db(estimate, truth) -> float:
    estimate, truth = _same_shape(estimate, truth)
    energy = float(np.sum(np.abs(truth.astype(np.complex128)) ** 2))
    if energy == 0:
        raise ValueError("NMSE undefined for an all-zero truth")
    err = float(np.sum(np.abs(estimate.astype(np.complex128) - truth) ** 2))
    if err == 0:
        return NMSE_FLOOR_DB
    return float(max(10.0 * np.log10(err / energy), NMSE_FLOOR_DB))


def euclid(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.sqrt(np.sum(np.abs(a.astype(np.complex128) - b) ** 2)))


class MetricKind(str, enum.Enum):
    SSIM = "ssim"
    PSNR = "psnr"
    COSINE = "cosine"
    NMSE = "nmse"
    EUCLIDEAN = "euclidean"

    @property
    def higher_is_similar(self) -> bool:
        return self in (MetricKind.SSIM, MetricKind.PSNR, MetricKind.COSINE)

    @classmethod
    def parse(cls, value) -> "MetricKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown metric kind {value!r}; choose from {[m.value for m in cls]}") from None


def metric_value(kind, generated, received) -> float:
    kind = MetricKind.parse(kind)
    if kind is MetricKind.SSIM:
        return ssim(generated, received)
    if kind is MetricKind.PSNR:
        return psnr(generated, received)
    if kind is MetricKind.COSINE:
        return cosine_sim(generated, received)
    if kind is MetricKind.NMSE:
        # received plays the role of the estimate of the generated fingerprint
        return nmse_db(received, generated)
    return euclid(generated, received)


def to_dissimilarity(kind, value: float) -> float:
    kind = MetricKind.parse(kind)
    if kind in (MetricKind.SSIM, MetricKind.COSINE):
        return 1.0 - value
    if kind is MetricKind.PSNR:
        return -value
    return value


def dissimilarity(kind, generated, received) -> float:
    """Distance oriented so that smaller means more Alice-like."""
    return to_dissimilarity(kind, metric_value(kind, generated, received))


@dataclass(frozen=True)
class Decision:
    sample_index: int
    value: float
    dissimilarity: float
    rank: int  # 1-based position in the stable ascending order
    accepted: bool
    true_label: str | None = None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def num_accepted(k: float, s: int) -> int:
    # Python's round() is half-to-even; the stream generator uses the same rule
    return int(round(k * s))


def decide_rank(dissims, k: float, values=None, labels=None) -> list[Decision]:
    """Accept the ``round(k*s)`` smallest dissimilarities; ties keep index order."""
    d = np.asarray(dissims, dtype=np.float64).ravel()
    s = d.size
    if s < 1:
        raise ValueError("empty stream")
    if not 0.0 <= k <= 1.0:
        raise ValueError("k must lie in [0, 1]")
    if np.isnan(d).any():
        raise ValueError("dissimilarities contain NaN")
    order = np.argsort(d, kind="stable")
    rank = np.empty(s, dtype=np.int64)
    rank[order] = np.arange(1, s + 1)
    n_acc = num_accepted(k, s)
    values = d if values is None else np.asarray(values, dtype=np.float64).ravel()
    return [Decision(i, float(values[i]), float(d[i]), int(rank[i]), bool(rank[i] <= n_acc),
                     None if labels is None else labels[i]) for i in range(s)]


def confusion(decisions) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for dec in decisions:
        if dec.true_label is None:
            raise ValueError(f"decision {dec.sample_index} has no true label")
        alice = dec.true_label == "alice"
        if dec.accepted:
            tp += alice
            fp += not alice
        else:
            fn += alice
            tn += not alice
    return ConfusionCounts(tp, fp, fn, tn)


def f1_error(counts: ConfusionCounts) -> tuple[float, float]:
    if counts.tp + counts.fp == 0 or counts.tp + counts.fn == 0:
        f1 = 0.0
    else:
        p = counts.tp / (counts.tp + counts.fp)
        r = counts.tp / (counts.tp + counts.fn)
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    r_e = (counts.fp + counts.fn) / counts.total if counts.total else 0.0
    return f1, r_e


def score(decisions) -> tuple[ConfusionCounts, float, float]:
    counts = confusion(decisions)
    f1, r_e = f1_error(counts)
    return counts, f1, r_e


DECISION_COLUMNS = ("sample_index", "metric_kind", "value", "dissimilarity", "rank", "accepted", "true_label")


def write_decisions_csv(path_or_file, rows):
    """``rows``: iterable of ``(metric_kind, Decision)``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(DECISION_COLUMNS)
        for kind, d in rows:
            w.writerow([d.sample_index, MetricKind.parse(kind).value, repr(d.value), repr(d.dissimilarity),
                        d.rank, int(d.accepted), d.true_label or ""])
    finally:
        if own:
            fh.close()


class RankAuthenticator(ClassifierMixin, BaseEstimator):
    """Accept the ``k`` fraction of a stream closest to the generated fingerprints.

    ``predict(X)`` takes ``X = (generated, received)``, two equally long stacks
    of fingerprints, and returns 1 for accepted (Alice) and 0 for rejected.
    """

    def __init__(self, metric: str = "cosine", k: float = 0.5):
        self.metric = metric
        self.k = k

    def fit(self, X=None, y=None):
        self.metric_ = MetricKind.parse(self.metric)
        if not 0.0 <= self.k <= 1.0:
            raise ValueError("k must lie in [0, 1]")
        self.classes_ = np.array([0, 1])
        return self

    def _pairs(self, X):
        generated, received = X
        generated, received = np.asarray(generated), np.asarray(received)
        if generated.shape != received.shape:
            raise ValueError(f"generated {generated.shape} and received {received.shape} differ")
        if generated.shape[0] < 1:
            raise ValueError("empty stream")
        return generated, received

    def values(self, X) -> np.ndarray:
        kind = getattr(self, "metric_", None) or MetricKind.parse(self.metric)
        generated, received = self._pairs(X)
        return np.array([metric_value(kind, g, r) for g, r in zip(generated, received)])

    def decide(self, X, labels=None) -> list[Decision]:
        kind = getattr(self, "metric_", None) or MetricKind.parse(self.metric)
        vals = self.values(X)
        dis = np.array([to_dissimilarity(kind, v) for v in vals])
        return decide_rank(dis, self.k, values=vals, labels=labels)

    def predict(self, X) -> np.ndarray:
        return np.array([int(d.accepted) for d in self.decide(X)])

    def score(self, X, y, sample_weight=None) -> float:
        """F1 of the accepted set against ``y`` (1 = Alice)."""
        labels = ["alice" if v else "eve" for v in np.asarray(y)]
        return score(self.decide(X, labels))[1]
