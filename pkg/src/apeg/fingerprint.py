"""Complex CSI matrices <-> normalized two-plane images, pair stacking and the diffusion mask.

Images are plain float arrays shaped ``(2, M, K)`` (or ``(N, 2, M, K)`` for a
batch): plane 0 holds the real part and plane 1 the imaginary part, both
mapped affinely into ``[-1, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .channel_sim import ArrayConfig


@dataclass(frozen=True)
class NormStats:
    """Affine range fitted on the training split.

    ``min_val``/``max_val`` are scalars for joint real/imag scaling, or
    length-2 sequences (real, imag) when planes are scaled separately.
    """

    min_val: float | tuple[float, float]
    max_val: float | tuple[float, float]

    def __post_init__(self):
        lo, hi = self.bounds()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("non-finite normalization range")
        if np.any(lo >= hi):
            raise ValueError("degenerate normalization range: min must be < max")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.min_val, dtype=float), (2,))
        hi = np.broadcast_to(np.asarray(self.max_val, dtype=float), (2,))
        return lo, hi

    @property
    def joint(self) -> bool:
        return np.ndim(self.min_val) == 0

    def to_dict(self) -> dict:
        if self.joint:
            return {"min": float(self.min_val), "max": float(self.max_val)}
        return {"min": [float(v) for v in self.min_val], "max": [float(v) for v in self.max_val]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        lo, hi = d["min"], d["max"]
        if isinstance(lo, list):
            return cls(tuple(lo), tuple(hi))
        return cls(float(lo), float(hi))


def fit_norm(train_set, joint: bool = True) -> NormStats:
    """Global min/max over the real and imaginary entries of ``train_set``."""
    arr = np.asarray(train_set if not isinstance(train_set, list) else np.stack(train_set))
    if arr.size == 0:
        raise ValueError("cannot fit normalization on an empty set")
    if joint:
        parts = np.concatenate([arr.real.ravel(), arr.imag.ravel()])
        lo, hi = float(parts.min()), float(parts.max())
        if not lo < hi:
            raise ValueError(f"degenerate normalization range: all entries equal {lo}")
        return NormStats(lo, hi)
    lo = (float(arr.real.min()), float(arr.imag.min()))
    hi = (float(arr.real.max()), float(arr.imag.max()))
    if not (lo[0] < hi[0] and lo[1] < hi[1]):
        raise ValueError("degenerate normalization range in one plane")
    return NormStats(lo, hi)


def to_image(h, norm: NormStats, clip: bool = True) -> np.ndarray:
    """``x -> 2 (x - min) / (max - min) - 1`` per plane; out-of-range values clamp to [-1, 1]."""
    h = np.asarray(h)
    lo, hi = norm.bounds()
    planes = np.stack([h.real, h.imag], axis=-3).astype(np.float64)
    img = 2.0 * (planes - lo[:, None, None]) / (hi - lo)[:, None, None] - 1.0
    if clip:
        np.clip(img, -1.0, 1.0, out=img)
    return img


def from_image(img, norm: NormStats) -> np.ndarray:
    """Inverse affine map of :func:`to_image`, recombining the planes into complex entries."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 3 or img.shape[-3] != 2:
        raise ValueError(f"expected an image with 2 planes, got shape {img.shape}")
    lo, hi = norm.bounds()
    planes = (img + 1.0) * (hi - lo)[:, None, None] / 2.0 + lo[:, None, None]
    return planes[..., 0, :, :] + 1j * planes[..., 1, :, :]


def concat_pair(alice, jack) -> np.ndarray:
    """Stack along the antenna axis: Jack rows ``[0, M)``, Alice rows ``[M, 2M)``."""
    alice = np.asarray(alice)
    jack = np.asarray(jack)
    if alice.shape != jack.shape:
        raise ValueError(f"shape mismatch: alice {alice.shape} vs jack {jack.shape}")
    return np.concatenate([jack, alice], axis=-2)


def split_pair(pair) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`concat_pair`; returns ``(alice, jack)``."""
    pair = np.asarray(pair)
    rows = pair.shape[-2]
    if rows % 2:
        raise ValueError(f"pair image has an odd number of rows ({rows})")
    m = rows // 2
    return pair[..., m:, :], pair[..., :m, :]


def build_mask(cfg: ArrayConfig | tuple[int, int]) -> np.ndarray:
    """Binary mask over a pair image: 1 on Alice's rows, 0 on Jack's, same on both planes."""
    if isinstance(cfg, ArrayConfig):
        m, k = cfg.tx_antennas, cfg.subcarriers
    else:
        m, k = cfg
    mask = np.zeros((2, 2 * m, k))
    mask[:, m:, :] = 1.0
    return mask


class FingerprintScaler(TransformerMixin, BaseEstimator):
    """Learns :class:`NormStats` on complex channels and maps them to images.

    Parameters
    ----------
    joint : bool
        Scale real and imaginary planes with one shared range.
    clip : bool
        Clamp out-of-range (test-time) values into ``[-1, 1]``.
    """

    def __init__(self, joint: bool = True, clip: bool = True):
        self.joint = joint
        self.clip = clip

    def fit(self, X, y=None):
        X = check_channels(X)
        if y is not None:
            X = np.concatenate([X, check_channels(y)])
        self.norm_ = fit_norm(X, joint=self.joint)
        self.image_shape_ = X.shape[1:]
        return self

    @classmethod
    def from_norm(cls, norm: NormStats, image_shape=None, clip: bool = True) -> "FingerprintScaler":
        scaler = cls(joint=norm.joint, clip=clip)
        scaler.norm_ = norm
        if image_shape is not None:
            scaler.image_shape_ = tuple(image_shape)
        return scaler

    def transform(self, X):
        check_is_fitted(self, "norm_")
        return to_image(check_channels(X, allow_single=True), self.norm_, clip=self.clip)

    def inverse_transform(self, X):
        check_is_fitted(self, "norm_")
        return from_image(X, self.norm_)


def check_channels(X, allow_single: bool = False) -> np.ndarray:
    """Validate a batch ``(N, M, K)`` of complex channel matrices (or one ``(M, K)``)."""
    X = np.asarray(X)
    if X.ndim == 2 and allow_single:
        pass
    elif X.ndim != 3:
        raise ValueError(f"expected channel matrices shaped (N, M, K), got {X.shape}")
    if X.size == 0:
        raise ValueError("empty channel batch")
    if not np.iscomplexobj(X):
        X = X.astype(np.complex128)
    if not np.all(np.isfinite(X)):
        raise ValueError("channel matrices contain non-finite entries")
    return X
