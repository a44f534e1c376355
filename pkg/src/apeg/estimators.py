"""Estimator wrappers: Jack's fingerprint image in, predicted Alice image out.

``fit(X, y)`` takes Jack images ``X`` and Alice images ``y`` (both
``(n, 2, M, K)`` in the normalised [-1, 1] domain); ``predict(X)`` returns
generated Alice images.
"""
from __future__ import annotations

import zlib

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .denoiser.config import PRESETS, NetConfig
from .denoiser.nets import build_net
from .denoiser.optim import Adam
from .denoiser.params import ParamStore, backward
from .diffusion import loss_conditional, loss_masked, make_schedule, sample_cadm, sample_ccmdm
from .fingerprint import build_mask, concat_pair


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, independent generator derived from one run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), zlib.crc32(name.encode())]))


def _check_images(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 2 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty stack of (2, M, K) images, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


class _DiffusionGenerator(RegressorMixin, BaseEstimator):
    variant = ""

    def __init__(self, preset: str = "desk", net_config: NetConfig | None = None, T: int = 200,
                 beta_start: float = 5e-4, beta_end: float = 0.1, epochs: int = 100, batch_size: int = 32,
                 lr: float = 1e-3, seed: int = 0, strict_paper: bool = False, sample_batch: int = 512):
        self.preset = preset
        self.net_config = net_config
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.strict_paper = strict_paper
        self.sample_batch = sample_batch

    # subclasses ------------------------------------------------------------
    def _image_shape(self, m, k):
        raise NotImplementedError

    def _loss(self, X, y, rng, t=None, noise=None, predictor=None):
        raise NotImplementedError

    def _sample(self, X, rng):
        raise NotImplementedError

    # -----------------------------------------------------------------------
    def _resolve_config(self) -> NetConfig:
        if self.net_config is not None:
            return self.net_config
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        return PRESETS[self.preset]()

    def _init(self, m, k):
        self.config_ = self._resolve_config()
        self.schedule_ = make_schedule(self.T, self.beta_start, self.beta_end)
        self.image_shape_ = (m, k)
        init_seed = int(substream(self.seed, "init").integers(2 ** 31))
        self.net_ = build_net(self.variant, self.config_, self._image_shape(m, k), seed=init_seed)
        self.loss_history_ = []

    def fit(self, X, y, callback=None):
        """Train for ``epochs`` passes; ``callback(epoch, mean_loss)`` after each."""
        X = _check_images(X, "X")
        y = _check_images(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X {X.shape} and y {y.shape} differ")
        self._init(X.shape[2], X.shape[3])
        return self.partial_fit(X, y, epochs=self.epochs, callback=callback)

    def partial_fit(self, X, y, epochs: int = 1, callback=None):
        X = _check_images(X, "X")
        y = _check_images(y, "y")
        if not hasattr(self, "net_"):
            self._init(X.shape[2], X.shape[3])
        if not hasattr(self, "_optim"):
            self._store = ParamStore(self.net_)
            self._optim = Adam(self._store, lr=self.lr)
            self._train_rng = substream(self.seed, "training")
            torch.manual_seed(int(substream(self.seed, "dropout").integers(2 ** 31)))
        n = X.shape[0]
        self.net_.train()
        for _ in range(epochs):
            perm = self._train_rng.permutation(n)
            total = 0.0
            for lo in range(0, n, self.batch_size):
                idx = perm[lo:lo + self.batch_size]
                loss = self._loss(X[idx], y[idx], self._train_rng)
                backward(loss, self._store)
                self._optim.step()
                total += loss.item() * len(idx)
            self.loss_history_.append(total / n)
            if callback is not None:
                callback(len(self.loss_history_) - 1, self.loss_history_[-1])
        self.net_.eval()
        return self

    def validation_loss(self, X, y, seed: int = 0) -> float:
        """Loss on fixed (t, noise) draws; deterministic for a given seed."""
        check_is_fitted(self, "net_")
        X = _check_images(X, "X")
        y = _check_images(y, "y")
        self.net_.eval()
        with torch.no_grad():
            return float(self._loss(X, y, substream(seed, "validation")).item())

    def oracle_loss(self, X, y, seed: int = 0) -> float:
        """Loss with a predictor that returns the injected noise; exactly zero by construction."""
        X = _check_images(X, "X")
        y = _check_images(y, "y")
        rng = substream(seed, "validation")
        shape = self._target_shape(X, y)
        t = rng.integers(1, self.T + 1, shape[0])
        noise = rng.standard_normal(shape)
        stored = torch.as_tensor(noise)
        with torch.no_grad():
            return float(self._loss(X, y, rng, t=t, noise=noise, predictor=lambda *a: stored).item())

    def _target_shape(self, X, y):
        return y.shape

    def predict(self, X, seed: int | None = None):
        check_is_fitted(self, "net_")
        X = _check_images(X, "X")
        if X.shape[2:] != tuple(self.image_shape_):
            raise ValueError(f"image shape {X.shape[2:]} != trained shape {self.image_shape_}")
        rng = substream(self.seed if seed is None else seed, "sampling")
        self.net_.eval()
        return self._sample(X, rng)

    def score(self, X, y, sample_weight=None):
        """Negative median NMSE (dB) of generated vs. true images; higher is better."""
        from .auth import nmse_db
        pred = self.predict(X)
        return -float(np.median([nmse_db(p, t) for p, t in zip(pred, np.asarray(y))]))

    @classmethod
    def from_net(cls, net, schedule, image_shape, config: NetConfig, **params):
        """Wrap an already trained network (e.g. loaded from a checkpoint)."""
        est = cls(T=schedule.T, beta_start=schedule.beta_start, beta_end=schedule.beta_end,
                  net_config=config, **params)
        est.config_ = config
        est.schedule_ = schedule
        est.image_shape_ = tuple(image_shape)
        est.net_ = net.eval()
        est.loss_history_ = []
        return est


class CCMDMGenerator(_DiffusionGenerator):
    """Masked diffusion over the stacked Jack/Alice image; only the Alice rows are noised."""

    variant = "ccmdm"

    def _image_shape(self, m, k):
        return (2 * m, k)

    def _target_shape(self, X, y):
        return (X.shape[0], X.shape[1], 2 * X.shape[2], X.shape[3])

    def _loss(self, X, y, rng, t=None, noise=None, predictor=None):
        m, k = X.shape[2:]
        return loss_masked(self.net_ if predictor is None else None, concat_pair(y, X), build_mask((m, k)), rng,
                           self.schedule_ if hasattr(self, "schedule_") else make_schedule(self.T, self.beta_start, self.beta_end),
                           t=t, noise=noise, predictor=predictor)

    def _sample(self, X, rng):
        return sample_ccmdm(X, self.schedule_, self.net_, rng, strict_paper=self.strict_paper,
                            batch_size=self.sample_batch)


class CADMGenerator(_DiffusionGenerator):
    """Diffusion over Alice's image, conditioned on Jack's image through cross-attention."""

    variant = "cadm"

    def _image_shape(self, m, k):
        return (m, k)

    def _loss(self, X, y, rng, t=None, noise=None, predictor=None):
        sched = self.schedule_ if hasattr(self, "schedule_") else make_schedule(self.T, self.beta_start, self.beta_end)
        return loss_conditional(self.net_ if predictor is None else None, y, X, rng, sched,
                                t=t, noise=noise, predictor=predictor)

    def _sample(self, X, rng):
        return sample_cadm(X, self.schedule_, self.net_, rng, strict_paper=self.strict_paper,
                           batch_size=self.sample_batch)


class CollaboratorBaseline(RegressorMixin, BaseEstimator):
    """Uses Jack's fingerprint directly as Alice's."""

    def fit(self, X, y=None):
        X = _check_images(X)
        self.image_shape_ = X.shape[2:]
        return self

    def predict(self, X):
        return _check_images(X).copy()

    def score(self, X, y, sample_weight=None):
        from .auth import nmse_db
        return -float(np.median([nmse_db(p, t) for p, t in zip(self.predict(X), np.asarray(y))]))


GENERATORS = {"ccmdm": CCMDMGenerator, "cadm": CADMGenerator}
