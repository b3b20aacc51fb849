"""Scikit-learn style facade over per-identity avatar fitting.

`AvatarReconstructor` wraps the functional pipeline (fit_avatar / reenact)
behind the estimator protocol: constructor stores hyperparameters verbatim,
`fit` validates and optimizes, fitted state lands in trailing-underscore
attributes, and `get_params`/`set_params`/`clone` behave as sklearn expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import head_model as hm
from .camera import Camera
from .fitting import FitConfig, Reenactor, TargetSet, TargetView, fit_avatar
from .losses import LossWeights


def _as_target_set(X) -> TargetSet:
    if isinstance(X, TargetSet):
        return X
    views = list(X)
    if not views or not all(isinstance(v, TargetView) for v in views):
        raise ValueError("X must be a TargetSet or a non-empty sequence of TargetView")
    return TargetSet(items=views)


def _as_frames(X):
    """Normalize predict/score input into [(params, camera), ...] plus the
    target images when the input carries them (else None)."""
    if isinstance(X, TargetSet):
        X = X.items
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    if all(isinstance(v, TargetView) for v in items):
        return [(v.params, v.camera) for v in items], [v.image for v in items]
    frames = []
    for it in items:
        params, camera = it
        if not isinstance(params, hm.ExpressionParams) or not isinstance(camera, Camera):
            raise ValueError("expected (ExpressionParams, Camera) pairs or TargetViews")
        frames.append((params, camera))
    return frames, None


class AvatarReconstructor(BaseEstimator):
    """Fit a drivable Gaussian head avatar to posed, expression-tagged images.

    Parameters
    ----------
    model : BlendshapeModel
        The linear head model the expression branch is bound to.
    iterations, learning_rate, batch, seed : optimizer schedule.
    lambda_p, lambda_l : pyramid and lifting-distance loss weights.
    grid_res, plane_extent : lifting sheet resolution and half-width.
    decoder : "affine" or "conv" feature-to-RGB decoder.

    Attributes (after fit)
    ----------
    avatar_ : the fitted Avatar bundle.
    history_ : per-iteration loss rows.
    n_iter_ : iterations actually run.
    """

    def __init__(self, model=None, iterations: int = 2000,
                 learning_rate: float = 1.0e-4, batch: int = 1,
                 lambda_p: float = 1.0, lambda_l: float = 0.1,
                 grid_res: int = 64, plane_extent: float = 1.0,
                 decoder: str = "affine", seed: int = 0):
        self.model = model
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.batch = batch
        self.lambda_p = lambda_p
        self.lambda_l = lambda_l
        self.grid_res = grid_res
        self.plane_extent = plane_extent
        self.decoder = decoder
        self.seed = seed

    def _config(self) -> FitConfig:
        return FitConfig(
            iterations=self.iterations, learning_rate=self.learning_rate,
            batch=self.batch,
            weights=LossWeights(lambda_p=self.lambda_p, lambda_l=self.lambda_l),
            seed=self.seed, grid_res=self.grid_res,
            plane_extent=self.plane_extent, decoder_mode=self.decoder,
        )

    def fit(self, X, y=None):
        """Optimize an avatar against X (a TargetSet or TargetView sequence)."""
        if not isinstance(self.model, hm.BlendshapeModel):
            raise ValueError("model must be a BlendshapeModel (got "
                             f"{type(self.model).__name__})")
        targets = _as_target_set(X)
        result = fit_avatar(self.model, targets, self._config())
        self.avatar_ = result.avatar
        self.history_ = result.history
        self.n_iter_ = len(result.history)
        return self

    def predict(self, X) -> np.ndarray:
        """Reenact each (params, camera) in X; returns (n, 3, H, W)."""
        check_is_fitted(self, "avatar_")
        frames, _ = _as_frames(X)
        reenactor = Reenactor(self.avatar_, self.model)
        return np.stack([reenactor.render_frame(p, c) for p, c in frames])

    def score(self, X, y=None) -> float:
        """Negative mean per-pixel L1 against the images carried by X
        (higher is better, 0 is perfect)."""
        check_is_fitted(self, "avatar_")
        frames, images = _as_frames(X)
        if images is None:
            raise ValueError("score needs TargetViews so it has images to compare against")
        pred = self.predict(X)
        return -float(np.mean([np.abs(p - t).mean() for p, t in zip(pred, images)]))
