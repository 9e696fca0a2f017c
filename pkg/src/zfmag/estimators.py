"""scikit-learn style wrappers around binning and per-spectrum fitting.

``ZeroFieldFitter`` treats each row of ``X`` as one spectrum sampled at
``b_values`` and transforms it into (shift, contrast_pct, fwhm), so it can
sit in a :class:`sklearn.pipeline.Pipeline` after any spectral preprocessing.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import fitstack
from .lineshape import FWHM_PER_SIGMA, peak_contrast


class StackBinner(TransformerMixin, BaseEstimator):
    """Block-average an image stack into superpixel spectra.

    ``transform`` accepts an :class:`~zfmag.synth.ImageStack` or an array of
    shape (n_steps, ny, nx) and returns a (n_superpixels, n_steps) array,
    rows ordered row-major over the binned grid.
    """

    def __init__(self, bin_factor=16):
        self.bin_factor = bin_factor

    def fit(self, X, y=None):
        frames = X.frames if hasattr(X, "frames") else np.asarray(X)
        if frames.ndim != 3:
            raise ValueError("expected a stack of shape (n_steps, ny, nx)")
        self.n_steps_ = frames.shape[0]
        self.binned_shape_ = (frames.shape[1] // self.bin_factor, frames.shape[2] // self.bin_factor)
        return self

    def transform(self, X):
        check_is_fitted(self, "binned_shape_")
        binned = fitstack.bin(X, self.bin_factor)
        n = binned.frames.shape[0]
        return binned.frames.reshape(n, -1).T.copy()


class ZeroFieldFitter(TransformerMixin, BaseEstimator):
    """Fit the zero-field Gaussian dip to every row of ``X``.

    Parameters
    ----------
    b_values : array-like of shape (n_features,)
        Scan field (T) of each column, strictly increasing.
    weighting : {"none", "poisson"}
        Residual weighting of the least-squares fit.
    max_iter : int
        Levenberg-Marquardt iteration cap.
    n_jobs : int or None
        Parallel workers over rows; results do not depend on it.

    Attributes
    ----------
    params_ : ndarray of shape (n_samples, 4)
        Fitted (y0, C, center, w) of the spectra passed to ``fit``.
    stderr_ : ndarray of shape (n_samples, 4)
    status_ : ndarray of shape (n_samples,)
        :class:`~zfmag.fitstack.FitStatus` codes, 0 for a good fit.
    """

    feature_names = ("shift", "contrast_pct", "fwhm")

    def __init__(self, b_values=None, weighting="none", max_iter=200, n_jobs=None):
        self.b_values = b_values
        self.weighting = weighting
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def _check_b(self, n_features):
        b = np.asarray(self.b_values, dtype=float)
        if b.ndim != 1 or len(b) != n_features:
            raise ValueError(f"b_values has {b.size} entries, X has {n_features} columns")
        if np.any(np.diff(b) <= 0):
            raise ValueError("b_values must be strictly increasing")
        return b

    def _fit_rows(self, X, b):
        rows = [X[i] for i in range(X.shape[0])]

        def one(y):
            return fitstack.fit_spectrum(fitstack.Spectrum(b, y), self.weighting, self.max_iter)

        if self.n_jobs in (None, 1):
            return [one(y) for y in rows]
        from joblib import Parallel, delayed
        return Parallel(n_jobs=self.n_jobs)(delayed(one)(y) for y in rows)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.b_values_ = self._check_b(X.shape[1])
        results = self._fit_rows(X, self.b_values_)
        self.params_ = np.array([[r.feature.y0, r.feature.C, r.feature.deltaB, r.feature.w]
                                 for r in results])
        self.stderr_ = np.array([r.stderr for r in results])
        self.status_ = np.array([int(r.status) for r in results], dtype=np.uint8)
        return self

    def transform(self, X):
        """Fit each row and return (shift, contrast_pct, fwhm); NaN on failure."""
        check_is_fitted(self, "b_values_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.full((X.shape[0], 3), np.nan)
        for k, r in enumerate(self._fit_rows(X, self.b_values_)):
            if r.converged:
                f = r.feature
                out[k] = (-f.deltaB, 100 * peak_contrast(f), FWHM_PER_SIGMA * f.w)
        return out

    def fit_transform(self, X, y=None):
        self.fit(X)
        out = np.full((X.shape[0], 3), np.nan)
        ok = self.status_ == fitstack.FitStatus.OK
        y0, C, c, w = self.params_[ok].T
        out[ok] = np.column_stack([-c, 100 * np.abs(C) / (w * np.sqrt(2 * np.pi)) / y0,
                                   FWHM_PER_SIGMA * w])
        return out

    def predict(self, X=None):
        """Model spectra for the parameters found by ``fit``."""
        check_is_fitted(self, "params_")
        y0, C, c, w = (p[:, None] for p in self.params_.T)
        b = self.b_values_[None, :]
        return y0 + C / (w * np.sqrt(2 * np.pi)) * np.exp(-0.5 * ((b - c) / w) ** 2)

    def get_feature_names_out(self, input_features=None):
        return np.array(self.feature_names, dtype=object)
