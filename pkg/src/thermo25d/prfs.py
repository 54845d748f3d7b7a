"""Phase images to per-slice temperature maps (proton resonance frequency shift)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import AcquisitionParams, PhaseImage, wrap_phase


class ReferenceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReferenceSet:
    orientation_deg: float
    mean_phase: np.ndarray
    count: int


@dataclass(frozen=True, eq=False)
class SliceThermometry:
    temps: np.ndarray
    orientation_deg: float
    timestamp: float
    center_col: int

    @property
    def shape(self):
        return self.temps.shape


def average_references(images: Sequence[PhaseImage]) -> ReferenceSet:
    """Circular mean of reference phases, pixel by pixel."""
    images = list(images)
    if not images:
        raise ReferenceError("no references")
    first = images[0]
    for im in images[1:]:
        if im.shape != first.shape or im.orientation_deg != first.orientation_deg:
            raise ReferenceError("incompatible reference")
    phasor = np.zeros(first.shape, dtype=complex)
    for im in images:
        phasor += np.exp(1j * np.asarray(im.pixels, dtype=float))
    if len(images) == 1:
        mean = wrap_phase(np.asarray(first.pixels, dtype=float))
    else:
        mean = wrap_phase(np.angle(phasor))
    return ReferenceSet(first.orientation_deg, mean, len(images))


def phase_difference(current: PhaseImage, ref: ReferenceSet) -> np.ndarray:
    if current.orientation_deg != ref.orientation_deg:
        raise ReferenceError("orientation mismatch")
    if current.shape != ref.mean_phase.shape:
        raise ReferenceError("incompatible reference")
    return wrap_phase(np.asarray(current.pixels, dtype=float) - ref.mean_phase)


def prfs_temperature(dphi, params: AcquisitionParams):
    """Temperature from a wrapped phase difference: ``dphi / K + t0``."""
    return np.asarray(dphi, dtype=float) / params.k + params.t0


def build_slice_thermometry(current: PhaseImage, ref: ReferenceSet) -> SliceThermometry:
    temps = prfs_temperature(phase_difference(current, ref), current.params)
    return SliceThermometry(temps, current.orientation_deg, current.timestamp, current.center_col)


class PRFSThermometry(TransformerMixin, BaseEstimator):
    """Fit on reference images, transform live phase images into slice temperatures.

    Parameters mirror :class:`AcquisitionParams`.  ``fit`` groups references by
    orientation and averages each group; ``transform`` maps a sequence of
    :class:`PhaseImage` to :class:`SliceThermometry`, one per image.  The
    acquisition constants of this estimator override those stored in the images.
    """

    def __init__(self, gamma=AcquisitionParams.gamma, alpha=0.01, b0=1.5, te=3.69e-3, t0=20.0):
        self.gamma = gamma
        self.alpha = alpha
        self.b0 = b0
        self.te = te
        self.t0 = t0

    @property
    def params_(self) -> AcquisitionParams:
        return AcquisitionParams(self.gamma, self.alpha, self.b0, self.te, self.t0)

    def fit(self, X: Iterable[PhaseImage], y=None):
        groups: dict[float, list[PhaseImage]] = {}
        for im in X:
            groups.setdefault(im.orientation_deg, []).append(im)
        if not groups:
            raise ReferenceError("no references")
        self.params_  # validates constants early
        self.references_ = {o: average_references(ims) for o, ims in sorted(groups.items())}
        return self

    def transform(self, X: Iterable[PhaseImage]) -> list[SliceThermometry]:
        check_is_fitted(self, "references_")
        params = self.params_
        out = []
        for im in X:
            ref = self.references_.get(im.orientation_deg)
            if ref is None:
                raise ReferenceError(f"no reference for orientation {im.orientation_deg}")
            temps = prfs_temperature(phase_difference(im, ref), params)
            out.append(SliceThermometry(temps, im.orientation_deg, im.timestamp, im.center_col))
        return out
