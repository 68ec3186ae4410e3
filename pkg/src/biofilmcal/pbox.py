"""Parametric probability boxes from posterior samples of parameter means.

Each posterior sample of a mean, together with the fixed coefficient of
variation, defines one Normal CDF; the p-box is the pointwise envelope of
that family. Epistemic uncertainty widens the band between the envelopes,
aleatory uncertainty slopes the individual CDFs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = ["PBox", "pbox_from_posterior", "envelope_area", "write_pbox_csv"]

GRID_POINTS = 512


@dataclass(frozen=True)
class PBox:
    """Lower/upper CDF envelopes on an ascending grid.

    ``family`` tags the member family ("normal-cov"), ``source`` the
    envelope convention ("all" or "credible95").
    """

    grid: np.ndarray
    lower_cdf: np.ndarray
    upper_cdf: np.ndarray
    family: str = "normal-cov"
    source: str = "all"

    def __post_init__(self):
        if not (self.grid.shape == self.lower_cdf.shape == self.upper_cdf.shape):
            raise ValueError("grid and envelopes must share a shape")
        if np.any(np.diff(self.grid) <= 0.0):
            raise ValueError("grid must be strictly ascending")
        if np.any(self.lower_cdf > self.upper_cdf + 1e-12):
            raise ValueError("lower envelope exceeds upper envelope")


def _member_cdfs(grid: np.ndarray, means: np.ndarray, cov: float) -> np.ndarray:
    """(S, G) matrix of member CDFs Normal(mu, cov*mu) on the grid."""
    if cov == 0.0:
        return (grid[None, :] >= means[:, None]).astype(float)
    sigma = np.abs(cov * means)
    return ndtr((grid[None, :] - means[:, None]) / sigma[:, None])


def pbox_from_posterior(samples, cov: float, grid=None,
                        envelope: str = "all") -> PBox:
    """Envelope p-box over the Normal(mu, cov*mu) family of one parameter.

    ``envelope="all"`` uses every posterior mean; ``"credible95"`` first
    restricts to the central 95% of the means, suppressing stray tail
    samples. The default grid spans
    ``[min mu - 4 sigma_max, max mu + 4 sigma_max]`` with 512 points.
    """
    means = np.asarray(samples, dtype=float).ravel()
    if means.size == 0:
        raise ValueError("need at least one posterior sample")
    if cov < 0.0:
        raise ValueError("cov must be >= 0")
    if envelope not in ("all", "credible95"):
        raise ValueError("envelope must be 'all' or 'credible95'")
    if envelope == "credible95":
        lo, hi = np.percentile(means, [2.5, 97.5])
        means = means[(means >= lo) & (means <= hi)]
    if grid is None:
        sigma_max = float(np.max(np.abs(cov * means)))
        span_lo = means.min() - 4.0 * sigma_max
        span_hi = means.max() + 4.0 * sigma_max
        if span_hi <= span_lo:  # degenerate: single mean, cov = 0
            half = max(abs(span_lo) * 1e-3, 1e-6)
            span_lo, span_hi = span_lo - half, span_hi + half
        grid = np.linspace(span_lo, span_hi, GRID_POINTS)
    else:
        grid = np.asarray(grid, dtype=float)
    cdfs = _member_cdfs(grid, means, cov)
    return PBox(grid, cdfs.min(axis=0), cdfs.max(axis=0),
                source=envelope)


def envelope_area(pbox: PBox) -> float:
    """Area between upper and lower envelope (trapezoid on the grid)."""
    return float(np.trapz(pbox.upper_cdf - pbox.lower_cdf, pbox.grid))


def write_pbox_csv(pbox: PBox, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,lower_cdf,upper_cdf\n")
        for x, lo, hi in zip(pbox.grid, pbox.lower_cdf, pbox.upper_cdf):
            fh.write(f"{x:.17g},{lo:.17g},{hi:.17g}\n")
