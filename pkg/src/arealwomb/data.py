"""In-memory observed data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .dagar import EdgeDissimilarity
from .graph import RegionGraph


@dataclass
class ObservedData:
    """Counts, expected counts, design and edge dissimilarities.

    Attributes
    ----------
    y : (n, q) int array
    E : (n, q) float array, positive wherever ``observed``
    X : (n, q, p) design; column 0 is the intercept
    z : list of per-disease :class:`EdgeDissimilarity`
    observed : (n, q) bool mask; unobserved cells drop out of the likelihood
    covariate_names : names of the design columns
    """

    y: np.ndarray
    E: np.ndarray
    X: np.ndarray
    z: list[EdgeDissimilarity]
    observed: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ("intercept",)
    z_scale: list[np.ndarray] | None = field(default=None)

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.ndim != 2:
            raise ValueError("y must be an (n, q) array")
        n, q = self.y.shape
        self.E = np.asarray(self.E, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.observed is None:
            self.observed = np.ones((n, q), dtype=bool)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.E.shape != (n, q) or self.observed.shape != (n, q):
            raise ValueError("E and observed must match the shape of y")
        if self.X.ndim != 3 or self.X.shape[:2] != (n, q):
            raise ValueError("X must be an (n, q, p) array")
        if np.any(self.y[self.observed] < 0) or np.any(self.y != np.round(self.y)):
            raise ValueError("counts must be non-negative integers")
        if np.any(self.E[self.observed] <= 0):
            bad = np.argwhere(self.observed & (self.E <= 0))[0]
            raise ValueError(
                f"expected count must be positive for modelled cell (region {bad[0] + 1}, disease {bad[1] + 1})"
            )
        if len(self.z) != q:
            raise ValueError("one dissimilarity table per disease is required")
        if len(self.covariate_names) != self.X.shape[2]:
            raise ValueError("covariate_names must name every design column")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    # flat, disease-major views used by the sampler --------------------------

    def flat(self) -> dict[str, np.ndarray]:
        obs = self.observed.T.ravel()
        y = self.y.T.ravel().astype(float)
        E = self.E.T.ravel()
        logE = np.where(obs, np.log(np.where(E > 0, E, 1.0)), 0.0)
        X = self.X.transpose(1, 0, 2).reshape(-1, self.p)
        return {
            "y": np.where(obs, y, 0.0),
            "obs": obs,
            "logE": logE,
            "X": X,
            "lgy": np.where(obs, gammaln(y + 1.0), 0.0),
            "disease": np.repeat(np.arange(self.q), self.n),
        }

    def masked(self) -> "ObservedData":
        """Copy with every cell unobserved (prior-only runs)."""
        return ObservedData(
            self.y.copy(),
            self.E.copy(),
            self.X.copy(),
            list(self.z),
            np.zeros_like(self.observed),
            self.covariate_names,
            self.z_scale,
        )

    def sir(self) -> np.ndarray:
        return self.y / self.E


def intercept_only(y, E, z, observed=None) -> ObservedData:
    y = np.asarray(y)
    return ObservedData(y, E, np.ones(y.shape + (1,)), list(z), observed)


def check_dissimilarity_cover(graph: RegionGraph, z: list[EdgeDissimilarity]) -> None:
    for d, zd in enumerate(z):
        if zd.values.shape[0] != graph.m:
            raise ValueError(
                f"disease {d + 1}: dissimilarities cover {zd.values.shape[0]} edges, graph has {graph.m}"
            )
