"""Online weighted ridge regression with confidence-ellipsoid geometry.

The estimator tracks the solution of

    min_z  sum_i w_i (r_i - phi_i^T z)^2 + lambda ||z||^2

in factored form: an information vector ``b = sum_i w_i phi_i r_i`` and the
upper Cholesky factor R of the precision matrix ``V = lambda I + sum_i w_i
phi_i phi_i^T``, so that the estimate, Mahalanobis distances, ellipsoid
samples, posterior draws and information gains are all obtained from
triangular solves.  Weights are geometric: an observation absorbed s updates
ago carries weight rho^s (rho = 1 recovers plain ridge regression).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit
from numpy.typing import NDArray
from scipy.linalg import solve_triangular
from scipy.linalg.blas import dtrsv

# Cholesky diagonals below this floor indicate loss of positive definiteness,
# which cannot happen for valid rank-1 updates and therefore signals a bug.
_PD_FLOOR = 1e-12


class NumericalConsistencyError(RuntimeError):
    """The factored state violated an invariant that valid updates preserve."""


@dataclass(frozen=True)
class FixedBeta:
    """Constant confidence radius, used when beta is tuned as a hyperparameter."""

    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")


@dataclass(frozen=True)
class TheoreticalBeta:
    """Self-normalized confidence radius for sub-Gaussian noise.

    Yields radii sqrt(lambda)*S + sigma*sqrt(log det(V/lambda^d) + 2 log(1/delta)),
    which keep the true parameter inside the ellipsoid at every step with
    probability at least 1 - delta, given ||z_true|| <= s_bound and
    sigma-sub-Gaussian observation noise.
    """

    delta: float
    s_bound: float
    sigma: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if not self.s_bound > 0:
            raise ValueError(f"s_bound must be positive, got {self.s_bound}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


ConfidenceSpec = Union[FixedBeta, TheoreticalBeta]


class Estimator:
    """Online ridge estimator in information/Cholesky form.

    Attributes:
        dim: parameter dimension d.
        lam: ridge regularizer, > 0.  Never decayed; only data ages out.
        rho: decay factor in (0, 1] applied to past observations per update.
        info: information vector, shape (d,).
        chol: upper-triangular R with R^T R = V, shape (d, d).
        gram: decayed data Gram matrix A with V = lam*I + A.
        count: number of absorbed observations.
        zhat: current estimate V^{-1} info, shape (d,).

    A single update costs O(d^2) when rho = 1 (rank-1 Cholesky update); for
    rho < 1 the factor is rebuilt from the decayed Gram, which is O(d^3) and
    acceptable at the dimensions this package targets.
    """

    def __init__(self, dim: int, lam: float = 1.0, rho: float = 1.0):
        if not (isinstance(dim, (int, np.integer)) and dim >= 1):
            raise ValueError(f"dim must be a positive integer, got {dim}")
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        if not 0 < rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {rho}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.rho = float(rho)
        self.info = np.zeros(dim)
        self.chol = np.sqrt(lam) * np.eye(dim)
        self.gram = np.zeros((dim, dim))
        self.count = 0
        self.zhat = np.zeros(dim)
        self.logdet_v = dim * math.log(lam)

    def copy(self) -> "Estimator":
        est = Estimator.__new__(Estimator)
        est.dim, est.lam, est.rho, est.count = self.dim, self.lam, self.rho, self.count
        est.info = self.info.copy()
        est.chol = self.chol.copy()
        est.gram = self.gram.copy()
        est.zhat = self.zhat.copy()
        est.logdet_v = self.logdet_v
        return est

    # -- updates ---------------------------------------------------------

    def update(self, phi: NDArray, r: float) -> None:
        """Absorb one observation (phi, r), decaying older data by rho."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"phi must have shape ({self.dim},), got {phi.shape}")
        if not (np.all(np.isfinite(phi)) and np.isfinite(r)):
            raise ValueError("non-finite observation")
        if self.rho == 1.0:
            self.gram += np.outer(phi, phi)
            self.info += phi * float(r)
            self.logdet_v += _chol_rank1_update(self.chol, phi.copy())
        else:
            self._update_decayed(phi, float(r))
        if np.min(np.diagonal(self.chol)) < _PD_FLOOR:
            raise NumericalConsistencyError("precision factor lost positive definiteness")
        self.count += 1
        self._refresh_zhat()

    def _update_decayed(self, phi: NDArray, r: float) -> None:
        """Decay-then-absorb path; refactorizes V = lam*I + gram."""
        self.gram *= self.rho
        self.gram += np.outer(phi, phi)
        self.info *= self.rho
        self.info += phi * r
        v = self.lam * np.eye(self.dim) + self.gram
        self.chol = np.linalg.cholesky(v).T
        self.logdet_v = 2.0 * float(np.sum(np.log(np.diagonal(self.chol))))

    def _refresh_zhat(self) -> None:
        y = dtrsv(self.chol, self.info, lower=0, trans=1)
        self.zhat = dtrsv(self.chol, y, lower=0, trans=0)

    # -- geometry --------------------------------------------------------

    def beta(self, spec: ConfidenceSpec) -> float:
        """Confidence radius under the given spec at the current state."""
        if isinstance(spec, FixedBeta):
            return spec.beta
        if isinstance(spec, TheoreticalBeta):
            gap = self.logdet_v - self.dim * math.log(self.lam) + 2.0 * math.log(1.0 / spec.delta)
            return math.sqrt(self.lam) * spec.s_bound + spec.sigma * math.sqrt(max(gap, 0.0))
        raise TypeError(f"unknown confidence spec {spec!r}")

    def mahalanobis(self, z: NDArray) -> float:
        """||z - zhat||_V, the ellipsoid coordinate of z."""
        y = self.chol @ (np.asarray(z, dtype=float) - self.zhat)
        return math.sqrt(y @ y)

    def sample_ellipsoid(self, radius: float, count: int, rng: np.random.Generator) -> NDArray:
        """Uniform samples from {z : ||z - zhat||_V <= radius}, shape (count, d).

        Uniform unit-ball points (normalized Gaussian direction times
        U^(1/d) radius) are pushed through the inverse Cholesky factor, which
        maps the ball exactly onto the ellipsoid.
        """
        if not radius >= 0:
            raise ValueError(f"radius must be nonnegative, got {radius}")
        g = rng.standard_normal((count, self.dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = rng.random(count) ** (1.0 / self.dim)
        xi = g / norms * (radius * radii)[:, None]
        offs = solve_triangular(self.chol, xi.T, lower=False, check_finite=False).T
        return self.zhat[None, :] + offs

    def sample_posterior(self, rng: np.random.Generator) -> NDArray:
        """One draw from N(zhat, V^{-1})."""
        xi = rng.standard_normal(self.dim)
        return self.zhat + solve_triangular(self.chol, xi, lower=False, check_finite=False)

    def d_gap(self, phi: NDArray) -> float:
        """Information gain log(1 + ||phi||^2_{V^{-1}}) of observing phi next."""
        y = dtrsv(self.chol, np.asarray(phi, dtype=float), lower=0, trans=1)
        return math.log1p(y @ y)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "lambda": self.lam,
            "rho": self.rho,
            "info": self.info.tolist(),
            "chol": self.chol.ravel().tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, state: dict) -> "Estimator":
        est = cls(state["dim"], state["lambda"], state["rho"])
        est.info = np.asarray(state["info"], dtype=float)
        est.chol = np.asarray(state["chol"], dtype=float).reshape(est.dim, est.dim)
        est.count = int(state["count"])
        # The Gram is redundant given the factor: A = R^T R - lam*I.
        gram = est.chol.T @ est.chol - est.lam * np.eye(est.dim)
        est.gram = (gram + gram.T) / 2.0
        est.logdet_v = 2.0 * float(np.sum(np.log(np.diagonal(est.chol))))
        est._refresh_zhat()
        return est


@njit(cache=True)
def _chol_rank1_update(r_mat: NDArray, x: NDArray) -> float:
    """In-place rank-1 update of an upper factor: R^T R  <-  R^T R + x x^T.

    Givens-style forward sweep; x is consumed as workspace.  Returns the
    log-determinant increase of R^T R, which the caller accumulates.
    """
    n = r_mat.shape[0]
    delta_logdet = 0.0
    for k in range(n):
        rkk = r_mat[k, k]
        xk = x[k]
        rad = math.hypot(rkk, xk)
        c = rad / rkk
        s = xk / rkk
        r_mat[k, k] = rad
        delta_logdet += 2.0 * math.log(c)
        for j in range(k + 1, n):
            r_mat[k, j] = (r_mat[k, j] + s * x[j]) / c
            x[j] = c * x[j] - s * r_mat[k, j]
    return delta_logdet
