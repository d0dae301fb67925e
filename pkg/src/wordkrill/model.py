"""Poisson log-linear scaling model with K latent dimensions.

The log rate of feature j in document i is

    log lambda_ij = alpha_i + psi_j + sum_k beta_jk * theta_ik

K = 1 is the classic one-dimensional model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .dfm import DocumentFeatureMatrix

PARAMS_VERSION = "wordkrill-params-v1"

# exp() overflows float64 just above 709
_MAX_LOG_RATE = 700.0


class ModelOverflowError(FloatingPointError):
    """Log rates too large to evaluate the likelihood."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter set of a K-dimensional fit.

    Attributes
    ----------
    alpha : (I,) document fixed effects
    psi : (J,) feature fixed effects
    beta : (J, K) feature weights
    theta : (I, K) document positions
    """

    alpha: np.ndarray
    psi: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    doc_ids: tuple[str, ...] | None = None
    feature_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        psi = np.asarray(self.psi, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        # 1-d inputs are a single dimension
        beta = beta.reshape(-1, 1) if beta.ndim == 1 else beta
        theta = theta.reshape(-1, 1) if theta.ndim == 1 else theta
        if beta.shape[0] != psi.size or theta.shape[0] != alpha.size:
            raise ValueError(
                f"inconsistent shapes: alpha {alpha.shape}, psi {psi.shape}, "
                f"beta {beta.shape}, theta {theta.shape}"
            )
        if beta.shape[1] != theta.shape[1] or beta.shape[1] < 1:
            raise ValueError(f"beta has {beta.shape[1]} dims but theta has {theta.shape[1]}")
        for name, arr in (("alpha", alpha), ("psi", psi), ("beta", beta), ("theta", theta)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)
        if self.doc_ids is not None:
            object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
            if len(self.doc_ids) != alpha.size:
                raise ValueError("doc_ids length does not match alpha")
        if self.feature_ids is not None:
            object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
            if len(self.feature_ids) != psi.size:
                raise ValueError("feature_ids length does not match psi")

    @property
    def k_dims(self) -> int:
        return self.theta.shape[1]

    @property
    def n_docs(self) -> int:
        return self.alpha.size

    @property
    def n_features(self) -> int:
        return self.psi.size

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def check_matches(self, matrix: DocumentFeatureMatrix) -> None:
        if (self.n_docs, self.n_features) != matrix.shape:
            raise ValueError(
                f"params are {self.n_docs}x{self.n_features}, matrix is {matrix.shape}"
            )

    def to_dict(self) -> dict:
        return {
            "version": PARAMS_VERSION,
            "k_dims": self.k_dims,
            "doc_ids": list(self.doc_ids) if self.doc_ids is not None else None,
            "feature_ids": list(self.feature_ids) if self.feature_ids is not None else None,
            "alpha": self.alpha.tolist(),
            "psi": self.psi.tolist(),
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        if d.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported params version {d.get('version')!r}")
        k = int(d["k_dims"])
        beta = np.asarray(d["beta"], dtype=float).reshape(-1, k)
        theta = np.asarray(d["theta"], dtype=float).reshape(-1, k)
        return cls(
            alpha=d["alpha"],
            psi=d["psi"],
            beta=beta,
            theta=theta,
            doc_ids=d.get("doc_ids"),
            feature_ids=d.get("feature_ids"),
        )


@dataclass(frozen=True)
class FitConfig:
    """Settings for a fit.

    ``sig_level`` is the significance level used to size the feasibility
    band around the identification targets; ``epsilon_override`` replaces
    the derived band. ``anchor`` maps a dimension index to a
    ``(doc_low, doc_high)`` pair requiring ``theta[doc_low] < theta[doc_high]``.
    ``rotation`` selects how the rotational freedom left by the constraints
    (K >= 2) is fixed: ``"principal"`` orders dimensions by the singular
    values of the fitted interaction term, ``"none"`` keeps the optimizer's
    frame. ``beta_bound`` boxes every feature weight to ``[-b, b]`` (``None``
    disables it): separated features, whose likelihood keeps rising as
    |beta| grows, then stop at the bound instead of being chased forever.
    ``inner_ftol`` and ``inner_gtol`` are the quasi-Newton stopping rules of
    the joint fitter's subproblems (objective scaled by the total count).
    """

    k_dims: int = 1
    sig_level: float = 0.05
    epsilon_override: float | None = None
    max_iters: int = 500
    grad_tol: float = 1e-8
    seed: int = 0
    anchor: dict[int, tuple] = field(default_factory=dict)
    rotation: Literal["principal", "none"] = "principal"
    beta_bound: float | None = 100.0
    inner_ftol: float = 1e-15
    inner_gtol: float = 1e-12

    def __post_init__(self):
        if self.k_dims < 1:
            raise ValueError("k_dims must be >= 1")
        if not 0.0 < self.sig_level < 1.0:
            raise ValueError("sig_level must lie in (0, 1)")
        if self.epsilon_override is not None and not self.epsilon_override > 0:
            raise ValueError("epsilon_override must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.rotation not in ("principal", "none"):
            raise ValueError(f"unknown rotation {self.rotation!r}")
        if self.beta_bound is not None and not self.beta_bound > 0:
            raise ValueError("beta_bound must be positive")
        if not (self.inner_ftol > 0 and self.inner_gtol > 0):
            raise ValueError("inner tolerances must be positive")

    def replace(self, **changes) -> "FitConfig":
        return replace(self, **changes)

    def check_matrix(self, matrix: DocumentFeatureMatrix) -> None:
        if self.k_dims >= min(matrix.shape):
            raise ValueError(f"k_dims={self.k_dims} must be < min(I, J) = {min(matrix.shape)}")

    def to_dict(self) -> dict:
        return {
            "k_dims": self.k_dims,
            "sig_level": self.sig_level,
            "epsilon_override": self.epsilon_override,
            "max_iters": self.max_iters,
            "grad_tol": self.grad_tol,
            "seed": self.seed,
            "anchor": {str(k): list(v) for k, v in self.anchor.items()},
            "rotation": self.rotation,
            "beta_bound": self.beta_bound,
            "inner_ftol": self.inner_ftol,
            "inner_gtol": self.inner_gtol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        d["anchor"] = {int(k): tuple(v) for k, v in (d.get("anchor") or {}).items()}
        return cls(**d)


def log_rate(params: ModelParams, i: int, j: int) -> float:
    """alpha_i + psi_j + sum_k beta_jk theta_ik for a single cell."""
    if not (0 <= i < params.n_docs and 0 <= j < params.n_features):
        raise IndexError(f"cell ({i}, {j}) out of range for {params.n_docs}x{params.n_features}")
    return float(params.alpha[i] + params.psi[j] + params.beta[j] @ params.theta[i])


def log_rates(params: ModelParams, rows=None) -> np.ndarray:
    """Dense log rates for ``rows`` (all documents by default)."""
    if rows is None:
        rows = slice(None)
    return (
        params.alpha[rows, None]
        + params.psi[None, :]
        + params.theta[rows] @ params.beta.T
    )


def _checked_exp(eta: np.ndarray) -> np.ndarray:
    if np.max(eta, initial=-np.inf) > _MAX_LOG_RATE:
        raise ModelOverflowError(f"log rate {np.max(eta):.1f} overflows")
    return np.exp(eta)


def rates(params: ModelParams) -> np.ndarray:
    """Materialize the dense I x J matrix of Poisson rates."""
    return _checked_exp(log_rates(params))


def _row_blocks(n_rows: int, n_cols: int, budget: int = 4_000_000):
    step = max(1, budget // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _as_counts(matrix) -> sp.csr_matrix:
    """CSR view of a DocumentFeatureMatrix or a raw (possibly non-integer) count array."""
    if isinstance(matrix, DocumentFeatureMatrix):
        return matrix.counts
    return sp.csr_matrix(np.asarray(matrix, dtype=float) if not sp.issparse(matrix) else matrix)


def _check_shape(counts, params: ModelParams) -> None:
    if (params.n_docs, params.n_features) != counts.shape:
        raise ValueError(
            f"params are {params.n_docs}x{params.n_features}, matrix is {counts.shape}"
        )


def log_factorial_constant(matrix) -> float:
    """sum_ij log(omega_ij!), constant in the parameters."""
    return float(np.sum(gammaln(_as_counts(matrix).data + 1.0)))


def log_likelihood(matrix, params: ModelParams, *, include_constant: bool = True) -> float:
    """Poisson log-likelihood sum_ij [omega_ij log lambda_ij - lambda_ij - log omega_ij!].

    ``matrix`` is a :class:`DocumentFeatureMatrix` or an ``I x J`` array of counts.
    """
    counts = _as_counts(matrix)
    _check_shape(counts, params)
    total = 0.0
    for rows in _row_blocks(*counts.shape):
        eta = log_rates(params, rows)
        total -= _checked_exp(eta).sum()
        coo = counts[rows].tocoo()
        total += float(np.dot(coo.data, eta[coo.row, coo.col]))
    if include_constant:
        total -= log_factorial_constant(counts)
    if not np.isfinite(total):
        raise ModelOverflowError("log-likelihood is not finite")
    return total


@dataclass(frozen=True)
class Gradients:
    d_alpha: np.ndarray
    d_psi: np.ndarray
    d_beta: np.ndarray
    d_theta: np.ndarray

    def __iter__(self):
        return iter((self.d_alpha, self.d_psi, self.d_beta, self.d_theta))


def gradients(matrix, params: ModelParams) -> Gradients:
    """Analytic partial derivatives of :func:`log_likelihood`.

    With residuals r_ij = omega_ij - lambda_ij: d_alpha = r 1, d_psi = r^T 1,
    d_beta = r^T theta, d_theta = r beta.
    """
    counts = _as_counts(matrix)
    _check_shape(counts, params)
    n_docs, n_feat = counts.shape
    k = params.k_dims
    d_alpha = np.empty(n_docs)
    d_theta = np.empty((n_docs, k))
    d_psi = np.zeros(n_feat)
    d_beta = np.zeros((n_feat, k))
    for rows in _row_blocks(n_docs, n_feat):
        resid = counts[rows].toarray() - _checked_exp(log_rates(params, rows))
        d_alpha[rows] = resid.sum(axis=1)
        d_theta[rows] = resid @ params.beta
        d_psi += resid.sum(axis=0)
        d_beta += resid.T @ params.theta[rows]
    return Gradients(d_alpha, d_psi, d_beta, d_theta)


def sign_flip(params: ModelParams, k: int) -> ModelParams:
    """Negate dimension k of both beta and theta (likelihood unchanged)."""
    beta = params.beta.copy()
    theta = params.theta.copy()
    beta[:, k] *= -1
    theta[:, k] *= -1
    return params.replace(beta=beta, theta=theta)


def permute_dims(params: ModelParams, order) -> ModelParams:
    """Reorder dimensions of beta and theta together (likelihood unchanged)."""
    order = np.asarray(order)
    return params.replace(beta=params.beta[:, order], theta=params.theta[:, order])


def constraint_moments(theta: np.ndarray):
    """Column means, sample variances and pairwise covariances (divisor n - 1)."""
    theta = np.asarray(theta, dtype=float)
    cov = np.atleast_2d(np.cov(theta, rowvar=False, ddof=1))
    means = theta.mean(axis=0)
    iu = np.triu_indices(theta.shape[1], k=1)
    return means, np.diag(cov).copy(), cov[iu]
