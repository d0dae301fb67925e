"""Corpora drawn from known parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dfm import DocumentFeatureMatrix
from .estimation import principal_axes, standardize
from .model import ModelParams, log_rates

MAX_LOG_RATE = 30.0
MAX_ATTEMPTS = 10


class SyntheticSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_docs: int = 50
    n_features: int = 500
    k_dims: int = 2
    alpha_sd: float = 0.5
    psi_mean: float = 0.0
    psi_sd: float = 1.0
    beta_sd: float = 0.3
    seed: int = 0
    # report the truth in the frame the fitters use (centered beta, principal axes)
    canonical: bool = True

    def __post_init__(self):
        if self.n_docs < 2 or self.n_features < 2:
            raise SyntheticSpecError("need at least 2 documents and 2 features")
        if not 1 <= self.k_dims < min(self.n_docs, self.n_features):
            raise SyntheticSpecError("k_dims must satisfy 1 <= K < min(I, J)")
        if self.alpha_sd < 0 or self.psi_sd < 0 or self.beta_sd < 0:
            raise SyntheticSpecError("standard deviations must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def generate(spec: SyntheticSpec) -> tuple[DocumentFeatureMatrix, ModelParams]:
    """Draw parameters and Poisson counts.

    theta is drawn i.i.d. standard normal and then exactly standardized and
    orthogonalized; alpha_1 is fixed at 0. With ``spec.canonical`` the truth
    is re-expressed (same rates) with centered beta and principal axes. All-zero rows or columns are
    redrawn, up to ``MAX_ATTEMPTS`` times. Returns the counts and the truth.
    """
    rng = np.random.default_rng(spec.seed)
    n, m, k = spec.n_docs, spec.n_features, spec.k_dims
    theta = rng.standard_normal((n, k))
    alpha = rng.normal(0.0, spec.alpha_sd, n)
    alpha[0] = 0.0
    psi = rng.normal(spec.psi_mean, spec.psi_sd, m)
    beta = rng.normal(0.0, spec.beta_sd, (m, k))
    doc_ids = tuple(f"doc{i:03d}" for i in range(n))
    feature_ids = tuple(f"w{j:04d}" for j in range(m))
    truth = ModelParams(alpha, psi, np.zeros((m, k)), theta, doc_ids, feature_ids)
    # standardize with zero beta so psi is untouched, then restore the drawn beta
    truth = standardize(truth).replace(beta=beta)
    if spec.canonical and spec.beta_sd > 0:
        # same identified frame the fitters report: centered beta, principal axes
        truth = _positive_skew_signs(principal_axes(truth))

    eta = log_rates(truth)
    if eta.max() > MAX_LOG_RATE:
        raise SyntheticSpecError(
            f"log rate {eta.max():.1f} exceeds {MAX_LOG_RATE}; use smaller standard deviations"
        )
    lam = np.exp(eta)
    counts = rng.poisson(lam)
    for _ in range(MAX_ATTEMPTS):
        rows = np.flatnonzero(counts.sum(axis=1) == 0)
        cols = np.flatnonzero(counts.sum(axis=0) == 0)
        if rows.size == 0 and cols.size == 0:
            break
        for i in rows:
            counts[i] = rng.poisson(lam[i])
        for j in cols:
            counts[:, j] = rng.poisson(lam[:, j])
    else:
        raise SyntheticSpecError(
            f"could not draw a matrix without empty rows/columns in {MAX_ATTEMPTS} attempts"
        )
    matrix = DocumentFeatureMatrix.from_arrays(counts, doc_ids, feature_ids)
    return matrix, truth


def _positive_skew_signs(params: ModelParams) -> ModelParams:
    # deterministic sign convention: largest |beta| in each column is positive
    idx = np.argmax(np.abs(params.beta), axis=0)
    signs = np.sign(params.beta[idx, np.arange(params.k_dims)])
    signs[signs == 0] = 1.0
    return params.replace(theta=params.theta * signs, beta=params.beta * signs)
