"""Uncertainty for document positions: observed information and parametric bootstrap."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .dfm import DfmError, DocumentFeatureMatrix
from .estimation import FitResult, align, fit
from .model import ModelParams, rates

log = logging.getLogger(__name__)

UNCERTAINTY_VERSION = "wordkrill-uncertainty-v1"
DEFAULT_BOOTSTRAP_REPS = 500
UNRELIABLE_FAILURE_SHARE = 0.20
# replicate refits only need positions to a small fraction of their spread
BOOTSTRAP_TOLERANCES = {"grad_tol": 1e-6, "inner_ftol": 1e-10, "inner_gtol": 1e-7}
# relative eigenvalue floor below which an information matrix counts as singular
SINGULAR_RTOL = 1e-10


def n_workers() -> int:
    """Worker cap from ``WORDKRILL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("WORDKRILL_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class UncertaintyReport:
    """Per-document uncertainty for theta.

    ``per_doc_cov`` is (I, K, K), ``std_errors`` (I, K) and ``intervals``
    (I, K, 2) with lower/upper bounds; entries of flagged documents are NaN.
    """

    method: str
    theta: np.ndarray
    per_doc_cov: np.ndarray
    std_errors: np.ndarray
    intervals: np.ndarray | None
    sig_level: float
    doc_ids: tuple[str, ...] | None = None
    singular: list[int] = field(default_factory=list)
    bootstrap_reps: int | None = None
    n_failed: int = 0
    unreliable: bool = False
    seed: int | None = None
    replicates: np.ndarray | None = None

    @property
    def k_dims(self) -> int:
        return self.theta.shape[1]

    def to_dict(self) -> dict:
        def clean(a):
            # JSON has no NaN; flagged entries become null
            return None if a is None else _nan_to_none(a.tolist())

        return {
            "version": UNCERTAINTY_VERSION,
            "method": self.method,
            "sig_level": self.sig_level,
            "doc_ids": list(self.doc_ids) if self.doc_ids is not None else None,
            "theta": self.theta.tolist(),
            "per_doc_cov": (clean(self.per_doc_cov)),
            "std_errors": (clean(self.std_errors)),
            "intervals": (clean(self.intervals)),
            "singular": list(self.singular),
            "bootstrap_reps": self.bootstrap_reps,
            "n_failed": self.n_failed,
            "unreliable": self.unreliable,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintyReport":
        if d.get("version") != UNCERTAINTY_VERSION:
            raise ValueError(f"unsupported uncertainty version {d.get('version')!r}")

        def arr(x):
            if x is None:
                return None
            return np.array(x, dtype=float)  # None entries become nan

        return cls(
            method=d["method"],
            theta=np.array(d["theta"], dtype=float),
            per_doc_cov=arr(d["per_doc_cov"]),
            std_errors=arr(d["std_errors"]),
            intervals=arr(d["intervals"]),
            sig_level=d["sig_level"],
            doc_ids=tuple(d["doc_ids"]) if d.get("doc_ids") is not None else None,
            singular=list(d.get("singular", [])),
            bootstrap_reps=d.get("bootstrap_reps"),
            n_failed=d.get("n_failed", 0),
            unreliable=d.get("unreliable", False),
            seed=d.get("seed"),
        )

    def csv_rows(self):
        """Rows ``(doc_id, dim, theta, se, lower, upper, method)``; dims are 1-based."""
        n, k = self.theta.shape
        ids = self.doc_ids or tuple(str(i) for i in range(n))
        for i in range(n):
            for d in range(k):
                se = self.std_errors[i, d]
                lo, hi = (
                    (self.intervals[i, d, 0], self.intervals[i, d, 1])
                    if self.intervals is not None
                    else (np.nan, np.nan)
                )
                yield (
                    ids[i],
                    d + 1,
                    _fmt(self.theta[i, d]),
                    _fmt(se),
                    _fmt(lo),
                    _fmt(hi),
                    self.method,
                )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("doc_id", "dim", "theta", "se", "lower", "upper", "method"))
            writer.writerows(self.csv_rows())


def _nan_to_none(x):
    if isinstance(x, list):
        return [_nan_to_none(v) for v in x]
    return None if isinstance(x, float) and not np.isfinite(x) else x


def _fmt(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def _params_of(fit_or_params) -> ModelParams:
    return fit_or_params.params if isinstance(fit_or_params, FitResult) else fit_or_params


# -- observed information ---------------------------------------------------


def fisher_information(matrix, params: ModelParams, i: int) -> np.ndarray:
    """Negative Hessian of document i's log-likelihood in theta_i.

    Entry (k, l) is sum_j beta_jk beta_jl lambda_ij, with alpha, psi and
    beta held at their estimates.
    """
    if matrix is not None and hasattr(matrix, "shape"):
        if tuple(matrix.shape) != (params.n_docs, params.n_features):
            raise ValueError("params do not match matrix")
    if not 0 <= i < params.n_docs:
        raise IndexError(f"document index {i} out of range")
    eta = params.alpha[i] + params.psi + params.beta @ params.theta[i]
    lam = np.exp(eta)
    return (params.beta * lam[:, None]).T @ params.beta


def fisher_informations(params: ModelParams) -> np.ndarray:
    """All per-document information matrices, shape (I, K, K)."""
    lam = rates(params)
    return np.einsum("ij,jk,jl->ikl", lam, params.beta, params.beta)


def _is_singular(info: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(info)
    return not (eig[0] > SINGULAR_RTOL * max(eig[-1], 0.0) and eig[-1] > 0)


def fisher_ses(matrix, fit_or_params, sig_level: float = 0.05) -> UncertaintyReport:
    """Standard errors from the inverse per-document information.

    Intervals are theta +- z * SE. Documents whose information is singular
    get NaN covariance, SEs and intervals and are listed in ``singular``.
    """
    params = _params_of(fit_or_params)
    if isinstance(matrix, DocumentFeatureMatrix):
        params.check_matches(matrix)
    infos = fisher_informations(params)
    n, k = params.theta.shape
    cov = np.full((n, k, k), np.nan)
    singular = []
    for i in range(n):
        if _is_singular(infos[i]):
            singular.append(i)
            continue
        c = np.linalg.inv(infos[i])
        cov[i] = (c + c.T) / 2.0
    if singular:
        log.warning("singular information for %d documents: %s", len(singular), singular)
    se = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    z = stats.norm.ppf(1.0 - sig_level / 2.0)
    intervals = np.stack([params.theta - z * se, params.theta + z * se], axis=-1)
    return UncertaintyReport(
        method="fisher",
        theta=params.theta.copy(),
        per_doc_cov=cov,
        std_errors=se,
        intervals=intervals,
        sig_level=sig_level,
        doc_ids=params.doc_ids,
        singular=singular,
    )


def draw_positions(report: UncertaintyReport, params, n_draws: int, seed: int) -> np.ndarray:
    """Draws from N(theta_i, Cov_i) for every document; shape (n_draws, I, K).

    Documents flagged singular in ``report`` are excluded: their entries are NaN.
    """
    params = _params_of(params)
    if report.method != "fisher":
        raise ValueError("draw_positions needs a fisher report")
    rng = np.random.default_rng(seed)
    n, k = params.theta.shape
    out = np.full((n_draws, n, k), np.nan)
    z = rng.standard_normal((n_draws, n, k))
    for i in range(n):
        cov = report.per_doc_cov[i]
        if i in report.singular or not np.all(np.isfinite(cov)):
            continue
        # eigh tolerates the zero-covariance limit where cholesky would fail
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        out[:, i, :] = params.theta[i] + z[:, i, :] @ root.T
    if report.singular:
        log.warning("excluded %d documents with singular covariance", len(report.singular))
    return out


# -- parametric bootstrap ---------------------------------------------------


def _refit_config(config):
    loose = {k: max(getattr(config, k), v) for k, v in BOOTSTRAP_TOLERANCES.items()}
    return config.replace(**loose)


def _replicate(b: int, matrix: DocumentFeatureMatrix, fit_result: FitResult, lam: np.ndarray, seed: int):
    rng = np.random.default_rng([seed, b])
    counts = rng.poisson(lam)
    if np.any(counts.sum(axis=1) == 0):
        return None, "empty document"
    keep = np.flatnonzero(counts.sum(axis=0) > 0)
    start = fit_result.params
    try:
        boot = DocumentFeatureMatrix(
            matrix.doc_ids, tuple(matrix.feature_ids[j] for j in keep), counts[:, keep]
        )
        start = start.replace(
            psi=start.psi[keep], beta=start.beta[keep], feature_ids=boot.feature_ids
        )
        refit = fit(boot, _refit_config(fit_result.config), method=fit_result.method, start=start)
    except (DfmError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        return None, str(exc)
    if not refit.converged:
        return None, refit.diagnostics.get("message", "not converged")
    return align(fit_result.params.theta, refit.params).theta, None


def parametric_bootstrap(
    matrix: DocumentFeatureMatrix,
    fit_result: FitResult,
    n_reps: int = DEFAULT_BOOTSTRAP_REPS,
    seed: int = 0,
    sig_level: float | None = None,
    n_jobs: int | None = None,
) -> UncertaintyReport:
    """Refit on matrices drawn from Poisson(lambda_hat), starting at the estimates.

    Replicate b uses a generator seeded with ``(seed, b)``, so results do not
    depend on ``n_jobs``. Each replicate's theta is aligned to the original
    fit before aggregation. Non-converged replicates are dropped; if more
    than 20% fail the report is marked unreliable. Intervals are percentile
    intervals at ``sig_level``.
    """
    if n_reps < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    fit_result.params.check_matches(matrix)
    sig_level = fit_result.config.sig_level if sig_level is None else sig_level
    lam = rates(fit_result.params)
    n_jobs = n_workers() if n_jobs is None else n_jobs
    if n_jobs > 1:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_replicate)(b, matrix, fit_result, lam, seed) for b in range(n_reps)
        )
    else:
        results = [_replicate(b, matrix, fit_result, lam, seed) for b in range(n_reps)]
    draws = [r for r, _ in results if r is not None]
    failures = [msg for r, msg in results if r is None]
    n_failed = len(failures)
    unreliable = n_failed > UNRELIABLE_FAILURE_SHARE * n_reps
    if unreliable:
        log.warning("%d of %d bootstrap replicates failed", n_failed, n_reps)
    theta = fit_result.params.theta
    n, k = theta.shape
    if len(draws) < 2:
        nan = np.full((n, k), np.nan)
        return UncertaintyReport(
            "bootstrap", theta.copy(), np.full((n, k, k), np.nan), nan, np.stack([nan, nan], -1),
            sig_level, fit_result.params.doc_ids, bootstrap_reps=n_reps, n_failed=n_failed,
            unreliable=True, seed=seed,
        )
    reps = np.stack(draws)  # (B', I, K)
    centered = reps - reps.mean(axis=0)
    cov = np.einsum("bik,bil->ikl", centered, centered) / (reps.shape[0] - 1)
    se = reps.std(axis=0, ddof=1)
    lower = np.quantile(reps, sig_level / 2.0, axis=0)
    upper = np.quantile(reps, 1.0 - sig_level / 2.0, axis=0)
    return UncertaintyReport(
        method="bootstrap",
        theta=theta.copy(),
        per_doc_cov=cov,
        std_errors=se,
        intervals=np.stack([lower, upper], axis=-1),
        sig_level=sig_level,
        doc_ids=fit_result.params.doc_ids,
        bootstrap_reps=n_reps,
        n_failed=n_failed,
        unreliable=unreliable,
        seed=seed,
        replicates=reps,
    )


def confidence_ellipses(report: UncertaintyReport, level: float = 0.95) -> list[dict]:
    """Per-document ellipse parameters for K = 2 from the covariance matrices.

    Each entry has the center, semi-axis lengths (major, minor) scaled to
    the chi-square(2) quantile at ``level``, and the major axis angle in radians.
    """
    if report.k_dims != 2:
        raise ValueError("confidence ellipses need K = 2")
    scale = stats.chi2.ppf(level, 2)
    ids = report.doc_ids or tuple(str(i) for i in range(report.theta.shape[0]))
    out = []
    for i, cov in enumerate(report.per_doc_cov):
        row = {"doc_id": ids[i], "center_1": report.theta[i, 0], "center_2": report.theta[i, 1]}
        if not np.all(np.isfinite(cov)):
            row.update(major=np.nan, minor=np.nan, angle=np.nan)
        else:
            w, v = np.linalg.eigh(cov)
            w = np.clip(w, 0.0, None)
            row.update(
                major=float(np.sqrt(w[1] * scale)),
                minor=float(np.sqrt(w[0] * scale)),
                angle=float(np.arctan2(v[1, 1], v[0, 1])),
            )
        out.append(row)
    return out
