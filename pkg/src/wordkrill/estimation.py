"""Starting values, feasibility band, and the two fitting algorithms.

``fit_wordfish`` is the alternating (conditional maximization) algorithm for
K = 1. ``fit_wordkrill`` maximizes the likelihood jointly over all parameters
subject to the identification constraints, each held within a band of
half-width epsilon, using an augmented Lagrangian around L-BFGS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .dfm import DocumentFeatureMatrix
from .model import (
    FitConfig,
    ModelParams,
    ModelOverflowError,
    constraint_moments,
    log_likelihood,
    rates,
)

log = logging.getLogger(__name__)

FIT_VERSION = "wordkrill-fit-v1"
SVD_OFFSET = 0.5
DIVERGENCE_LIMIT = 50.0
# weight of the penalty fixing the joint fitter's exact flat direction
GAUGE_WEIGHT = 1.0


class EstimationError(RuntimeError):
    pass


class DegenerateInitializationError(EstimationError):
    """Residual matrix carries no variation to start the positions from."""


# -- identification transforms ---------------------------------------------
#
# The likelihood only depends on alpha_i + psi_j + theta_i . beta_j, so any
# affine map of theta with the inverse map applied to beta (and the shift
# absorbed by psi) leaves it unchanged. These helpers move between such
# equivalent parameterizations.


def pin_first_alpha(params: ModelParams) -> ModelParams:
    """Shift alpha so alpha_1 = 0, absorbing the shift into psi."""
    c = params.alpha[0]
    return params.replace(alpha=params.alpha - c, psi=params.psi + c)


def standardize(params: ModelParams) -> ModelParams:
    """Center, orthogonalize (Gram-Schmidt) and rescale theta to unit sample variance.

    Dimension order is preserved and each column keeps a positive
    correlation with its input. The likelihood is unchanged.
    """
    theta = params.theta
    n = theta.shape[0]
    means = theta.mean(axis=0)
    centered = theta - means
    q, r = np.linalg.qr(centered)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    r = r * signs[:, None]
    scale = np.sqrt(n - 1)
    diag = np.abs(np.diag(r))
    if np.any(diag <= 1e-10 * max(1.0, np.linalg.norm(centered))):
        raise DegenerateInitializationError("positions have (near) zero spread in some dimension")
    # theta = q sqrt(n-1) * (r / sqrt(n-1)) + means
    transform = r / scale
    new_theta = q * scale
    new_beta = params.beta @ transform.T
    new_psi = params.psi + params.beta @ means
    return params.replace(theta=new_theta, beta=new_beta, psi=new_psi)


def center_feature_weights(params: ModelParams) -> ModelParams:
    """Shift beta so each column has zero mean weighted by expected feature totals.

    beta_j -> beta_j - d changes the log rates by -theta_i . d, a pure
    document effect, so alpha absorbs it and alpha_1 is re-pinned. Weighting
    by sum_i lambda_ij keeps rare, separated features (huge |beta|) from
    dragging the center.
    """
    weights = rates(params).sum(axis=0)
    shift = weights @ params.beta / weights.sum()
    out = params.replace(beta=params.beta - shift, alpha=params.alpha + params.theta @ shift)
    return pin_first_alpha(out)


def principal_axes(params: ModelParams) -> ModelParams:
    """Exactly standardize theta and rotate to the principal axes of theta beta^T.

    beta is centered first, so the axes are those of the double-centered
    interaction term, the part of the log rates the likelihood identifies.
    Dimensions come out ordered by decreasing singular value. Signs are
    arbitrary; fix them afterwards.
    """
    params = center_feature_weights(params)
    theta = params.theta
    n, k = theta.shape
    means = theta.mean(axis=0)
    centered = theta - means
    # thin SVD of centered @ beta.T via QR factors, avoiding the I x J product
    q_t, r_t = np.linalg.qr(centered)
    q_b, r_b = np.linalg.qr(params.beta)
    u, s, vt = np.linalg.svd(r_t @ r_b.T)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateInitializationError("interaction term is rank deficient")
    scale = np.sqrt(n - 1)
    new_theta = (q_t @ u) * scale
    new_beta = (q_b @ vt.T) * (s / scale)
    new_psi = params.psi + params.beta @ means
    return params.replace(theta=new_theta, beta=new_beta, psi=new_psi)


def _apply_signs(params: ModelParams, signs) -> ModelParams:
    signs = np.asarray(signs, dtype=float)
    return params.replace(theta=params.theta * signs, beta=params.beta * signs)


def _resolve_doc(doc, doc_ids) -> int:
    if isinstance(doc, (int, np.integer)):
        return int(doc)
    if doc_ids is None or doc not in doc_ids:
        raise KeyError(f"anchor document {doc!r} not found")
    return doc_ids.index(doc)


def anchor_signs(
    params: ModelParams, reference_theta: np.ndarray, anchor: dict | None = None
) -> ModelParams:
    """Fix each dimension's sign.

    By default a column is flipped when it correlates negatively with the
    matching ``reference_theta`` column. An ``anchor`` entry
    ``{k: (doc_low, doc_high)}`` instead requires
    ``theta[doc_low, k] < theta[doc_high, k]``.
    """
    anchor = anchor or {}
    signs = np.ones(params.k_dims)
    doc_ids = list(params.doc_ids) if params.doc_ids is not None else None
    for k in range(params.k_dims):
        if k in anchor:
            lo, hi = (_resolve_doc(d, doc_ids) for d in anchor[k])
            if params.theta[lo, k] > params.theta[hi, k]:
                signs[k] = -1.0
        elif reference_theta is not None:
            c = np.dot(
                params.theta[:, k] - params.theta[:, k].mean(),
                reference_theta[:, k] - reference_theta[:, k].mean(),
            )
            if c < 0:
                signs[k] = -1.0
    return _apply_signs(params, signs)


# -- starting values --------------------------------------------------------


def initial_values(matrix: DocumentFeatureMatrix, k_dims: int, offset: float = SVD_OFFSET) -> ModelParams:
    """Descriptive starting values generalized to K dimensions.

    psi_j is the log mean count of feature j; alpha_i the log ratio of
    document i's mean count to the first document's. The residual
    log(omega + offset) - alpha - psi is double-centered and decomposed by
    SVD: the first K left
    singular vectors start theta, the right ones scaled by the singular
    values start beta. theta is then standardized and orthogonalized with
    compensating changes to beta and psi.
    """
    n_docs, n_feat = matrix.shape
    if not 1 <= k_dims < min(n_docs, n_feat):
        raise ValueError(f"k_dims={k_dims} must satisfy 1 <= K < min(I, J) = {min(n_docs, n_feat)}")
    counts = matrix.dense().astype(float)
    psi = np.log(counts.mean(axis=0))
    row_means = counts.mean(axis=1)
    alpha = np.log(row_means / row_means[0])
    resid = np.log(counts + offset) - alpha[:, None] - psi[None, :]
    # the offset leaves a row effect tied to document length; remove it so
    # the leading singular vectors carry positions rather than verbosity
    resid = resid - resid.mean(axis=0) - resid.mean(axis=1)[:, None] + resid.mean()
    u, s, vt = np.linalg.svd(resid, full_matrices=False)
    if s[0] <= 1e-12 or np.ptp(u[:, :k_dims], axis=0).min() <= 1e-10:
        raise DegenerateInitializationError(
            "residual matrix has no document variation; cannot initialize positions"
        )
    theta = u[:, :k_dims]
    beta = vt[:k_dims].T * s[:k_dims]
    params = ModelParams(
        alpha, psi, beta, theta, doc_ids=matrix.doc_ids, feature_ids=matrix.feature_ids
    )
    return standardize(params)


# -- feasibility band -------------------------------------------------------


@dataclass(frozen=True)
class EpsilonChoice:
    eps_mean: float
    eps_var: float
    eps_cov: float
    eps_final: float
    n_used: int
    sig_level: float
    overridden: bool = False

    def to_dict(self) -> dict:
        return {
            "eps_mean": self.eps_mean,
            "eps_var": self.eps_var,
            "eps_cov": self.eps_cov,
            "eps_final": self.eps_final,
            "n_used": self.n_used,
            "sig_level": self.sig_level,
            "overridden": self.overridden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpsilonChoice":
        return cls(**d)


def choose_epsilon(n: int, sig_level: float = 0.05, override: float | None = None) -> EpsilonChoice:
    """Half-width of the band around mean 0, variance 1 and covariance 0.

    With z the upper ``sig_level/2`` normal quantile: the mean band is
    z / sqrt(n), the covariance band z / sqrt(n - 1), and the variance band
    comes from the two chi-square(n - 1) quantiles. The final band is the
    larger of the variance and covariance bands (the covariance band always
    exceeds the mean band).
    """
    if n < 2:
        raise ValueError(f"need n >= 2 documents to size the band, got {n}")
    if not 0.0 < sig_level < 1.0:
        raise ValueError("sig_level must lie in (0, 1)")
    z = stats.norm.ppf(1.0 - sig_level / 2.0)
    dof = n - 1
    chi_lo = stats.chi2.ppf(sig_level / 2.0, dof)
    chi_hi = stats.chi2.ppf(1.0 - sig_level / 2.0, dof)
    eps_mean = z / np.sqrt(n)
    eps_cov = z / np.sqrt(n - 1)
    eps_var = max(abs(dof / chi_lo - 1.0), abs(dof / chi_hi - 1.0))
    assert eps_cov >= eps_mean
    eps_final = max(eps_var, eps_cov)
    if override is not None:
        if not override > 0:
            raise ValueError("epsilon override must be positive")
        eps_final = float(override)
    return EpsilonChoice(
        float(eps_mean), float(eps_var), float(eps_cov), float(eps_final), int(n), float(sig_level),
        overridden=override is not None,
    )


# -- results ----------------------------------------------------------------


def constraint_residuals(theta: np.ndarray) -> dict[str, list[float]]:
    means, variances, covs = constraint_moments(theta)
    return {
        "mean": np.abs(means).tolist(),
        "var": np.abs(variances - 1.0).tolist(),
        "cov": np.abs(covs).tolist(),
    }


def max_residual(residuals: dict) -> float:
    return max((v for vals in residuals.values() for v in vals), default=0.0)


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    converged: bool
    iterations: int
    final_loglik: float
    constraint_residuals: dict
    epsilon: EpsilonChoice
    method: str
    config: FitConfig
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    def replace(self, **changes) -> "FitResult":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "version": FIT_VERSION,
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_loglik": self.final_loglik,
            "residuals": self.constraint_residuals,
            "epsilon": self.epsilon.to_dict(),
            "config": self.config.to_dict(),
            "diagnostics": self.diagnostics,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("version") != FIT_VERSION:
            raise ValueError(f"unsupported fit version {d.get('version')!r}")
        return cls(
            params=ModelParams.from_dict(d["params"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            final_loglik=float(d["final_loglik"]),
            constraint_residuals=d["residuals"],
            epsilon=EpsilonChoice.from_dict(d["epsilon"]),
            method=d["method"],
            config=FitConfig.from_dict(d["config"]),
            diagnostics=d.get("diagnostics", {}),
        )


def divergent_parameters(params: ModelParams, limit: float = DIVERGENCE_LIMIT) -> list[str]:
    """Names of coefficients whose magnitude exceeds ``limit`` (separation)."""
    feats = params.feature_ids or [str(j) for j in range(params.n_features)]
    docs = params.doc_ids or [str(i) for i in range(params.n_docs)]
    out = []
    for j, k in zip(*np.nonzero(np.abs(params.beta) > limit)):
        out.append(f"beta[{feats[j]},{k}]")
    for j in np.flatnonzero(np.abs(params.psi) > limit):
        out.append(f"psi[{feats[j]}]")
    for i in np.flatnonzero(np.abs(params.alpha) > limit):
        out.append(f"alpha[{docs[i]}]")
    return out


def _finish(matrix, params, reference_theta, config, epsilon, method, converged, iterations, diagnostics):
    # the likelihood is flat along affine maps of theta, so every point of the
    # band is optimal; report the exactly standardized representative
    params = center_feature_weights(params)
    if config.rotation == "principal" and params.k_dims > 1:
        params = principal_axes(params)
    else:
        params = pin_first_alpha(_normalize_positions(params))
    params = anchor_signs(params, reference_theta, config.anchor)
    diagnostics["divergent"] = divergent_parameters(params)
    if diagnostics["divergent"]:
        log.warning("divergent coefficients (|value| > %g): %s", DIVERGENCE_LIMIT, diagnostics["divergent"][:10])
    residuals = constraint_residuals(params.theta)
    if converged and max_residual(residuals) > epsilon.eps_final:
        converged = False
        diagnostics["message"] = "final positions violate the feasibility band"
    return FitResult(
        params=params,
        converged=converged,
        iterations=iterations,
        final_loglik=log_likelihood(matrix, params),
        constraint_residuals=residuals,
        epsilon=epsilon,
        method=method,
        config=config,
        diagnostics=diagnostics,
    )


def _starting_point(matrix, config, start):
    if start is None:
        return initial_values(matrix, config.k_dims)
    if start.k_dims != config.k_dims:
        raise ValueError(f"start has K={start.k_dims}, config asks for K={config.k_dims}")
    start.check_matches(matrix)
    return start.replace(doc_ids=matrix.doc_ids, feature_ids=matrix.feature_ids)


# -- conditional maximization (K = 1 algorithm) ----------------------------


def _poisson_newton(counts, design, offset, coef, max_iter=100, tol=1e-10, lower=None, upper=None):
    """Independent Poisson regressions, one per row of ``counts``.

    Row u solves max_p sum_n counts[u,n] eta - exp(eta) with
    eta = offset + design @ p, starting from ``coef[u]``. Newton steps are
    projected onto the box ``[lower, upper]`` (per coefficient, optional) and
    halved per unit until the unit's log-likelihood does not decrease.
    """
    p = design.shape[1]
    lower = np.full(p, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(p, np.inf) if upper is None else np.asarray(upper, dtype=float)
    coef = np.clip(coef, lower, upper)

    def unit_ll(c, rows):
        eta = offset[None, :] + c @ design.T
        with np.errstate(over="ignore"):
            return np.sum(counts[rows] * eta - np.exp(eta), axis=1), eta

    ll, eta = unit_ll(coef, slice(None))
    active = np.arange(coef.shape[0])
    for _ in range(max_iter):
        if active.size == 0:
            break
        cur, cur_ll = coef[active], ll[active]
        with np.errstate(over="ignore", invalid="ignore"):
            lam = np.exp(eta[active])
            grad = (counts[active] - lam) @ design
            hess = np.einsum("un,np,nq->upq", lam, design, design) + 1e-12 * np.eye(p)
        step = np.linalg.solve(hess, grad[..., None])[..., 0]
        t = np.ones(active.size)
        new = np.clip(cur + step, lower, upper)
        new_ll, new_eta = unit_ll(new, active)
        floor = cur_ll - 1e-13 * np.abs(cur_ll)
        bad = ~(new_ll >= floor) | ~np.isfinite(new_ll)
        for _halve in range(40):
            if not bad.any():
                break
            t[bad] *= 0.5
            new[bad] = np.clip(cur[bad] + t[bad, None] * step[bad], lower, upper)
            new_ll[bad], new_eta[bad] = unit_ll(new[bad], active[bad])
            bad = ~(new_ll >= floor) | ~np.isfinite(new_ll)
        # units whose line search failed keep their current coefficients
        new[bad] = cur[bad]
        new_ll[bad] = cur_ll[bad]
        new_eta[bad] = eta[active][bad]
        moved = np.max(np.abs(new - cur), axis=1)
        coef[active] = new
        ll[active] = new_ll
        eta[active] = new_eta
        active = active[(moved > tol) & ~bad]
    return coef


def _doc_step(counts, params: ModelParams) -> ModelParams:
    design = np.column_stack([np.ones(params.n_features), params.beta])
    coef0 = np.column_stack([params.alpha, params.theta])
    coef = _poisson_newton(counts, design, params.psi, coef0)
    return params.replace(alpha=coef[:, 0], theta=coef[:, 1:])


def _feature_step(counts_t, params: ModelParams, beta_bound: float | None = None) -> ModelParams:
    design = np.column_stack([np.ones(params.n_docs), params.theta])
    coef0 = np.column_stack([params.psi, params.beta])
    bound = np.inf if beta_bound is None else beta_bound
    k = params.k_dims
    lower = np.concatenate([[-np.inf], np.full(k, -bound)])
    upper = np.concatenate([[np.inf], np.full(k, bound)])
    coef = _poisson_newton(counts_t, design, params.alpha, coef0, lower=lower, upper=upper)
    return params.replace(psi=coef[:, 0], beta=coef[:, 1:])


def _normalize_positions(params: ModelParams) -> ModelParams:
    """Rescale theta to mean 0, variance 1; beta and psi absorb the change."""
    m = params.theta.mean(axis=0)
    s = params.theta.std(axis=0, ddof=1)
    if np.any(s <= 0):
        raise EstimationError("positions collapsed to a single point")
    return params.replace(
        theta=(params.theta - m) / s,
        beta=params.beta * s,
        psi=params.psi + params.beta @ m,
    )


def fit_wordfish(
    matrix: DocumentFeatureMatrix, config: FitConfig | None = None, start: ModelParams | None = None
) -> FitResult:
    """One-dimensional fit by conditional maximization.

    Each iteration fits per-document Poisson regressions for (alpha_i,
    theta_i) given the feature parameters, normalizes theta to mean 0 and
    variance 1, then fits per-feature regressions for (psi_j, beta_j) given
    the document parameters. Stops when the relative change in
    log-likelihood over an iteration drops below ``config.grad_tol``.
    """
    config = config or FitConfig(k_dims=1)
    if config.k_dims != 1:
        raise ValueError("fit_wordfish is one-dimensional; use fit_wordkrill for K > 1")
    config.check_matrix(matrix)
    epsilon = choose_epsilon(matrix.n_docs, config.sig_level, config.epsilon_override)
    params = _starting_point(matrix, config, start)
    reference = params.theta.copy()
    counts = matrix.dense().astype(float)
    counts_t = np.ascontiguousarray(counts.T)

    ll = log_likelihood(counts, params)
    trace = [ll]
    half_step_decreases = 0
    converged = False
    it = 0
    last_good = params
    try:
        for it in range(1, config.max_iters + 1):
            ll_prev = ll
            last_good = params
            params = _doc_step(counts, params)
            ll_doc = log_likelihood(counts, params)
            params = pin_first_alpha(_normalize_positions(params))
            params = _feature_step(counts_t, params, config.beta_bound)
            ll = log_likelihood(counts, params)
            tol = 1e-9 * abs(ll_prev)
            if ll_doc < ll_prev - tol or ll < ll_doc - tol:
                half_step_decreases += 1
            trace.append(ll)
            if abs(ll - ll_prev) <= config.grad_tol * abs(ll_prev):
                converged = True
                break
        message = "converged" if converged else "maximum iterations reached"
    except (ModelOverflowError, EstimationError, np.linalg.LinAlgError) as exc:
        message = f"aborted: {exc}"
        converged = False
        params = last_good
    params = pin_first_alpha(_normalize_positions(params))
    diagnostics = {
        "message": message,
        "loglik_trace": trace,
        "half_step_decreases": half_step_decreases,
    }
    return _finish(matrix, params, reference, config, epsilon, "conditional", converged, it, diagnostics)


# -- joint constrained fit --------------------------------------------------


class _JointProblem:
    """Flattened parameter vector (alpha_2..alpha_I, psi, beta, theta) and objective."""

    def __init__(self, counts: np.ndarray, k_dims: int):
        self.counts = counts
        self.n_docs, self.n_feat = counts.shape
        self.k = k_dims
        self.scale = float(counts.sum())
        self.sizes = (self.n_docs - 1, self.n_feat, self.n_feat * k_dims, self.n_docs * k_dims)
        self.bounds = np.cumsum((0,) + self.sizes)

    def pack(self, params: ModelParams) -> np.ndarray:
        return np.concatenate(
            [params.alpha[1:], params.psi, params.beta.ravel(), params.theta.ravel()]
        )

    def unpack(self, x):
        b = self.bounds
        alpha = np.concatenate([[0.0], x[b[0]:b[1]]])
        psi = x[b[1]:b[2]]
        beta = x[b[2]:b[3]].reshape(self.n_feat, self.k)
        theta = x[b[3]:b[4]].reshape(self.n_docs, self.k)
        return alpha, psi, beta, theta

    def neg_loglik(self, x):
        """Scaled negative log-likelihood (without the factorial constant) and gradient."""
        alpha, psi, beta, theta = self.unpack(x)
        eta = alpha[:, None] + psi[None, :] + theta @ beta.T
        if eta.max() > 700:
            return np.inf, np.zeros_like(x)
        lam = np.exp(eta)
        f = (lam.sum() - np.sum(self.counts * eta)) / self.scale
        resid = (lam - self.counts) / self.scale
        grad = np.concatenate(
            [
                resid.sum(axis=1)[1:],
                resid.sum(axis=0),
                (resid.T @ theta).ravel(),
                (resid @ beta).ravel(),
            ]
        )
        return f, grad


def _constraints(theta: np.ndarray, eps: float):
    """Inequalities g(theta) <= 0 for the band, and their Jacobian w.r.t. theta.

    Returns g of length 2 * (2K + K(K-1)/2) and a list of (I, K) gradient arrays.
    """
    n, k = theta.shape
    m = theta.mean(axis=0)
    c = theta - m
    cov = c.T @ c / (n - 1)
    g, jac = [], []
    for a in range(k):
        dm = np.zeros((n, k))
        dm[:, a] = 1.0 / n
        g += [m[a] - eps, -m[a] - eps]
        jac += [dm, -dm]
    for a in range(k):
        dv = np.zeros((n, k))
        dv[:, a] = 2.0 * c[:, a] / (n - 1)
        g += [cov[a, a] - 1.0 - eps, 1.0 - eps - cov[a, a]]
        jac += [dv, -dv]
    for a in range(k):
        for b in range(a + 1, k):
            dc = np.zeros((n, k))
            dc[:, a] = c[:, b] / (n - 1)
            dc[:, b] = c[:, a] / (n - 1)
            g += [cov[a, b] - eps, -cov[a, b] - eps]
            jac += [dc, -dc]
    return np.array(g), jac


def fit_wordkrill(
    matrix: DocumentFeatureMatrix, config: FitConfig | None = None, start: ModelParams | None = None
) -> FitResult:
    """Joint maximum likelihood over (alpha, psi, beta, theta) within the feasibility band.

    Every column of theta must have |mean| <= eps and |variance - 1| <= eps,
    and every pair |covariance| <= eps, with eps from :func:`choose_epsilon`
    for n = I documents unless overridden. alpha_1 is fixed at 0. The
    constrained problem is solved by an augmented Lagrangian (inequality
    form) whose subproblems are minimized with L-BFGS-B.
    """
    config = config or FitConfig()
    config.check_matrix(matrix)
    epsilon = choose_epsilon(matrix.n_docs, config.sig_level, config.epsilon_override)
    eps = epsilon.eps_final
    # aim slightly inside the band so small multiplier errors stay feasible
    eps_inner = eps * (1.0 - 1e-3)

    params = pin_first_alpha(_starting_point(matrix, config, start))
    if max_residual(constraint_residuals(params.theta)) > eps:
        params = standardize(params)
    reference = params.theta.copy()

    counts = matrix.dense().astype(float)
    problem = _JointProblem(counts, config.k_dims)
    theta_slice = slice(problem.bounds[3], problem.bounds[4])
    n_con = 2 * (2 * config.k_dims + config.k_dims * (config.k_dims - 1) // 2)
    mult = np.zeros(n_con)
    rho = 10.0

    beta_slice = slice(problem.bounds[2], problem.bounds[3])

    def objective(x):
        f, grad = problem.neg_loglik(x)
        if not np.isfinite(f):
            return f, grad
        grad = grad.copy()
        # alpha_i += a (theta_i - theta_1), psi += a theta_1, beta -= a leaves every
        # rate unchanged; pin that direction at mean(beta) = 0 so the beta box binds
        beta_mean = x[beta_slice].reshape(problem.n_feat, problem.k).mean(axis=0)
        f += 0.5 * GAUGE_WEIGHT * np.sum(beta_mean**2)
        grad[beta_slice] += np.tile(GAUGE_WEIGHT * beta_mean / problem.n_feat, problem.n_feat)
        theta = x[theta_slice].reshape(problem.n_docs, problem.k)
        g, jac = _constraints(theta, eps_inner)
        shifted = np.maximum(0.0, mult + rho * g)
        f += (np.sum(shifted**2) - np.sum(mult**2)) / (2.0 * rho)
        gt = np.zeros_like(theta)
        for w, jg in zip(shifted, jac):
            if w:
                gt += w * jg
        grad[theta_slice] += gt.ravel()
        return f, grad

    box = None
    if config.beta_bound is not None:
        b = problem.bounds
        lo = np.full(b[-1], -np.inf)
        hi = np.full(b[-1], np.inf)
        lo[b[2]:b[3]] = -config.beta_bound
        hi[b[2]:b[3]] = config.beta_bound
        box = optimize.Bounds(lo, hi)
    x = problem.pack(params)
    if box is not None:
        x = np.clip(x, box.lb, box.ub)
    f_prev = problem.neg_loglik(x)[0]
    violation_prev = np.inf
    converged = False
    message = "maximum outer iterations reached"
    inner_iters = 0
    it = 0
    for it in range(1, config.max_iters + 1):
        res = optimize.minimize(
            objective,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": 20000, "maxcor": 20, "ftol": config.inner_ftol, "gtol": config.inner_gtol},
        )
        inner_iters += int(res.nit)
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            message = f"inner solver failed: {res.message}"
            break
        x = res.x
        f_now = problem.neg_loglik(x)[0]
        theta = x[theta_slice].reshape(problem.n_docs, problem.k)
        g, _ = _constraints(theta, eps_inner)
        mult = np.maximum(0.0, mult + rho * g)
        violation = max(0.0, float(g.max()) + (eps_inner - eps))
        feasible = violation <= 0.0
        small_change = abs(f_now - f_prev) <= config.grad_tol * max(abs(f_now), 1.0)
        stationary = res.success or res.status == 2  # status 2: no further progress possible
        f_prev = f_now
        if feasible and small_change and stationary:
            converged = True
            message = "converged"
            break
        if not feasible and violation > 0.25 * violation_prev:
            rho = min(rho * 10.0, 1e10)
        violation_prev = violation if not feasible else np.inf
    if not converged and it >= config.max_iters:
        message = "maximum outer iterations reached"

    alpha, psi, beta, theta = problem.unpack(x)
    params = params.replace(alpha=alpha, psi=psi, beta=beta, theta=theta)
    raw = constraint_residuals(params.theta)
    if max_residual(raw) > eps:
        converged = False
        message = "optimizer solution violates the feasibility band"
    diagnostics = {
        "message": message,
        "inner_iterations": inner_iters,
        "penalty": rho,
        "optimizer_residuals": raw,
    }
    return _finish(matrix, params, reference, config, epsilon, "joint", converged, it, diagnostics)


def fit(matrix, config: FitConfig | None = None, method: str = "joint", start: ModelParams | None = None):
    """Dispatch to the joint (``"joint"``) or conditional (``"conditional"``) fitter."""
    if method == "joint":
        return fit_wordkrill(matrix, config, start)
    if method == "conditional":
        return fit_wordfish(matrix, config, start)
    raise ValueError(f"unknown method {method!r}")


# -- alignment --------------------------------------------------------------


def _corr_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    na[na == 0] = 1.0
    nb[nb == 0] = 1.0
    return (a / na).T @ (b / nb)


def align(reference: np.ndarray, candidate):
    """Signed permutation of the candidate's dimensions that best matches ``reference``.

    Columns are assigned to maximize the summed absolute correlation
    (Hungarian algorithm), then each is flipped to correlate nonnegatively
    with its reference column. ``candidate`` may be a :class:`FitResult` or
    :class:`ModelParams`; the same type is returned. beta is transformed
    alongside theta so the likelihood is unchanged.
    """
    params = candidate.params if isinstance(candidate, FitResult) else candidate
    reference = np.asarray(reference, dtype=float)
    if reference.ndim == 1:
        reference = reference[:, None]
    if reference.shape != params.theta.shape:
        raise ValueError(f"reference shape {reference.shape} != candidate {params.theta.shape}")
    corr = _corr_matrix(reference, params.theta)
    rows, cols = optimize.linear_sum_assignment(-np.abs(corr))
    order = cols[np.argsort(rows)]
    signs = np.where(corr[np.arange(len(order)), order] < 0, -1.0, 1.0)
    aligned = params.replace(theta=params.theta[:, order] * signs, beta=params.beta[:, order] * signs)
    if isinstance(candidate, FitResult):
        return candidate.replace(params=aligned, constraint_residuals=constraint_residuals(aligned.theta))
    return aligned
