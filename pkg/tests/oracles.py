"""Independent reference computations shared by the tests."""

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def normal_quantile(p: float) -> float:
    return float(mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1))


def chi2_quantile(p: float, dof: int) -> float:
    """Root of the regularized lower incomplete gamma CDF."""
    p = mp.mpf(p)
    cdf = lambda x: mp.gammainc(mp.mpf(dof) / 2, 0, x / 2, regularized=True)
    lo, hi = mp.mpf(0), mp.mpf(dof) + 40 * mp.sqrt(dof) + 60
    for _ in range(120):
        mid = (lo + hi) / 2
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def epsilon_oracle(n: int, sig: float) -> dict:
    z = normal_quantile(1 - sig / 2)
    lo, hi = chi2_quantile(sig / 2, n - 1), chi2_quantile(1 - sig / 2, n - 1)
    eps_var = max(abs((n - 1) / lo - 1), abs((n - 1) / hi - 1))
    return {"eps_mean": z / np.sqrt(n), "eps_cov": z / np.sqrt(n - 1), "eps_var": eps_var}


def central_hessian(f, x, h=1e-4):
    """Second derivatives of scalar f by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            ea = np.zeros(n)
            eb = np.zeros(n)
            ea[a] = h
            eb[b] = h
            out[a, b] = out[b, a] = (
                f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)
            ) / (4 * h * h)
    return out
