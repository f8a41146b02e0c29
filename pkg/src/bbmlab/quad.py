"""Log-domain trapezoid quadrature."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def trapz_log_weights(x: np.ndarray) -> np.ndarray:
    """log of the trapezoid weights for abscissae ``x`` (strictly increasing)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two abscissae")
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return np.log(w)


def log_trapz(logf, x, axis: int = -1):
    """log of the trapezoid integral of exp(logf) over ``x``.

    ``logf`` may contain -inf. Works along ``axis`` for 2-D input.
    """
    logf = np.asarray(logf, dtype=float)
    lw = trapz_log_weights(x)
    shape = [1] * logf.ndim
    shape[axis] = -1
    return logsumexp(logf + lw.reshape(shape), axis=axis)


def log_cumtrapz(logf, x) -> np.ndarray:
    """Running log-integral: out[k] = log of the trapezoid integral over x[0..k].

    out[0] is -inf.
    """
    logf = np.asarray(logf, dtype=float)
    x = np.asarray(x, dtype=float)
    h = np.diff(x)
    # log of 0.5 h (f_k + f_{k+1}) per panel
    with np.errstate(divide="ignore"):
        panel = np.logaddexp(logf[:-1], logf[1:]) + np.log(0.5 * h)
    out = np.empty_like(logf)
    out[0] = -np.inf
    out[1:] = np.logaddexp.accumulate(panel)
    return out
