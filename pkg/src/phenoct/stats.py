"""Shared numeric conventions."""
import numpy as np


def percentile(values, p):
    """Linear interpolation between closest ranks at index ``p/100 * (n - 1)``.

    This one convention is used for every percentile in the package: HU
    summaries, slice diameters, imputation medians and bootstrap intervals.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("percentile of empty sample")
    ps = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if np.any((ps < 0) | (ps > 100)):
        raise ValueError("percentile must lie in [0, 100]")
    pos = ps / 100.0 * (x.size - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, x.size - 1)
    frac = pos - lo
    out = x[lo] + frac * (x[hi] - x[lo])
    # exact endpoints when the bracketing ranks are equal
    out = np.where(x[hi] == x[lo], x[lo], out)
    return out if np.ndim(p) else float(out[0])


def median(values):
    return percentile(values, 50.0)
