import math

import numpy as np


def rmse(estimates, truth, index_subset=None) -> float:
    """Root of the time-averaged squared Euclidean error.

    ``estimates`` and ``truth`` have shape ``(T, n_x)``; ``index_subset``
    restricts the error to some state coordinates (e.g. positions only).
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"estimates {est.shape} and truth {tru.shape} differ in shape")
    if est.ndim == 1:
        est, tru = est[:, None], tru[:, None]
    if index_subset is not None:
        idx = list(index_subset)
        est, tru = est[:, idx], tru[:, idx]
    if len(est) == 0:
        raise ValueError("empty sequences")
    err = est - tru
    return math.sqrt(math.fsum(np.sum(err * err, axis=1)) / len(err))


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation with exactly rounded sums.

    Using ``math.fsum`` makes the aggregates reproducible from the per-run CSV
    regardless of summation order.
    """
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(vals) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
