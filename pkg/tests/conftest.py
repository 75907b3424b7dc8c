import numpy as np


def fd_gradient(fn, x, h=1e-4):
    """Central-difference gradient of scalar fn at array x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grad_close(analytic, numeric, rel=1e-4, abs_near_zero=1e-6):
    """Relative comparison with an absolute floor near zero."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = (err <= rel * denom) | (err <= abs_near_zero)
    return bool(np.all(ok))
