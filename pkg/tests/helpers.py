"""Shared test utilities: finite-difference gradient checking.

The numerical side only ever calls forward passes, so it stays
independent of every backward implementation it is used to check.
"""

import numpy as np

FD_STEP = 1e-2      # near-optimal central-difference step for float32
FD_RTOL = 1e-3
FD_FLOOR = 0.05     # rel-error denominator floor; guards near-zero entries


def numerical_gradient(f, x, step=FD_STEP):
    """Central finite differences of scalar f() w.r.t. array x.

    x is perturbed in place and restored, so f may close over the object
    that owns it (layer parameter or input buffer).
    """
    grad = np.zeros(x.size, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i].copy()
        flat[i] = orig + step
        fp = float(f())
        flat[i] = orig - step
        fm = float(f())
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def rel_errors(analytic, numeric, floor=FD_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def assert_grad_close(analytic, numeric, rtol=FD_RTOL, floor=FD_FLOOR, what="gradient"):
    errs = rel_errors(analytic, numeric, floor)
    worst = float(errs.max())
    assert worst < rtol, f"{what}: max relative error {worst:.3e} >= {rtol}"


def probe_weights(shape, rng):
    """Fixed random probe so the scalar loss sum(w * y) has O(1) gradients."""
    w = rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return w.astype(np.float32)


def check_layer_gradients(forward, backward, arrays, rng, rtol=FD_RTOL, floor=FD_FLOOR):
    """FD-check a layer against probe loss L = sum(w * forward()).

    forward() -> output tensor (recomputed per FD probe); backward(w) ->
    dict name -> analytic gradient; arrays: name -> parameter/input array
    owned by the closure. Returns the names checked.
    """
    y = forward()
    w = probe_weights(y.shape, rng)
    analytic = backward(w)

    def loss():
        return np.sum(forward().astype(np.float64) * w)

    for name, arr in arrays.items():
        numeric = numerical_gradient(loss, arr)
        assert_grad_close(analytic[name], numeric, rtol=rtol, floor=floor, what=name)
    return list(arrays)
