"""Independent reference computations used by the test-suite and ``selftest``.

Nothing here calls the fast code paths it is used to check.
"""
import numpy as np

from .numerics import Tensor, backward, mul, tsum


def naive_conv2d(x, k):
    """Six nested loops over a zero-padded float64 copy of the input."""
    n, cin, h, w = x.shape
    cout = k.shape[0]
    xp = np.zeros((n, cin, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    out = np.zeros((n, cout, h, w))
    for b in range(n):
        for o in range(cout):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for c in range(cin):
                        for ky in range(3):
                            for kx in range(3):
                                acc += xp[b, c, i + ky, j + kx] * k[o, c, ky, kx]
                    out[b, o, i, j] = acc
    return out


def fd_check(fn, arrays, wrt, n_coords=12, eps=1e-3, rng=None):
    """Compare reverse-mode gradients of ``sum(fn(*tensors) * probe)`` with
    central finite differences at sampled coordinates of ``arrays[wrt]``.

    Returns the worst relative error. Evaluation for the differences is in
    float64 on the float32 graph outputs.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.asarray(a, dtype=np.float32) for a in arrays]
    out0 = fn(*[Tensor(a) for a in arrays]).data
    probe = rng.standard_normal(out0.shape).astype(np.float32)

    def loss_value(arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data.astype(np.float64) * probe))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    backward(tsum(mul(out, Tensor(probe))))
    grad = tensors[wrt].grad
    worst = 0.0
    flat = arrays[wrt].reshape(-1)
    for idx in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[wrt].reshape(-1)[idx] += eps
        minus[wrt].reshape(-1)[idx] -= eps
        fd = (loss_value(plus) - loss_value(minus)) / (2 * eps)
        an = float(grad.reshape(-1)[idx])
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-2)
        worst = max(worst, err)
    return worst
