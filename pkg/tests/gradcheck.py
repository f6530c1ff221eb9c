"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from agtcnet.autodiff import Tensor

STEP = 1e-5
# Gradients that are identically zero (e.g. a bias a softmax is invariant to)
# only carry finite-difference noise; below this scale the error is absolute.
SCALE_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error: max |a - n| / max(|a|, |n|, floor) over the tensor."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), SCALE_FLOOR)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn, inputs, seed=0, step=STEP, max_entries=None):
    """Compare autodiff gradients of ``sum(w * fn(*inputs))`` against central differences.

    ``fn`` must be a pure function of the input tensors (freeze any dropout
    masks by re-seeding inside ``fn``). Returns the worst relative error per
    input. ``max_entries`` limits how many coordinates per input are probed.
    """
    out = fn(*inputs)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    out.backward(weights)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    probe = np.random.default_rng(seed + 1)
    errors = []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = probe.choice(flat.size, size=max_entries, replace=False)
        num = np.zeros(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = float((fn(*inputs).data * weights).sum())
            flat[i] = orig - step
            down = float((fn(*inputs).data * weights).sum())
            flat[i] = orig
            num[n] = (up - down) / (2 * step)
        errors.append(relative_error(a.reshape(-1)[idx], num))
    return errors


def param(shape, rng, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
