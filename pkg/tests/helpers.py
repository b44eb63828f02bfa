"""Shared test utilities."""

import numpy as np


def fd_check_params(loss_fn, named_tensors, eps=1e-5, rtol=1e-3, atol=1e-8,
                    max_entries=None, rng=None):
    """Compare analytic gradients of `loss_fn()` (a fresh scalar Tensor per
    call) against central finite differences for every named parameter.

    Perturbs parameter values in place, restoring them afterwards. With
    `max_entries`, only a random subset of each tensor's entries is probed.
    Returns the worst relative error seen.
    """
    named_tensors = list(named_tensors)
    for _, t in named_tensors:
        t.grad = None
    out = loss_fn()
    out.backward()
    grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
             for name, t in named_tensors}
    worst = 0.0
    for name, t in named_tensors:
        flat = t.value.ravel()
        gflat = grads[name].ravel()
        if max_entries is None or flat.size <= max_entries:
            indices = range(flat.size)
        else:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().value)
            flat[i] = orig - eps
            lo = float(loss_fn().value)
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            got = gflat[i]
            err = abs(got - num)
            tol = atol + rtol * abs(num)
            assert err <= tol, (
                f"{name}[{i}]: analytic {got:.8g} vs numeric {num:.8g} "
                f"(err {err:.3g} > tol {tol:.3g})")
            if num != 0.0:
                worst = max(worst, err / abs(num))
    return worst


def rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-12)
