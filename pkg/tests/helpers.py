"""Shared numeric utilities for the test suite.

The central finite-difference oracle lives here: every gradient test in
the suite compares tape gradients against `numeric_grad` of the same
forward map, at step 1e-5 on float64, using a max(1, |exact|)-scaled
relative error.
"""

from __future__ import annotations

import numpy as np

from noisyact.autodiff import Tape

FD_STEP = 1e-5
FD_RTOL = 1e-5
KINK_BAND = 1e-4


def rel_err(approx, exact) -> np.ndarray:
    """|approx - exact| / max(1, |exact|), elementwise."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    return np.abs(approx - exact) / np.maximum(1.0, np.abs(exact))


def numeric_grad(f, x, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function at x, elementwise.

    ``f`` receives the whole (temporarily perturbed) array and returns a
    scalar; the array is restored before returning.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def tape_grads(build, *arrays):
    """Analytic gradients of a tape-built scalar w.r.t. each input array.

    ``build(tape, *var_ids)`` must record a scalar root. Returns a list of
    gradient arrays, one per input, in order.
    """
    tape = Tape()
    var_ids = [tape.leaf(a) for a in arrays]
    root = build(tape, *var_ids)
    grads = tape.backward(root)
    return [grads[v] for v in var_ids]


def check_grads(build, *arrays, rtol: float = FD_RTOL, step: float = FD_STEP):
    """Assert the tape gradient of ``build`` matches finite differences.

    The finite-difference target re-runs the same tape construction on
    the perturbed input, so this checks exactly the program that was
    differentiated.
    """
    analytic = tape_grads(build, *arrays)

    def value_at(args) -> float:
        tape = Tape()
        var_ids = [tape.leaf(a) for a in args]
        return float(tape.value(build(tape, *var_ids)))

    for i, a in enumerate(arrays):
        def f(perturbed, i=i):
            args = list(arrays)
            args[i] = perturbed
            return value_at(args)

        numeric = numeric_grad(f, a, step=step)
        err = rel_err(analytic[i], numeric)
        assert err.max() <= rtol, (
            f"input {i}: max relative error {err.max():.3e} > {rtol:.0e}\n"
            f"analytic={analytic[i]!r}\nnumeric={numeric!r}"
        )
