"""Central finite-difference gradient checking.

The numerical side only ever calls the forward function; it never touches
the tape, so it is an independent oracle for :meth:`Tape.backward`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, precision


def numerical_grad(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-3,
    dtype=np.float64,
) -> list[np.ndarray]:
    """Central differences of the scalar ``fn()`` w.r.t. each input.

    Inputs are evaluated in ``dtype`` storage for the duration of the call
    and restored afterwards.  The divisor is the perturbation actually
    representable in ``dtype``, not the nominal ``2h``.
    """
    saved = [t.data for t in inputs]
    out = []
    try:
        with precision(dtype):
            for t in inputs:
                t.data = t.data.astype(dtype)
            for t in inputs:
                flat = t.data.reshape(-1)
                g = np.zeros(flat.size)
                for i in range(flat.size):
                    v = flat[i]
                    hi = dtype(v + dtype(h))
                    lo = dtype(v - dtype(h))
                    flat[i] = hi
                    fp = float(fn().data.reshape(-1)[0])
                    flat[i] = lo
                    fm = float(fn().data.reshape(-1)[0])
                    flat[i] = v
                    g[i] = (fp - fm) / (float(hi) - float(lo))
                out.append(g.reshape(t.shape))
    finally:
        for t, d in zip(inputs, saved):
            t.data = d
    return out


def analytic_grad(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = fn()
        tape.backward(loss, inputs)
        return [t.grad.astype(np.float64) for t in inputs]
    finally:
        for t, f in zip(inputs, flags):
            t.requires_grad = f


@dataclass
class GradCheck:
    ok: bool
    max_rel_err: float
    max_abs_err: float
    worst: str

    def __bool__(self) -> bool:
        return self.ok


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    rtol: float = 2e-3,
    atol: float = 1e-5,
    h: float = 1e-3,
    dtype=np.float64,
) -> GradCheck:
    """Compare tape gradients to finite differences element by element.

    An element passes when its absolute error is at most ``atol`` or its
    error relative to the numerical value is at most ``rtol``.
    """
    ana = analytic_grad(fn, inputs)
    num = numerical_grad(fn, inputs, h=h, dtype=dtype)
    ok, max_rel, max_abs, worst = True, 0.0, 0.0, ""
    for k, (a, n) in enumerate(zip(ana, num)):
        err = np.abs(a - n)
        rel = err / np.maximum(np.abs(n), 1e-30)
        bad = (err > atol) & (rel > rtol)
        if bad.any():
            ok = False
            i = int(np.argmax(np.where(bad, rel, -1)))
            worst = f"input {k} flat[{i}]: tape={a.reshape(-1)[i]:.6g} fd={n.reshape(-1)[i]:.6g}"
        mask = err > atol
        if mask.any():
            max_rel = max(max_rel, float(rel[mask].max()))
        max_abs = max(max_abs, float(err.max()))
    return GradCheck(ok, max_rel, max_abs, worst)
