"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass

import numpy as np

from .tape import NumericError, Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple  # (tensor index, flat index, analytic, numeric)

    def passed(self, tol):
        return self.max_rel_error < tol


def _value(fn):
    v = float(np.asarray(fn().data).reshape(()))
    if not np.isfinite(v):
        raise NumericError("grad_check: non-finite loss value")
    return v


def grad_check(fn, point, eps=1e-6, n_samples=None, rng=None, floor=1e-8, order=2):
    """Compare tape gradients of scalar ``fn()`` with central differences.

    ``point`` is a sequence of tensors that ``fn`` reads. Each checked entry
    contributes ``|a - n| / max(|a|, |n|, floor)``. With ``n_samples`` only that
    many scalar entries (drawn uniformly over all entries of ``point``) are
    perturbed. ``order=4`` uses the five-point stencil.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    point = list(point)
    with Tape() as tape:
        loss = fn()
    tape.backward(loss, params=point)
    analytic = [t.grad.copy() for t in point]

    sizes = np.array([t.size for t in point])
    total = int(sizes.sum())
    if n_samples is None or n_samples >= total:
        picks = np.arange(total)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        picks = np.sort(rng.choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = (None, None, 0.0, 0.0)
    max_err = 0.0
    for flat in picks:
        ti = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[ti])
        t = point[ti]
        orig = t.data
        base = orig.copy().reshape(-1)

        def at(delta):
            arr = base.copy()
            arr[j] += delta
            t.data = arr.reshape(orig.shape)
            return _value(fn)

        try:
            if order == 2:
                num = (at(eps) - at(-eps)) / (2.0 * eps)
            elif order == 4:
                # differences first, so an unaffected entry gives exactly zero
                num = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps)
            else:
                raise ValueError("grad_check: order must be 2 or 4")
        finally:
            t.data = orig
        a = float(analytic[ti].reshape(-1)[j])
        err = abs(a - num) / max(abs(a), abs(num), floor)
        if err >= max_err:
            max_err = err
            worst = (ti, j, a, num)
    return GradCheckReport(max_err, len(picks), worst)
