"""Dormand-Prince 5(4) integrator with per-step error control.

Kept in-house (rather than ``scipy.integrate.solve_ivp``) because callers need
a projection hook applied after every accepted step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StiffnessError

# Butcher tableau, Dormand & Prince (1980)
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A = [np.array(row) for row in _A]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class Controls:
    rtol: float = 1e-9
    atol: float = 1e-12
    h0: float | None = None
    hmin: float = 1e-12
    hmax: float = np.inf
    max_steps: int = 10_000_000


@dataclass
class Solution:
    t: np.ndarray
    y: np.ndarray
    n_steps: int
    n_rejected: int
    max_projection: float


def dopri5(f, y0, t_end, controls: Controls = Controls(), t_eval=None, project=None, t0=0.0):
    """Integrate ``y' = f(y)`` from ``t0`` to ``t_end``.

    Steps are clipped so that every time in ``t_eval`` is hit exactly; without
    ``t_eval`` every accepted step is recorded. ``project(y) -> (y, size)`` is
    applied after each accepted step and the largest correction is reported.
    """
    y = np.array(y0, dtype=float)
    if t_eval is None:
        targets = np.array([t_end])
        record_all = True
    else:
        targets = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(targets) < 0) or targets[0] < t0 or targets[-1] > t_end + 1e-12:
            raise ValueError("t_eval must be sorted and inside [t0, t_end]")
        record_all = False

    ts, ys = [t0], [y.copy()]
    if not record_all and targets[0] == t0:
        targets = targets[1:]
    t = t0
    k1 = f(y)
    h = controls.h0
    if h is None:
        scale = controls.atol + controls.rtol * np.abs(y)
        d0 = np.linalg.norm(y / scale) / np.sqrt(y.size)
        d1 = np.linalg.norm(k1 / scale) / np.sqrt(y.size)
        h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
        h = min(h, controls.hmax, max(t_end - t0, controls.hmin))
    n_steps = n_rej = 0
    max_proj = 0.0
    target_idx = 0
    k = np.empty((7, y.size))
    while target_idx < len(targets):
        if n_steps >= controls.max_steps:
            raise StiffnessError("step budget exhausted", t)
        t_next = targets[target_idx]
        hit = False
        step = min(h, controls.hmax)
        if t + step >= t_next:
            step = t_next - t
            hit = True
        if step <= 0:
            target_idx += 1
            continue
        k[0] = k1
        for i in range(1, 7):
            k[i] = f(y + step * (_A[i] @ k[:i]))
        y_new = y + step * (_B5 @ k)
        err_vec = step * (_E @ k)
        scale = controls.atol + controls.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err <= 1.0:
            t = t_next if hit else t + step
            if project is not None:
                y_new, size = project(y_new)
                max_proj = max(max_proj, size)
                k1 = f(y_new)
            else:
                k1 = k[6]
            y = y_new
            n_steps += 1
            if record_all or hit:
                ts.append(t)
                ys.append(y.copy())
            if hit:
                target_idx += 1
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            if not hit:
                h = step * min(5.0, max(0.2, fac))
        else:
            n_rej += 1
            h = step * max(0.1, 0.9 * err ** -0.2)
            if h < controls.hmin:
                raise StiffnessError(f"step size {h:.3e} below minimum at t={t:.6g}", t)
    return Solution(np.array(ts), np.array(ys), n_steps, n_rej, max_proj)
