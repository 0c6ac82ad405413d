"""Batched Dormand-Prince 5(4) integration with section crossing.

Every trajectory keeps its own step size; the batch shrinks as
trajectories cross the target section, get captured or time out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

RHS = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

RUNNING, CROSSED, CAPTURED, TIMEOUT, UNDERFLOW = 0, 1, 2, 3, 4
STATUS_NAMES = {RUNNING: "running", CROSSED: "crossed", CAPTURED: "captured", TIMEOUT: "timeout",
                UNDERFLOW: "underflow"}

H_MAX = 0.01

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def dopri_step(rhs: RHS, x: np.ndarray, y: np.ndarray, h: np.ndarray):
    """One step for every entry; returns the 5th-order state and the error estimate."""
    kx, ky = [], []
    for s in range(7):
        xs, ys = x.copy(), y.copy()
        for j, a in enumerate(_A[s]):
            if a:
                xs += h * a * kx[j]
                ys += h * a * ky[j]
        u, v = rhs(xs, ys)
        kx.append(np.asarray(u, float))
        ky.append(np.asarray(v, float))
    x5 = x + h * sum(b * k for b, k in zip(_B5, kx) if b)
    y5 = y + h * sum(b * k for b, k in zip(_B5, ky) if b)
    ex = h * sum(e * k for e, k in zip(_E, kx) if e)
    ey = h * sum(e * k for e, k in zip(_E, ky) if e)
    return x5, y5, ex, ey


def torus_distance(x, y, p: Sequence[float]) -> np.ndarray:
    dx = np.abs(np.mod(x - p[0] + 0.5, 1.0) - 0.5)
    dy = np.abs(np.mod(y - p[1] + 0.5, 1.0) - 0.5)
    return np.hypot(dx, dy)


@dataclass
class SectionResult:
    x: np.ndarray            # unwrapped x at the crossing (or where integration stopped)
    y: np.ndarray
    t: np.ndarray
    status: np.ndarray
    steps: int

    @property
    def crossed(self) -> np.ndarray:
        return self.status == CROSSED


def integrate_to_section(rhs: RHS, x0, y0, y_target: float = 1.0, tmax: float = 500.0, tol: float = 1e-11,
                         sinks: Sequence[Sequence[float]] = (), capture_radius: float = 1e-3,
                         y_tol: float = 1e-12, h0: float = 1e-3, h_min: float = 1e-14,
                         h_max: float = H_MAX) -> SectionResult:
    """Integrate each start point until y reaches ``y_target`` in the lift.

    The crossing step is located by bisection on the step length of a
    single Dormand-Prince step from the last accepted state, until the
    crossing height is within ``y_tol``.  ``h_max`` keeps steps from
    jumping over a localised plug where the field is otherwise constant.
    """
    x = np.array(x0, float).ravel().copy()
    y = np.array(y0, float).ravel().copy()
    n = x.size
    t = np.zeros(n)
    h = np.full(n, h0)
    status = np.zeros(n, dtype=int)
    cross_h = np.zeros(n)
    steps = 0
    while True:
        idx = np.flatnonzero(status == RUNNING)
        if idx.size == 0:
            break
        steps += 1
        xi, yi, ti = x[idx], y[idx], t[idx]
        hi = np.minimum(h[idx], tmax - ti)
        x5, y5, ex, ey = dopri_step(rhs, xi, yi, hi)
        sc_x = tol + tol * np.maximum(np.abs(xi), np.abs(x5))
        sc_y = tol + tol * np.maximum(np.abs(yi), np.abs(y5))
        err = np.maximum(np.abs(ex) / sc_x, np.abs(ey) / sc_y)
        err = np.where(np.isfinite(err), err, np.inf)
        ok = err <= 1.0
        fac = np.clip(0.9 * np.where(err > 0, err, 1e-10) ** -0.2, 0.2, 5.0)
        h[idx] = np.minimum(np.where(ok, hi * fac, hi * np.minimum(fac, 0.9)), h_max)

        acc = idx[ok]
        hit = y5[ok] >= y_target
        crossing = acc[hit]
        cross_h[crossing] = hi[ok][hit]
        status[crossing] = CROSSED
        move = acc[~hit]
        x[move], y[move] = x5[ok][~hit], y5[ok][~hit]
        t[move] = ti[ok][~hit] + hi[ok][~hit]
        if sinks and move.size:
            close = np.zeros(move.size, bool)
            for s in sinks:
                close |= torus_distance(x[move], y[move], s) < capture_radius
            status[move[close]] = CAPTURED
        status[move[(t[move] >= tmax) & (status[move] == RUNNING)]] = TIMEOUT
        tiny = idx[h[idx] < h_min]
        status[tiny[status[tiny] == RUNNING]] = UNDERFLOW

    c = np.flatnonzero(status == CROSSED)
    if c.size:
        xs, ys = x[c].copy(), y[c].copy()
        lo, hi = np.zeros(c.size), cross_h[c].copy()
        xe, ye, _, _ = dopri_step(rhs, xs, ys, hi)
        for _ in range(80):
            if np.all(ye - y_target <= y_tol):
                break
            mid = 0.5 * (lo + hi)
            xm, ym, _, _ = dopri_step(rhs, xs, ys, mid)
            above = ym >= y_target
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            xe, ye = np.where(above, xm, xe), np.where(above, ym, ye)
        x[c], y[c], t[c] = xe, ye, t[c] + hi
    return SectionResult(x, y, t, status, steps)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    status: str

    @property
    def end(self) -> tuple[float, float]:
        return float(self.x[-1]), float(self.y[-1])


def flow(X, x0: Sequence[float], T: float, tol: float = 1e-10, sinks: Sequence[Sequence[float]] = (),
         capture_radius: float = 0.0, h0: float = 1e-3, h_min: float = 1e-14, h_max: float = None,
         max_steps: int = 10 ** 6) -> Trajectory:
    """Adaptive trajectory of one start point up to time ``T``; x and y are returned unwrapped."""
    if not np.isfinite(T) or T < 0:
        raise ValueError("integration time must be finite and non-negative")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    x, y = np.array([float(x0[0])]), np.array([float(x0[1])])
    ts, xs, ys = [0.0], [x[0]], [y[0]]
    h_max = H_MAX if h_max is None else h_max
    t, h, status = 0.0, h0, "completed"
    for _ in range(max_steps):
        if t >= T:
            break
        hh = min(h, T - t)
        x5, y5, ex, ey = dopri_step(X, x, y, np.array([hh]))
        err = max(abs(ex[0]) / (tol + tol * max(abs(x[0]), abs(x5[0]))),
                  abs(ey[0]) / (tol + tol * max(abs(y[0]), abs(y5[0]))))
        err = err if np.isfinite(err) else np.inf
        fac = min(5.0, max(0.2, 0.9 * (err if err > 0 else 1e-10) ** -0.2))
        if err <= 1.0:
            t += hh
            x, y = x5, y5
            ts.append(t)
            xs.append(x[0])
            ys.append(y[0])
            h = min(hh * fac, h_max)
            if capture_radius and any(torus_distance(x, y, s)[0] < capture_radius for s in sinks):
                status = "captured"
                break
        else:
            h = hh * min(fac, 0.9)
        if h < h_min:
            status = "captured"
            break
    return Trajectory(np.array(ts), np.array(xs), np.array(ys), status)
