"""Backward-Euler heat equation driver with offloaded linear solves."""
import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import RefinementError, StepError, ValidationError


@dataclass
class HeatProblem:
    """1-D heat equation on ``nx`` interior points with zero Dirichlet boundaries."""

    nx: int
    alpha: float
    dt: float
    h: float
    u0: np.ndarray
    steps: int

    def __post_init__(self):
        if self.nx < 2 or self.nx & (self.nx - 1):
            raise ValidationError(f"nx must be a power of two >= 2, got {self.nx}")
        if not (self.alpha > 0 and self.dt > 0 and self.h > 0):
            raise ValidationError("alpha, dt and h must be positive")
        if self.steps < 0:
            raise ValidationError(f"steps must be non-negative, got {self.steps}")
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.u0.shape != (self.nx,):
            raise ValidationError(f"u0 must have {self.nx} entries, got shape {self.u0.shape}")

    @property
    def courant(self):
        return self.alpha * self.dt / self.h**2

    def matrix(self):
        return discretize_heat_1d(self.nx, self.alpha, self.dt, self.h)


def sine_profile(nx, h=None):
    h = 1.0 / (nx + 1) if h is None else h
    xs = h * np.arange(1, nx + 1)
    return np.sin(np.pi * xs / (h * (nx + 1)))


def discretize_heat_1d(nx, alpha, dt, h):
    """``A = I + c * tridiag(-1, 2, -1)`` with ``c = alpha * dt / h**2``."""
    if not (alpha >= 0 and dt > 0 and h > 0):
        raise ValidationError("need alpha >= 0, dt > 0, h > 0")
    c = alpha * dt / h**2
    a = np.eye(nx) * (1 + 2 * c)
    idx = np.arange(nx - 1)
    a[idx, idx + 1] = -c
    a[idx + 1, idx] = -c
    return a


def residual_norm(a, x, b):
    return float(np.linalg.norm(np.asarray(b) - np.asarray(a) @ np.asarray(x)))


def iterative_refinement(a, b, solver, tol=1e-8, max_iter=20):
    """Correct ``x`` with ``solver(a, r)`` on the residual until ``||r|| / ||b|| <= tol``.

    Returns ``(x, iterations)``. Raises :class:`RefinementError` with the last
    relative residual if ``max_iter`` corrections are not enough.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b, dtype=np.result_type(a, b, float)), 0
    x = np.zeros_like(b, dtype=np.result_type(a, b, float))
    r = b
    rel = 1.0
    for it in range(1, max_iter + 1):
        x = x + solver(a, r)
        r = b - a @ x
        rel = float(np.linalg.norm(r) / nb)
        if rel <= tol:
            return x, it
        if not np.isfinite(rel):
            break
    raise RefinementError(
        f"iterative refinement stalled at relative residual {rel:.3e} after {max_iter} iterations",
        residual=rel,
        iterations=max_iter,
    )


class RefinedSolver:
    """Wrap ``solver`` in :func:`iterative_refinement`; keeps the inner solver's diagnostics visible."""

    def __init__(self, solver, tol=1e-8, max_iter=20):
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = []

    @property
    def diagnostics(self):
        return getattr(self.solver, "diagnostics", [])

    def __call__(self, a, b):
        x, it = iterative_refinement(a, b, self.solver, self.tol, self.max_iter)
        self.iterations.append(it)
        return x


def classical_solver(a, b):
    return np.linalg.solve(a, b)


@dataclass
class Trajectory:
    snapshots: list
    per_step_diagnostics: list = field(default_factory=list)

    def array(self):
        return np.array(self.snapshots)

    def write_csv(self, path):
        nx = len(self.snapshots[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"u_{i}" for i in range(nx)])
            for u in self.snapshots:
                w.writerow([repr(float(v)) for v in u])

    def write_diagnostics(self, path, include_timing=True):
        steps = []
        for d in self.per_step_diagnostics:
            d = dict(d)
            if not include_timing:
                d = {k: v for k, v in d.items() if k not in ("phases", "wall_time", "solves")}
            steps.append(d)
        with open(path, "w") as fh:
            json.dump({"steps": steps}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _phase_sum(diags):
    out = {}
    for d in diags:
        for k, v in d.phases.items():
            out[k] = out.get(k, 0.0) + v
    return out


def time_step_loop(problem, solver):
    """March ``u^{k+1} = solver(A, u^k)`` for ``problem.steps`` steps.

    ``A`` is built once. If ``solver`` exposes a ``diagnostics`` list (as
    :class:`qhybrid.hhl.HhlSolver` does), the phase timings of the solves made
    during each step are summed into that step's record.
    """
    a = problem.matrix()
    u = problem.u0.copy()
    snapshots = [u.copy()]
    records = []
    for k in range(problem.steps):
        seen = len(getattr(solver, "diagnostics", []))
        t0 = time.perf_counter()
        try:
            x = solver(a, u)
        except Exception as exc:
            raise StepError(k, exc) from exc
        wall = time.perf_counter() - t0
        x = np.asarray(x)
        if np.iscomplexobj(x):
            x = x.real
        rec = {"step": k, "wall_time": wall, "residual": residual_norm(a, x, u)}
        new = getattr(solver, "diagnostics", [])[seen:]
        if new:
            rec["phases"] = _phase_sum(new)
            rec["solves"] = len(new)
            rec["p_success"] = [d.p_success for d in new]
            rec["a_block_reused"] = all(d.a_block_reused for d in new)
        records.append(rec)
        u = x
        snapshots.append(u.copy())
    return Trajectory(snapshots, records)
