import csv
import json
import math

import numpy as np
import pytest

from qhybrid import hhl, pde
from qhybrid.errors import RefinementError, StepError, ValidationError
from helpers import random_spd


def test_stencil_examples():
    # c = alpha*dt/h^2 = 0.5
    assert np.allclose(pde.discretize_heat_1d(2, 0.5, 1.0, 1.0), [[2, -0.5], [-0.5, 2]])
    a = pde.discretize_heat_1d(4, 1.0, 1.0, 1.0)
    assert np.allclose(a, 3 * np.eye(4) - np.eye(4, k=1) - np.eye(4, k=-1))
    assert np.allclose(pde.discretize_heat_1d(4, 0.0, 1.0, 1.0), np.eye(4))


def test_matrix_spd():
    for nx, c in ((8, 0.1), (16, 1.0), (64, 0.5)):
        a = pde.discretize_heat_1d(nx, c, 1.0, 1.0)
        assert np.array_equal(a, a.T)
        lo, _ = hhl.gershgorin_bounds(a)
        assert lo >= 1 - 1e-12
        assert np.all(np.linalg.eigvalsh(a) > 0)


def test_problem_validation():
    u0 = np.ones(8)
    with pytest.raises(ValidationError):
        pde.HeatProblem(6, 1.0, 0.1, 0.1, np.ones(6), 1)
    with pytest.raises(ValidationError):
        pde.HeatProblem(8, -1.0, 0.1, 0.1, u0, 1)
    with pytest.raises(ValidationError):
        pde.HeatProblem(8, 1.0, 0.1, 0.1, np.ones(4), 1)


def heat(nx=8, steps=5, dt=1e-3):
    h = 1.0 / (nx + 1)
    return pde.HeatProblem(nx, 1.0, dt, h, pde.sine_profile(nx, h), steps)


def test_zero_steps():
    traj = pde.time_step_loop(heat(steps=0), pde.classical_solver)
    assert len(traj.snapshots) == 1 and np.array_equal(traj.snapshots[0], heat().u0)


def test_classical_maximum_principle():
    rng = np.random.default_rng(0)
    p = pde.HeatProblem(16, 1.0, 2e-3, 1 / 17, rng.uniform(-1, 1, 16), 30)
    traj = pde.time_step_loop(p, pde.classical_solver)
    norms = [np.max(np.abs(u)) for u in traj.snapshots]
    assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))


def test_sine_mode_decay_rate():
    # the sine profile is an eigenvector of the stencil, so each step divides by 1 + c*mu
    p = heat(steps=3)
    c = p.courant
    mu = 2 - 2 * math.cos(math.pi / (p.nx + 1))
    traj = pde.time_step_loop(p, pde.classical_solver)
    for k, u in enumerate(traj.snapshots):
        assert np.allclose(u, p.u0 / (1 + c * mu) ** k)


def test_hhl_trajectory_close_to_classical():
    p = heat()
    solver = hhl.HhlSolver()
    q = pde.time_step_loop(p, solver)
    c = pde.time_step_loop(p, pde.classical_solver)
    assert len(q.snapshots) == 6
    dev = max(np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(q.snapshots, c.snapshots))
    assert dev <= 0.10
    recs = q.per_step_diagnostics
    assert [r["a_block_reused"] for r in recs] == [False] + [True] * 4
    assert all(set(r["phases"]) == set(hhl.PHASES) for r in recs)


def test_residual_norm_examples():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    assert pde.residual_norm(a, np.linalg.solve(a, b), b) < 1e-12
    assert math.isclose(pde.residual_norm(a, np.zeros(2), b), np.linalg.norm(b))
    assert math.isclose(pde.residual_norm(np.eye(2), [0, 1], [1, 0]), math.sqrt(2))


def test_refinement_exact_solver_one_step():
    a = random_spd(np.random.default_rng(1), 8)
    x, it = pde.iterative_refinement(a, np.ones(8), pde.classical_solver)
    assert it == 1 and pde.residual_norm(a, x, np.ones(8)) < 1e-10


def perturbing_solver(rel, seed=0):
    rng = np.random.default_rng(seed)

    def solve(a, r):
        x = np.linalg.solve(a, r)
        e = rng.standard_normal(x.shape)
        return x + rel * np.linalg.norm(x) * e / np.linalg.norm(e)

    return solve


def test_refinement_five_percent():
    a = random_spd(np.random.default_rng(2), 8)
    b = np.arange(1.0, 9.0)
    x, it = pde.iterative_refinement(a, b, perturbing_solver(0.05), tol=1e-8, max_iter=20)
    assert it <= 20 and pde.residual_norm(a, x, b) / np.linalg.norm(b) <= 1e-8


def test_refinement_residuals_monotone():
    a = random_spd(np.random.default_rng(3), 8)
    b = np.ones(8)
    seen = []
    inner = perturbing_solver(0.3, seed=4)

    def tracking(a_, r):
        seen.append(np.linalg.norm(r))
        return inner(a_, r)

    pde.iterative_refinement(a, b, tracking, tol=1e-10, max_iter=60)
    assert all(y <= x for x, y in zip(seen, seen[1:]))


def test_refinement_failure():
    a = np.eye(4)
    with pytest.raises(RefinementError) as err:
        pde.iterative_refinement(a, np.ones(4), lambda a_, r: -1.2 * r + 0 * a_ @ r, max_iter=10)
    assert err.value.iterations == 10 and err.value.residual > 1


def test_refined_hhl_solver():
    p = heat(steps=2)
    solver = pde.RefinedSolver(hhl.HhlSolver(), tol=1e-8)
    traj = pde.time_step_loop(p, solver)
    a = p.matrix()
    for k, rec in enumerate(traj.per_step_diagnostics):
        u = traj.snapshots[k]
        assert rec["residual"] <= 1e-8 * np.linalg.norm(u)
    assert all(1 <= it <= 20 for it in solver.iterations)
    assert len(solver.diagnostics) == sum(solver.iterations)
    assert np.allclose(traj.snapshots[-1], pde.time_step_loop(p, pde.classical_solver).snapshots[-1], rtol=1e-7)


def test_step_error_carries_index():
    calls = []

    def flaky(a, b):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("device lost")
        return np.linalg.solve(a, b)

    with pytest.raises(StepError) as err:
        pde.time_step_loop(heat(), flaky)
    assert err.value.step == 2 and "device lost" in str(err.value)


def test_exports(tmp_path):
    traj = pde.time_step_loop(heat(steps=3), hhl.HhlSolver(m_clock=4))
    traj.write_csv(tmp_path / "u.csv")
    rows = list(csv.reader(open(tmp_path / "u.csv")))
    assert rows[0] == [f"u_{i}" for i in range(8)] and len(rows) == 5
    assert np.array_equal(np.array(rows[1:], dtype=float), traj.array())
    traj.write_diagnostics(tmp_path / "d.json")
    doc = json.load(open(tmp_path / "d.json"))
    assert len(doc["steps"]) == 3 and "synthesis" in doc["steps"][0]["phases"]
    traj.write_diagnostics(tmp_path / "n.json", include_timing=False)
    assert "phases" not in json.load(open(tmp_path / "n.json"))["steps"][0]


def test_exports_stable_without_timing(tmp_path):
    outs = []
    for k in range(2):
        traj = pde.time_step_loop(heat(steps=2), hhl.HhlSolver(m_clock=4))
        traj.write_csv(tmp_path / f"u{k}.csv")
        traj.write_diagnostics(tmp_path / f"d{k}.json", include_timing=False)
        outs.append((open(tmp_path / f"u{k}.csv").read(), open(tmp_path / f"d{k}.json").read()))
    assert outs[0] == outs[1]
