"""``qhybrid`` command line: device server, hybrid solves, heat runs and scheduler studies."""
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import hhl, pde, protocol, sched
from .errors import QHybridError, ScheduleError, StepError, ValidationError
from .statevec import DEFAULT_QUBIT_CAP

log = logging.getLogger("qhybrid")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PHASE_ORDER = ("synthesis", "transfer", "simulation", "extraction")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Helpers -------------------------------------------------------------------

def _output_dir(args):
    os.makedirs(args.output_dir, exist_ok=True)
    return args.output_dir


def _executor(args, stack):
    """``(executor, label)`` from ``--endpoint`` / ``--local``."""
    if args.endpoint is None:
        return None, "local"
    host, port = protocol.parse_endpoint(args.endpoint)
    client = protocol.DeviceClient(host, port, timeout=args.timeout)
    stack.append(client)
    return protocol.RemoteExecutor(client), f"remote {host}:{port}"


def phase_table(phases, total):
    lines = [f"{'phase':<12}{'seconds':>12}{'share':>9}"]
    for name in PHASE_ORDER:
        v = phases[name]
        share = v / total if total > 0 else 0.0
        lines.append(f"{name:<12}{v:>12.6f}{share:>8.1%}")
    lines.append(f"{'total':<12}{total:>12.6f}")
    return "\n".join(lines)


def _format_vector(x):
    x = np.asarray(x)
    if np.iscomplexobj(x) and np.max(np.abs(x.imag), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(x))):
        x = x.real
    return np.array2string(x, precision=8, separator=", ", max_line_width=100)


def _complex_entry(v, where):
    if isinstance(v, bool):
        raise UsageError(f"{where}: expected a number or [re, im]")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) in (1, 2) and all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in v):
        return complex(v[0], v[1] if len(v) == 2 else 0.0)
    raise UsageError(f"{where}: expected a number or [re, im], got {v!r}")


def parse_system(doc, source="system"):
    """``{"n": N, "matrix": [[[re, im], ...], ...], "rhs": [[re, im], ...]}``; bare numbers are real."""
    if not isinstance(doc, dict) or "matrix" not in doc or "rhs" not in doc:
        raise UsageError(f"{source}: expected an object with keys 'n', 'matrix' and 'rhs'")
    rows, rhs = doc["matrix"], doc["rhs"]
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows) or not isinstance(rhs, list):
        raise UsageError(f"{source}: matrix must be a list of rows and rhs a list")
    n = doc.get("n", len(rows))
    if isinstance(n, bool) or not isinstance(n, int) or n != len(rows) or any(len(r) != n for r in rows) or len(rhs) != n:
        raise UsageError(f"{source}: matrix must be n x n and rhs length n (n={n!r})")
    a = np.array([[_complex_entry(v, f"{source}: matrix[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(rows)])
    b = np.array([_complex_entry(v, f"{source}: rhs[{i}]") for i, v in enumerate(rhs)])
    if not np.any(a.imag):
        a = a.real
    if not np.any(b.imag):
        b = b.real
    return a, b


def load_system(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read system file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON: {exc}") from None
    return parse_system(doc, path)


def random_spd_system(n, seed, kappa_max=10.0):
    """SPD matrix with eigenvalues in ``[1, kappa]`` and a random rhs."""
    rng = np.random.default_rng(seed)
    kappa = rng.uniform(2.0, kappa_max)
    eig = np.concatenate([[1.0, kappa], rng.uniform(1.0, kappa, n - 2)])
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (q * eig) @ q.T, rng.normal(size=n)


# Subcommands ---------------------------------------------------------------

def cmd_device(args):
    def on_request(count, reply):
        if reply.type == "RESULT":
            print(f"request {count}: ok device_time={reply.payload['device_time']:.6f}s", flush=True)
        else:
            print(f"request {count}: {reply.payload['code']} {reply.payload['detail']}", flush=True)

    def ready(server):
        host, port = server.server_address[:2]
        print(f"device listening on {host}:{port} (qubit cap {args.qubit_cap})", flush=True)

    try:
        protocol.serve(
            (args.host, args.port), qubit_cap=args.qubit_cap, max_frame=args.max_frame, on_request=on_request, ready=ready
        )
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
    print("device stopped", flush=True)
    return EXIT_OK


def _plan_options(args):
    return dict(t=args.t, evolution=args.evolution, trotter_steps=args.trotter_steps)


def cmd_solve(args):
    if args.random is not None:
        if args.system is not None:
            raise UsageError("give either a system file or --random, not both")
        a, b = random_spd_system(args.random, args.seed)
    elif args.system is None:
        raise UsageError("a system file or --random N is required")
    else:
        a, b = load_system(args.system)
    stack = []
    try:
        executor, label = _executor(args, stack)
        x, diag = protocol.qsolve_Axb(
            a, b, executor, m_clock=args.m_clock, readout=args.readout, return_diagnostics=True, **_plan_options(args)
        )
    finally:
        for c in stack:
            c.close()
    ref = np.linalg.solve(a, b)
    rel = float(np.linalg.norm(x - ref) / np.linalg.norm(ref))
    print(f"device: {label}")
    print(f"qubits: {diag.n_qubits}  amplitudes read: {diag.n_amplitudes}")
    print(f"x = {_format_vector(x)}")
    print(f"relative error vs classical solve: {rel:.3e}")
    print(f"p_success: {diag.p_success:.6g}")
    print(phase_table(diag.phases, diag.total))
    if args.json:
        out = os.path.join(_output_dir(args), "solve.json")
        with open(out, "w") as fh:
            doc = {"x_real": np.real(x).tolist(), "x_imag": np.imag(x).tolist(), "relative_error": rel, "diagnostics": diag.to_json()}
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {out}")
    return EXIT_OK


def cmd_heat(args):
    h = args.h if args.h is not None else 1.0 / (args.nx + 1)
    try:
        problem = pde.HeatProblem(args.nx, args.alpha, args.dt, h, pde.sine_profile(args.nx, h), args.steps)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    if problem.courant > 1.0:
        raise UsageError(f"alpha*dt/h^2 = {problem.courant:.4g} exceeds 1; reduce --dt or --alpha")
    stack = []
    try:
        executor, label = _executor(args, stack)
        inner = hhl.HhlSolver(m_clock=args.m_clock, executor=executor, readout=args.readout, **_plan_options(args))
        solver = inner if args.refine is None else pde.RefinedSolver(inner, tol=args.refine, max_iter=args.max_iter)
        traj = pde.time_step_loop(problem, solver)
    finally:
        for c in stack:
            c.close()
    classical = pde.time_step_loop(problem, pde.classical_solver)
    dev = max(
        float(np.linalg.norm(u - v) / np.linalg.norm(v)) for u, v in zip(traj.snapshots[1:], classical.snapshots[1:])
    ) if args.steps else 0.0
    outdir = _output_dir(args)
    csv_path = os.path.join(outdir, "trajectory.csv")
    diag_path = os.path.join(outdir, "diagnostics.json")
    traj.write_csv(csv_path)
    traj.write_diagnostics(diag_path, include_timing=not args.no_timing)

    print(f"device: {label}")
    print(f"grid: nx={args.nx} h={h:.6g} c={problem.courant:.6g} steps={args.steps}")
    if inner.diagnostics:
        print(f"qubits per solve: {inner.diagnostics[0].n_qubits} (state {problem.nx.bit_length() - 1} + clock {args.m_clock} + ancilla 1)")
    recs = traj.per_step_diagnostics
    if recs:
        syn = [r["phases"]["synthesis"] for r in recs]
        later = max(syn[1:]) if len(syn) > 1 else 0.0
        reused = all(r["a_block_reused"] for r in recs[1:])
        ratio = later / syn[0] if syn[0] > 0 else 0.0
        print(
            f"matrix block synthesized once: {'yes' if reused else 'no'}; "
            f"step 1 synthesis {syn[0]:.6f}s, later steps at most {later:.6f}s ({ratio:.2%})"
        )
        if args.refine is not None:
            print(f"refinement iterations per step: {solver.iterations}")
        print(f"max residual: {max(r['residual'] for r in recs):.3e}")
    print(f"max relative deviation vs classical: {dev:.3e}")
    print(f"wrote {csv_path}")
    print(f"wrote {diag_path}")
    return EXIT_OK


def _parse_times(text):
    try:
        times = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--snapshots expects comma-separated seconds, got {text!r}") from None
    if any(t < 0 or not math.isfinite(t) for t in times):
        raise UsageError("--snapshots times must be finite and >= 0")
    return times


def _print_metrics(label, m):
    print(f"[{label}] makespan {m.makespan:g} s, Q busy {m.q_busy_seconds:g} s, Q idle {m.q_idle_seconds:g} s, Q utilization {m.q_utilization:.1%}")
    for job_id, w in m.per_job_wait.items():
        print(f"[{label}] job {job_id} wait {w:g} s")


def cmd_sched(args):
    if args.jobs is None:
        doc = sched.default_scenario(args.sched_latency if args.sched_latency is not None else 0.0)
    else:
        try:
            with open(args.jobs) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read jobs file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.jobs}: not valid JSON: {exc}") from None
        if args.sched_latency is not None and isinstance(doc, dict) and isinstance(doc.get("cluster"), dict):
            doc["cluster"]["sched_latency_s"] = args.sched_latency
    try:
        cluster, jobs = sched.parse_jobs(doc)
    except ScheduleError as exc:
        raise UsageError(str(exc)) from None
    timeline = sched.simulate(cluster, jobs, args.policy)
    sched.check_capacity(timeline)
    for t in _parse_times(args.snapshots or ""):
        print(f"t={t:g}s ({timeline.policy.value})")
        print(sched.render(sched.snapshot(timeline, t)))
        print()
    _print_metrics(timeline.policy.value, sched.metrics(timeline))
    if args.compare:
        both = sched.compare(cluster, jobs)
        het, mp = both["hetjob"][1], both["mpmd"][1]
        other = "mpmd" if timeline.policy is sched.Policy.HETJOB else "hetjob"
        _print_metrics(other, both[other][1])
        names = {j.id: j.name for j in jobs}
        for j in jobs:
            print(f"{names[j.id]} wait: {het.per_job_wait[j.id]:g} s (hetjob) vs {mp.per_job_wait[j.id]:g} s (mpmd)")
        print(f"Q idle delta (mpmd - hetjob): {mp.q_idle_seconds - het.q_idle_seconds:g} s")
    return EXIT_OK


def cmd_jobspec(args):
    try:
        with open(args.diagnostics) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read diagnostics: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.diagnostics}: not valid JSON: {exc}") from None
    steps = doc.get("steps") if isinstance(doc, dict) else None
    if not isinstance(steps, list) or not all(isinstance(s, dict) and "wall_time" in s for s in steps):
        raise UsageError("diagnostics must come from a heat run with timings (no --no-timing)")
    job = sched.jobspec_from_diagnostics(
        steps, job_id=args.id, name=args.name, user=args.user, hpc_nodes=args.hpc_nodes, q_nodes=args.q_nodes, time_scale=args.time_scale
    )
    print(json.dumps(job, indent=2))
    return EXIT_OK


# Parser --------------------------------------------------------------------

def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _m_clock(text):
    v = _nonneg_int(text)
    lo, hi = hhl.M_CLOCK_RANGE
    if not lo <= v <= hi:
        raise argparse.ArgumentTypeError(f"must be in [{lo}, {hi}], got {v}")
    return v


def _add_device_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--endpoint", metavar="HOST:PORT", help="remote device server")
    g.add_argument("--local", action="store_true", help="in-process device (default)")
    p.add_argument("--timeout", type=_positive_float, default=None, help="socket timeout in seconds")
    p.add_argument("--m-clock", type=_m_clock, default=hhl.DEFAULT_M_CLOCK, help="clock register width")
    p.add_argument("--t", type=_positive_float, default=None, help="pin the evolution time (spectrum is normalized)")
    p.add_argument("--readout", choices=("solution", "full"), default="solution")
    p.add_argument("--evolution", choices=("exact", "trotter"), default="exact")
    p.add_argument("--trotter-steps", type=int, default=1)


def build_parser():
    parser = _Parser(prog="qhybrid", description=__doc__)
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--seed", type=int, default=0, help="seed for generated demo inputs")
    parser.add_argument("--output-dir", default=".", help="where output files go")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("device", help="serve a simulated quantum device over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=_nonneg_int, default=5555)
    p.add_argument("--qubit-cap", type=_nonneg_int, default=DEFAULT_QUBIT_CAP)
    p.add_argument("--max-frame", type=_nonneg_int, default=protocol.MAX_FRAME, help="largest accepted frame body in bytes")
    p.set_defaults(func=cmd_device)

    p = sub.add_parser("solve", help="solve one linear system with HHL")
    p.add_argument("system", nargs="?", help='JSON file {"n": N, "matrix": [[[re, im], ...]], "rhs": [[re, im], ...]}')
    p.add_argument("--random", type=int, metavar="N", help="solve a generated SPD system of size N instead")
    p.add_argument("--json", action="store_true", help="also write solve.json to the output directory")
    _add_device_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("heat", help="backward-Euler heat equation with HHL solves")
    p.add_argument("--nx", type=int, default=8)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    p.add_argument("--dt", type=_positive_float, default=1e-3)
    p.add_argument("--h", type=_positive_float, default=None, help="grid spacing (default 1/(nx+1))")
    p.add_argument("--steps", type=_nonneg_int, default=5)
    p.add_argument("--refine", type=_positive_float, default=None, metavar="TOL", help="wrap each solve in iterative refinement")
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--no-timing", action="store_true", help="omit timings from diagnostics.json")
    _add_device_flags(p)
    p.set_defaults(func=cmd_heat)

    p = sub.add_parser("sched", help="compare MPMD and heterogeneous-job scheduling")
    p.add_argument("jobs", nargs="?", help="job document (default: built-in two-job scenario)")
    p.add_argument("--policy", choices=("mpmd", "hetjob"), default="hetjob")
    p.add_argument("--snapshots", metavar="T1,T2,...", help="print squeue-style tables at these times")
    p.add_argument("--compare", action="store_true", help="run both policies and print the difference")
    p.add_argument("--sched-latency", type=float, default=None, help="seconds before a released node is handed out again")
    p.set_defaults(func=cmd_sched)

    p = sub.add_parser("jobspec", help="job entry with durations taken from a heat run's diagnostics")
    p.add_argument("diagnostics")
    p.add_argument("--id", type=int, default=1)
    p.add_argument("--name", default="heat")
    p.add_argument("--user", default="user")
    p.add_argument("--hpc-nodes", type=int, default=1)
    p.add_argument("--q-nodes", type=int, default=1)
    p.add_argument("--time-scale", type=_positive_float, default=1.0)
    p.set_defaults(func=cmd_jobspec)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except QHybridError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
