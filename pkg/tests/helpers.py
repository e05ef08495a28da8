"""Shared generators for the test suite."""
import numpy as np

# "CRITERION k: PASS|FAIL ..." lines collected by the acceptance suite
ACCEPTANCE = []


def random_spd(rng, n, kappa_max=10.0):
    """SPD matrix with eigenvalues 1 and kappa ~ U(2, kappa_max), the rest uniform in between."""
    kappa = rng.uniform(2.0, kappa_max)
    ev = np.concatenate([[1.0, kappa], rng.uniform(1.0, kappa, n - 2)])
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * ev) @ q.T


def spd_suite(count, seed=0, sizes=(4, 8, 16)):
    """``count`` (A, b) pairs drawn in a fixed order from one seeded stream."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.choice(sizes))
        a = random_spd(rng, n)
        b = rng.standard_normal(n)
        out.append((a, b))
    return out


def random_unitary(rng, dim):
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, dim):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_circuit(rng, n_qubits, length):
    """Random qasm-lite circuit touching every instruction kind."""
    from qhybrid import qasm

    def angle():
        return float(rng.uniform(-2 * np.pi, 2 * np.pi))

    def distinct(k):
        return [int(q) for q in rng.permutation(n_qubits)[:k]]

    def ctrls(k):
        return [(q, int(rng.integers(0, 2))) for q in distinct(k)]

    kinds = ["H", "X", "RX", "RY", "RZ"]
    if n_qubits >= 2:
        kinds += ["CX", "CRY", "SWAP", "MCRY", "UNITARY", "CUNITARY"]
    out = []
    for _ in range(length):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind in ("H", "X"):
            out.append(getattr(qasm, kind.lower())(distinct(1)[0]))
        elif kind in ("RX", "RY", "RZ"):
            out.append(getattr(qasm, kind.lower())(angle(), distinct(1)[0]))
        elif kind == "CX":
            a, b = distinct(2)
            out.append(qasm.cx(a, b))
        elif kind == "CRY":
            a, b = distinct(2)
            out.append(qasm.cry(angle(), a, b))
        elif kind == "SWAP":
            a, b = distinct(2)
            out.append(qasm.swap(a, b))
        elif kind == "MCRY":
            qs = distinct(int(rng.integers(2, n_qubits + 1)))
            out.append(qasm.mcry(angle(), [(q, int(rng.integers(0, 2))) for q in qs[1:]], qs[0]))
        elif kind == "UNITARY":
            k = int(rng.integers(1, min(2, n_qubits) + 1))
            out.append(qasm.unitary(random_unitary(rng, 1 << k), distinct(k)))
        else:
            k = 1
            qs = distinct(int(rng.integers(2, min(3, n_qubits) + 1)))
            out.append(qasm.cunitary(random_unitary(rng, 2), [(q, int(rng.integers(0, 2))) for q in qs[1:]], qs[:k]))
    return qasm.Circuit(n_qubits, out)


def golden_programs():
    """Twenty hand-written valid programs covering every grammar production."""
    from qhybrid import qasm

    u2 = qasm.encode_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
    u4 = qasm.encode_matrix(np.eye(4, dtype=complex)[[0, 2, 1, 3]])
    return [
        "qubits 1; h 0;",
        "qubits 2; h 0; cx 0 1;",
        "qubits 2; mcry(1.5707963) c[0=1] 1;",
        "qubits 1; x 0; x 0;",
        "qubits 1; rx(0.25) 0;",
        "qubits 1; ry(-1.5e-3) 0;",
        "qubits 1; rz(3.14159) 0;",
        "qubits 2; cry(0.5) 1 0;",
        "qubits 3; swap 0 2;",
        "qubits 3; mcry(2.0) c[0=1,1=0] 2;",
        f"qubits 1; unitary t[0] {u2};",
        f"qubits 2; unitary t[1,0] {u4};",
        f"qubits 2; cunitary c[0=1] t[1] {u2};",
        f"qubits 3; cunitary c[0=0,2=1] t[1] {u2};",
        "qubits 2; # comment\nh 0; # trailing\ncx 0 1;",
        "qubits 4; h 0; h 1; h 2; h 3;",
        "qubits 2;\n  rx(1) 0;\n  ry(2) 1;\n  cx 1 0;",
        "qubits 3; mcry(0.1) c[2=1] 0; swap 1 2; x 1;",
        f"qubits 3; h 2; cunitary c[2=1] t[0,1] {u4}; rz(.5) 0;",
        "qubits 5; cx 4 0; cry(1e-2) 3 1; mcry(-0.7) c[0=1,1=1,2=0] 4;",
    ]


def st_map(rows):
    """``{"1001+0": "R", ...}`` from snapshot rows."""
    return {r.jobid: r.st for r in rows}


def random_job_document(rng, max_jobs=8):
    hpc_nodes = int(rng.integers(1, 7))
    q_nodes = int(rng.integers(1, 3))
    jobs = []
    for k in range(int(rng.integers(0, max_jobs + 1))):
        q_dur = int(rng.integers(1, 50))
        jobs.append(
            {
                "id": 100 + k,
                "name": f"j{k}",
                "user": "u",
                "submit_s": int(rng.integers(0, 60)),
                "hpc": {"nodes": int(rng.integers(1, hpc_nodes + 1)), "duration_s": q_dur + int(rng.integers(0, 100))},
                "q": {"nodes": int(rng.integers(1, q_nodes + 1)), "duration_s": q_dur},
            }
        )
    return {
        "cluster": {
            "hpc_nodes": hpc_nodes,
            "q_nodes": q_nodes,
            "completing_delay_s": int(rng.integers(0, 4)),
            "sched_latency_s": int(rng.integers(0, 3)),
        },
        "jobs": jobs,
    }


def state_traces(timeline):
    """Per-component snapshot states sampled at every event time and midway between."""
    from qhybrid import sched

    times = sorted({0.0} | {e.time for e in timeline.events})
    probes = []
    for a, b in zip(times, times[1:] + [times[-1] + 2]):
        probes += [a, (a + b) / 2]
    traces = {(r.job_id, r.component): [] for r in timeline.runs}
    for t in probes:
        states = st_map(sched.snapshot(timeline, t))
        for job_id, comp in traces:
            traces[job_id, comp].append(states.get(f"{job_id}+{0 if comp == 'HPC' else 1}", "-"))
    return traces


def mutations(text):
    """Single-token mutations: delete, duplicate, or replace the token with an illegal character."""
    from qhybrid import qasm

    for tok in qasm.tokenize(text):
        a, b = tok.offset, tok.offset + len(tok.text)
        yield "delete", tok, text[:a] + " " + text[b:]
        yield "duplicate", tok, text[:b] + " " + tok.text + text[b:]
        yield "replace", tok, text[:a] + "@" + text[b:]
