"""Discrete-event simulator for a cluster with a scarce quantum partition.

Two orchestration policies are modelled:

* ``MPMD``: one job holds its HPC and Q nodes together; the Q nodes are
  released only when the HPC part ends.
* ``HETJOB``: the Q component is released (through the completing state) as
  soon as its own work is done, while the HPC component keeps running.

Scheduling is strict FCFS without backfill and both components of a job must
start at the same instant.
"""
import enum
import json
import math
from dataclasses import dataclass, field

from .errors import InfeasibleJobError, ScheduleError

HPC = "HPC"
Q = "Q"
COMPONENTS = (HPC, Q)
COMPONENT_INDEX = {HPC: 0, Q: 1}


class Policy(enum.Enum):
    MPMD = "mpmd"
    HETJOB = "hetjob"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ScheduleError(f"unknown policy {value!r}; expected mpmd or hetjob") from None


class Transition(enum.IntEnum):
    SUBMIT = 0
    START = 1
    COMPLETE_BEGIN = 2
    COMPLETE_END = 3


@dataclass(frozen=True)
class ClusterSpec:
    hpc_nodes: int
    q_nodes: int
    hpc_prefix: str = "hpcn"
    hpc_base: int = 1
    q_prefix: str = "qnode"
    q_base: int = 1
    completing_delay: float = 2.0
    # Gap between a node leaving CG and the scheduler handing it out again.
    sched_latency: float = 0.0

    def __post_init__(self):
        if self.hpc_nodes < 1 or self.q_nodes < 1:
            raise ScheduleError("cluster needs at least one HPC node and one Q node")
        if self.completing_delay < 0 or self.sched_latency < 0:
            raise ScheduleError("completing_delay and sched_latency must be >= 0")

    def capacity(self, partition):
        return self.hpc_nodes if partition == HPC else self.q_nodes

    def node_name(self, partition, index):
        if partition == HPC:
            return f"{self.hpc_prefix}{self.hpc_base + index}"
        return f"{self.q_prefix}{self.q_base + index}"


@dataclass(frozen=True)
class Component:
    nodes: int
    duration: float


@dataclass(frozen=True)
class JobSpec:
    id: int
    name: str
    user: str
    hpc: Component
    q: Component
    submit: float = 0.0

    def component(self, partition):
        return self.hpc if partition == HPC else self.q


@dataclass(frozen=True)
class Event:
    time: float
    job_id: int
    component: str
    transition: Transition


@dataclass(frozen=True)
class ComponentRun:
    job_id: int
    name: str
    user: str
    component: str
    node_indices: tuple
    submit: float
    start: float
    complete_begin: float
    complete_end: float
    busy: float

    def state(self, t):
        """``PD``, ``R``, ``CG`` or ``None`` (not yet submitted or gone)."""
        if t < self.submit:
            return None
        if t < self.start:
            return "PD"
        if t < self.complete_begin:
            return "R"
        if t < self.complete_end:
            return "CG"
        return None


@dataclass(frozen=True)
class Timeline:
    policy: Policy
    cluster: ClusterSpec
    runs: tuple
    events: tuple

    def run(self, job_id, component):
        for r in self.runs:
            if r.job_id == job_id and r.component == component:
                return r
        raise KeyError((job_id, component))

    def start_of(self, job_id):
        return self.run(job_id, HPC).start


# Document parsing ----------------------------------------------------------

def _field(obj, key, path, types, default=None, required=True):
    if key not in obj:
        if required:
            raise ScheduleError(f"{path}.{key}: missing")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, types):
        raise ScheduleError(f"{path}.{key}: expected {getattr(types, '__name__', 'number')}, got {value!r}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ScheduleError(f"{path}.{key}: must be finite")
    return value


_NUM = (int, float)


def _parse_component(obj, path):
    if not isinstance(obj, dict):
        raise ScheduleError(f"{path}: expected an object")
    nodes = _field(obj, "nodes", path, int)
    duration = _field(obj, "duration_s", path, _NUM)
    if nodes < 1:
        raise ScheduleError(f"{path}.nodes: must be >= 1")
    if duration <= 0:
        raise ScheduleError(f"{path}.duration_s: must be > 0")
    return Component(nodes, float(duration))


def parse_jobs(document):
    """Validate a job document (dict or JSON text) into ``(ClusterSpec, [JobSpec])``."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"job document is not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ScheduleError("job document must be an object")
    c = document.get("cluster")
    if not isinstance(c, dict):
        raise ScheduleError("cluster: missing or not an object")
    cluster = ClusterSpec(
        hpc_nodes=_field(c, "hpc_nodes", "cluster", int),
        q_nodes=_field(c, "q_nodes", "cluster", int),
        hpc_prefix=_field(c, "hpc_prefix", "cluster", str, "hpcn", False),
        hpc_base=_field(c, "hpc_base", "cluster", int, 1, False),
        q_prefix=_field(c, "q_prefix", "cluster", str, "qnode", False),
        q_base=_field(c, "q_base", "cluster", int, 1, False),
        completing_delay=float(_field(c, "completing_delay_s", "cluster", _NUM, 2.0, False)),
        sched_latency=float(_field(c, "sched_latency_s", "cluster", _NUM, 0.0, False)),
    )
    raw_jobs = document.get("jobs", [])
    if not isinstance(raw_jobs, list):
        raise ScheduleError("jobs: expected a list")
    jobs = []
    seen = set()
    for i, j in enumerate(raw_jobs):
        path = f"jobs[{i}]"
        if not isinstance(j, dict):
            raise ScheduleError(f"{path}: expected an object")
        parts = [k for k in ("hpc", "q") if k in j]
        if len(parts) != 2:
            raise ScheduleError(f"{path}: a job needs exactly two components (hpc and q), found {len(parts)}")
        job_id = _field(j, "id", path, int)
        if job_id in seen:
            raise ScheduleError(f"{path}.id: duplicate job id {job_id}")
        seen.add(job_id)
        hpc = _parse_component(j["hpc"], f"{path}.hpc")
        q = _parse_component(j["q"], f"{path}.q")
        if hpc.duration < q.duration:
            raise ScheduleError(f"{path}: hpc.duration_s must be >= q.duration_s")
        submit = float(_field(j, "submit_s", path, _NUM, 0.0, False))
        if submit < 0:
            raise ScheduleError(f"{path}.submit_s: must be >= 0")
        if hpc.nodes > cluster.hpc_nodes:
            raise InfeasibleJobError(f"{path}.hpc.nodes: {hpc.nodes} requested, cluster has {cluster.hpc_nodes}")
        if q.nodes > cluster.q_nodes:
            raise InfeasibleJobError(f"{path}.q.nodes: {q.nodes} requested, cluster has {cluster.q_nodes}")
        jobs.append(
            JobSpec(
                id=job_id,
                name=_field(j, "name", path, str, f"job{job_id}", False),
                user=_field(j, "user", path, str, "user", False),
                hpc=hpc,
                q=q,
                submit=submit,
            )
        )
    return cluster, jobs


def load_jobs(path):
    with open(path) as fh:
        return parse_jobs(fh.read())


def default_scenario(sched_latency=0.0):
    """Two identical jobs racing for a single quantum node."""
    return {
        "cluster": {
            "hpc_nodes": 4,
            "hpc_prefix": "hpcn",
            "hpc_base": 136,
            "q_nodes": 1,
            "q_prefix": "qnode",
            "q_base": 1,
            "completing_delay_s": 2,
            "sched_latency_s": sched_latency,
        },
        "jobs": [
            {"id": 1001, "name": "job1", "user": "demo", "hpc": {"nodes": 2, "duration_s": 120}, "q": {"nodes": 1, "duration_s": 30}},
            {"id": 1002, "name": "job2", "user": "demo", "hpc": {"nodes": 2, "duration_s": 120}, "q": {"nodes": 1, "duration_s": 30}},
        ],
    }


# Simulation ----------------------------------------------------------------

def _release_times(job, start, policy, delay):
    """(complete_begin, complete_end) per component."""
    hpc_end = start + job.hpc.duration
    if policy is Policy.MPMD:
        q_end = start + max(job.hpc.duration, job.q.duration)
    else:
        q_end = start + job.q.duration
    return {HPC: (hpc_end, hpc_end + delay), Q: (q_end, q_end + delay)}


def simulate(cluster, jobs, policy):
    """Run FCFS (no backfill) and return an immutable :class:`Timeline`.

    Jobs are taken in submission order (ties by document order). Because a
    job can never start before the one ahead of it, each start time is the
    earliest instant at or after the previous start where enough nodes of
    both partitions are available.
    """
    policy = Policy.parse(policy)
    order = sorted(range(len(jobs)), key=lambda i: (jobs[i].submit, i))
    free_at = {HPC: [0.0] * cluster.hpc_nodes, Q: [0.0] * cluster.q_nodes}
    runs = []
    prev_start = 0.0
    for i in order:
        job = jobs[i]
        for part in COMPONENTS:
            if job.component(part).nodes > cluster.capacity(part):
                raise InfeasibleJobError(f"job {job.id} needs more {part} nodes than the cluster owns")
        start = max(job.submit, prev_start)
        for part in COMPONENTS:
            need = job.component(part).nodes
            start = max(start, sorted(free_at[part])[need - 1])
        prev_start = start
        release = _release_times(job, start, policy, cluster.completing_delay)
        for part in COMPONENTS:
            comp = job.component(part)
            idle = [k for k, t in enumerate(free_at[part]) if t <= start]
            chosen = tuple(idle[: comp.nodes])
            begin, end = release[part]
            for k in chosen:
                free_at[part][k] = end + cluster.sched_latency
            runs.append(
                ComponentRun(
                    job_id=job.id,
                    name=job.name,
                    user=job.user,
                    component=part,
                    node_indices=chosen,
                    submit=job.submit,
                    start=start,
                    complete_begin=begin,
                    complete_end=end,
                    busy=comp.duration,
                )
            )
    events = []
    for r in runs:
        events += [
            Event(r.submit, r.job_id, r.component, Transition.SUBMIT),
            Event(r.start, r.job_id, r.component, Transition.START),
            Event(r.complete_begin, r.job_id, r.component, Transition.COMPLETE_BEGIN),
            Event(r.complete_end, r.job_id, r.component, Transition.COMPLETE_END),
        ]
    rank = {j.id: n for n, j in enumerate(jobs[i] for i in order)}
    events.sort(key=lambda e: (e.time, e.transition, rank[e.job_id], COMPONENT_INDEX[e.component]))
    return Timeline(policy, cluster, tuple(runs), tuple(events))


def check_capacity(timeline):
    """Sweep the timeline; raise if any partition is ever over-allocated or a node is double-booked."""
    cluster = timeline.cluster
    for part in COMPONENTS:
        runs = [r for r in timeline.runs if r.component == part]
        times = sorted({r.start for r in runs})
        for t in times:
            active = [r for r in runs if r.start <= t < r.complete_end]
            used = [k for r in active for k in r.node_indices]
            if len(used) > cluster.capacity(part) or len(set(used)) != len(used):
                raise ScheduleError(f"{part} partition over-allocated at t={t}")
            if any(not 0 <= k < cluster.capacity(part) for k in used):
                raise ScheduleError(f"{part} node index out of range at t={t}")
    return True


# Snapshots -----------------------------------------------------------------

def compress_nodelist(prefix, numbers):
    """Slurm-style host list: ``hpcn[136-137,140]``; a single node is printed bare."""
    numbers = sorted(numbers)
    if not numbers:
        return ""
    if len(numbers) == 1:
        return f"{prefix}{numbers[0]}"
    ranges = []
    lo = hi = numbers[0]
    for n in numbers[1:]:
        if n == hi + 1:
            hi = n
            continue
        ranges.append((lo, hi))
        lo = hi = n
    ranges.append((lo, hi))
    body = ",".join(str(a) if a == b else f"{a}-{b}" for a, b in ranges)
    return f"{prefix}[{body}]"


def format_elapsed(seconds):
    s = max(0, int(math.floor(seconds)))
    h, rem = divmod(s, 3600)
    m, s = divmod(rem, 60)
    return f"{h}:{m:02d}:{s:02d}" if h else f"{m}:{s:02d}"


@dataclass(frozen=True)
class Row:
    jobid: str
    partition: str
    name: str
    user: str
    st: str
    time: str
    nodes: int
    nodelist: str


HEADER = ("JOBID", "PARTITION", "NAME", "USER", "ST", "TIME", "NODES", "NODELIST(REASON)")
_WIDTHS = (12, 9, 8, 8, 2, 6, 5, 18)


def snapshot(timeline, t):
    """squeue-like rows for every component that is pending, running or completing at ``t``."""
    if t < 0:
        raise ScheduleError("snapshot time must be >= 0")
    cluster = timeline.cluster
    rows = []
    for r in timeline.runs:
        st = r.state(t)
        if st is None:
            continue
        if st == "PD":
            elapsed, where = "0:00", "(Resources)"
        else:
            prefix = cluster.hpc_prefix if r.component == HPC else cluster.q_prefix
            base = cluster.hpc_base if r.component == HPC else cluster.q_base
            elapsed = format_elapsed(t - r.start)
            where = compress_nodelist(prefix, [base + k for k in r.node_indices])
        nodes = len(r.node_indices)
        rows.append(
            (
                (st, r.job_id, COMPONENT_INDEX[r.component]),
                Row(f"{r.job_id}+{COMPONENT_INDEX[r.component]}", r.component, r.name, r.user, st, elapsed, nodes, where),
            )
        )
    rows.sort(key=lambda kv: kv[0])
    return [row for _, row in rows]


def render(rows):
    def line(cells):
        first = f"{cells[0]:<{_WIDTHS[0]}}"
        rest = [f"{str(c):>{w}}" for c, w in zip(cells[1:], _WIDTHS[1:])]
        return " ".join([first] + rest).rstrip()

    out = [line(HEADER)]
    for r in rows:
        out.append(line((r.jobid, r.partition, r.name, r.user, r.st, r.time, r.nodes, r.nodelist)))
    return "\n".join(out)


# Metrics -------------------------------------------------------------------

@dataclass
class Metrics:
    makespan: float
    q_busy_seconds: float
    q_completing_seconds: float
    q_idle_seconds: float
    q_utilization: float
    per_job_wait: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "makespan": self.makespan,
            "q_busy_seconds": self.q_busy_seconds,
            "q_completing_seconds": self.q_completing_seconds,
            "q_idle_seconds": self.q_idle_seconds,
            "q_utilization": self.q_utilization,
            "per_job_wait": {str(k): v for k, v in self.per_job_wait.items()},
        }


def metrics(timeline):
    """Quantum-partition idle time and per-job waits.

    ``makespan`` runs from the first submission to the last node release; Q
    idle time is node-seconds in that window that are neither computing nor
    completing (a Q node held by an MPMD job after its work is done counts as
    idle).
    """
    runs = timeline.runs
    if not runs:
        return Metrics(0.0, 0.0, 0.0, 0.0, 0.0, {})
    makespan = max(r.complete_end for r in runs) - min(r.submit for r in runs)
    q_runs = [r for r in runs if r.component == Q]
    n_q = timeline.cluster.q_nodes
    busy = sum(r.busy * len(r.node_indices) for r in q_runs)
    completing = sum((r.complete_end - r.complete_begin) * len(r.node_indices) for r in q_runs)
    idle = n_q * makespan - busy - completing
    util = busy / (n_q * makespan) if makespan > 0 else 0.0
    waits = {}
    for r in runs:
        waits[r.job_id] = max(waits.get(r.job_id, 0.0), r.start - r.submit)
    return Metrics(makespan, busy, completing, idle, util, waits)


def compare(cluster, jobs):
    """Simulate both policies; returns ``{policy_value: (timeline, metrics)}``."""
    out = {}
    for policy in (Policy.HETJOB, Policy.MPMD):
        tl = simulate(cluster, jobs, policy)
        out[policy.value] = (tl, metrics(tl))
    return out


def jobspec_from_diagnostics(per_step_diagnostics, job_id=1, name="heat", user="user", hpc_nodes=1, q_nodes=1, time_scale=1.0):
    """Job document entry whose durations come from a measured heat run.

    The HPC part lasts the whole run's wall time; the Q part lasts the summed
    simulation and extraction phases. ``time_scale`` stretches both so that a
    desk-scale run can stand in for a production-sized one.
    """
    wall = sum(d.get("wall_time", 0.0) for d in per_step_diagnostics)
    device = sum(
        d.get("phases", {}).get("simulation", 0.0) + d.get("phases", {}).get("extraction", 0.0)
        for d in per_step_diagnostics
    )
    hpc_s = max(wall * time_scale, 1e-9)
    q_s = min(max(device * time_scale, 1e-9), hpc_s)
    return {
        "id": job_id,
        "name": name,
        "user": user,
        "hpc": {"nodes": hpc_nodes, "duration_s": hpc_s},
        "q": {"nodes": q_nodes, "duration_s": q_s},
    }
