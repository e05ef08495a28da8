import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_job_document, st_map, state_traces
from qhybrid import sched
from qhybrid.errors import InfeasibleJobError, ScheduleError


def scenario(latency=0.0):
    return sched.parse_jobs(sched.default_scenario(latency))


def test_parse_default_scenario():
    cluster, jobs = scenario()
    assert (cluster.hpc_nodes, cluster.q_nodes, cluster.completing_delay) == (4, 1, 2.0)
    assert [j.id for j in jobs] == [1001, 1002]
    assert jobs[0].hpc == sched.Component(2, 120.0) and jobs[0].q == sched.Component(1, 30.0)
    assert cluster.node_name(sched.HPC, 0) == "hpcn136" and cluster.node_name(sched.Q, 0) == "qnode1"


def test_parse_json_text_and_defaults():
    doc = {"cluster": {"hpc_nodes": 2, "q_nodes": 1}, "jobs": [{"id": 7, "hpc": {"nodes": 1, "duration_s": 5}, "q": {"nodes": 1, "duration_s": 5}}]}
    cluster, jobs = sched.parse_jobs(json.dumps(doc))
    assert cluster.completing_delay == 2.0 and cluster.sched_latency == 0.0
    assert jobs[0].name == "job7" and jobs[0].submit == 0.0


def _doc(**job):
    base = {"id": 1, "hpc": {"nodes": 1, "duration_s": 10}, "q": {"nodes": 1, "duration_s": 5}}
    base.update(job)
    return {"cluster": {"hpc_nodes": 2, "q_nodes": 1}, "jobs": [base]}


@pytest.mark.parametrize(
    "doc, fragment",
    [
        (_doc(q={"nodes": 1, "duration_s": 0}), "jobs[0].q.duration_s"),
        (_doc(hpc={"nodes": 0, "duration_s": 3}), "jobs[0].hpc.nodes"),
        (_doc(hpc={"nodes": 1}), "jobs[0].hpc.duration_s"),
        (_doc(id="x"), "jobs[0].id"),
        (_doc(hpc={"nodes": 1, "duration_s": 1}), "hpc.duration_s must be >="),
        (_doc(submit_s=-1), "submit_s"),
        ({"cluster": {"hpc_nodes": 2, "q_nodes": 1}, "jobs": [{"id": 1, "hpc": {"nodes": 1, "duration_s": 1}}]}, "exactly two components"),
        ({"cluster": {"hpc_nodes": 2, "q_nodes": 1}, "jobs": [_doc()["jobs"][0], _doc()["jobs"][0]]}, "duplicate"),
        ({"jobs": []}, "cluster"),
        ({"cluster": {"hpc_nodes": 0, "q_nodes": 1}}, "at least one"),
        ({"cluster": {"hpc_nodes": 1, "q_nodes": 1, "completing_delay_s": -1}}, ">= 0"),
        ("{not json", "valid JSON"),
        ([], "object"),
    ],
)
def test_parse_errors(doc, fragment):
    with pytest.raises(ScheduleError) as err:
        sched.parse_jobs(doc)
    assert fragment in str(err.value)


def test_infeasible_job():
    with pytest.raises(InfeasibleJobError):
        sched.parse_jobs(_doc(hpc={"nodes": 3, "duration_s": 10}))
    with pytest.raises(InfeasibleJobError):
        sched.parse_jobs(_doc(q={"nodes": 2, "duration_s": 1}))


def test_hetjob_starts_job2_at_32():
    cluster, jobs = scenario()
    tl = sched.simulate(cluster, jobs, sched.Policy.HETJOB)
    assert tl.run(1002, sched.Q).start == 32 and tl.run(1002, sched.HPC).start == 32
    assert tl.run(1001, sched.Q).complete_begin == 30 and tl.run(1001, sched.Q).complete_end == 32
    assert tl.run(1002, sched.HPC).node_indices == (2, 3)


def test_mpmd_starts_job2_at_122():
    cluster, jobs = scenario()
    tl = sched.simulate(cluster, jobs, "mpmd")
    assert tl.start_of(1002) == 122
    assert tl.run(1001, sched.Q).complete_begin == 120


def test_single_job_identical_under_both_policies():
    cluster, jobs = scenario()
    a = sched.simulate(cluster, jobs[:1], "mpmd")
    b = sched.simulate(cluster, jobs[:1], "hetjob")
    assert a.runs[0] == b.runs[0]
    m = sched.metrics(a)
    assert m.per_job_wait == {1001: 0.0}


def test_single_job_with_equal_durations_identical():
    doc = _doc(hpc={"nodes": 1, "duration_s": 5}, q={"nodes": 1, "duration_s": 5})
    cluster, jobs = sched.parse_jobs(doc)
    assert sched.simulate(cluster, jobs, "mpmd").runs == sched.simulate(cluster, jobs, "hetjob").runs


def test_events_ordered_and_well_formed():
    cluster, jobs = scenario()
    tl = sched.simulate(cluster, jobs, "hetjob")
    times = [e.time for e in tl.events]
    assert times == sorted(times)
    for r in tl.runs:
        assert r.submit <= r.start < r.complete_begin <= r.complete_end


def test_unknown_policy():
    with pytest.raises(ScheduleError):
        sched.Policy.parse("backfill")


def test_snapshot_patterns_default_latency():
    cluster, jobs = scenario()
    tl = sched.simulate(cluster, jobs, "hetjob")
    assert st_map(sched.snapshot(tl, 21)) == {"1001+0": "R", "1001+1": "R", "1002+0": "PD", "1002+1": "PD"}
    assert st_map(sched.snapshot(tl, 31)) == {"1001+0": "R", "1001+1": "CG", "1002+0": "PD", "1002+1": "PD"}
    assert st_map(sched.snapshot(tl, 33)) == {"1001+0": "R", "1002+0": "R", "1002+1": "R"}


def test_snapshot_patterns_four_probes():
    cluster, jobs = scenario(28)
    tl = sched.simulate(cluster, jobs, "hetjob")
    rows = {t: sched.snapshot(tl, t) for t in (21, 31, 45, 61)}
    assert st_map(rows[21]) == {"1001+0": "R", "1001+1": "R", "1002+0": "PD", "1002+1": "PD"}
    assert st_map(rows[31])["1001+1"] == "CG"
    assert st_map(rows[45]) == {"1001+0": "R", "1002+0": "PD", "1002+1": "PD"}
    assert st_map(rows[61]) == {"1001+0": "R", "1002+0": "R", "1002+1": "R"}
    by_id = {r.jobid: r for r in rows[61]}
    assert by_id["1002+1"].nodelist == "qnode1" and by_id["1002+1"].time == "0:01"
    assert by_id["1002+0"].nodelist == "hpcn[138-139]"
    assert by_id["1001+0"].time == "1:01" and by_id["1001+0"].nodelist == "hpcn[136-137]"
    pending = {r.jobid: r for r in rows[21]}["1002+0"]
    assert (pending.time, pending.nodelist) == ("0:00", "(Resources)")


def test_snapshot_row_order_and_labels():
    cluster, jobs = scenario()
    rows = sched.snapshot(sched.simulate(cluster, jobs, "hetjob"), 31)
    assert [r.jobid for r in rows] == ["1001+1", "1002+0", "1002+1", "1001+0"]
    assert [r.partition for r in rows] == ["Q", "HPC", "Q", "HPC"]


def test_render_header_and_alignment():
    cluster, jobs = scenario()
    text = sched.render(sched.snapshot(sched.simulate(cluster, jobs, "hetjob"), 21))
    lines = text.splitlines()
    assert lines[0].split() == ["JOBID", "PARTITION", "NAME", "USER", "ST", "TIME", "NODES", "NODELIST(REASON)"]
    assert len({len(line) for line in lines}) == 1
    assert "hpcn[136-137]" in text and "(Resources)" in text


def test_snapshot_negative_time():
    cluster, jobs = scenario()
    with pytest.raises(ScheduleError):
        sched.snapshot(sched.simulate(cluster, jobs, "hetjob"), -1)


def test_snapshot_after_everything():
    cluster, jobs = scenario()
    assert sched.snapshot(sched.simulate(cluster, jobs, "hetjob"), 1000) == []


@pytest.mark.parametrize(
    "numbers, out",
    [
        ([], ""),
        ([5], "n5"),
        ([136, 137], "n[136-137]"),
        ([3, 1, 2, 7, 9, 10], "n[1-3,7,9-10]"),
        ([4, 6], "n[4,6]"),
    ],
)
def test_compress_nodelist(numbers, out):
    assert sched.compress_nodelist("n", numbers) == out


def test_format_elapsed():
    assert [sched.format_elapsed(s) for s in (0, 1.9, 61, 3599, 3600, 3725)] == ["0:00", "0:01", "1:01", "59:59", "1:00:00", "1:02:05"]


def test_metrics_delta_is_classical_tail():
    cluster, jobs = scenario()
    res = sched.compare(cluster, jobs)
    het, mp = res["hetjob"][1], res["mpmd"][1]
    assert het.per_job_wait[1002] == 32 and mp.per_job_wait[1002] == 122
    assert mp.q_idle_seconds - het.q_idle_seconds == 90
    assert het.q_busy_seconds == mp.q_busy_seconds == 60
    assert 0 < mp.q_utilization < het.q_utilization <= 1
    assert het.makespan == 154 and mp.makespan == 244
    assert json.loads(json.dumps(het.to_json()))["per_job_wait"] == {"1001": 0.0, "1002": 32.0}


def test_metrics_delta_with_latency():
    cluster, jobs = scenario(28)
    res = sched.compare(cluster, jobs)
    assert res["hetjob"][1].per_job_wait[1002] == 60 and res["mpmd"][1].per_job_wait[1002] == 150
    assert res["mpmd"][1].q_idle_seconds - res["hetjob"][1].q_idle_seconds == 90


def test_metrics_empty():
    cluster, _ = scenario()
    m = sched.metrics(sched.simulate(cluster, [], "hetjob"))
    assert (m.makespan, m.q_utilization, m.q_idle_seconds, m.per_job_wait) == (0.0, 0.0, 0.0, {})


def test_submit_time_respected():
    doc = _doc(submit_s=15)
    cluster, jobs = sched.parse_jobs(doc)
    tl = sched.simulate(cluster, jobs, "hetjob")
    assert tl.start_of(1) == 15 and sched.metrics(tl).per_job_wait == {1: 0.0}


def test_fcfs_no_backfill():
    # job 3 would fit at t=0 next to job 1 but may not overtake job 2
    doc = {
        "cluster": {"hpc_nodes": 2, "q_nodes": 2, "completing_delay_s": 0},
        "jobs": [
            {"id": 1, "hpc": {"nodes": 1, "duration_s": 50}, "q": {"nodes": 1, "duration_s": 10}},
            {"id": 2, "hpc": {"nodes": 2, "duration_s": 10}, "q": {"nodes": 1, "duration_s": 10}},
            {"id": 3, "hpc": {"nodes": 1, "duration_s": 10}, "q": {"nodes": 1, "duration_s": 10}},
        ],
    }
    cluster, jobs = sched.parse_jobs(doc)
    tl = sched.simulate(cluster, jobs, "hetjob")
    assert tl.start_of(2) == 50 and tl.start_of(3) == 60


def test_jobspec_from_diagnostics_round_trips():
    diags = [
        {"wall_time": 2.0, "phases": {"synthesis": 0.5, "transfer": 0.1, "simulation": 0.6, "extraction": 0.2}},
        {"wall_time": 1.0, "phases": {"synthesis": 0.1, "transfer": 0.1, "simulation": 0.3, "extraction": 0.1}},
    ]
    job = sched.jobspec_from_diagnostics(diags, job_id=5, time_scale=10)
    assert job["hpc"]["duration_s"] == pytest.approx(30) and job["q"]["duration_s"] == pytest.approx(12)
    cluster, jobs = sched.parse_jobs({"cluster": {"hpc_nodes": 1, "q_nodes": 1}, "jobs": [job]})
    assert jobs[0].id == 5


_REGEX = re.compile(r"^-*(PD)*(R)+(CG)?-*$")


def _compress(trace):
    out = []
    for s in trace:
        if not out or out[-1] != s:
            out.append(s)
    return "".join(out)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_job_sets(seed):
    rng = np.random.default_rng(seed)
    doc = random_job_document(rng)
    cluster, jobs = sched.parse_jobs(doc)
    het = sched.simulate(cluster, jobs, "hetjob")
    mp = sched.simulate(cluster, jobs, "mpmd")
    for tl in (het, mp):
        assert sched.check_capacity(tl)
        traces = state_traces(tl)
        for r in tl.runs:
            trace = _compress(traces[r.job_id, r.component])
            assert _REGEX.match(trace), trace
            assert ("CG" in trace) == (cluster.completing_delay > 0)
    for j in jobs:
        assert het.run(j.id, sched.Q).start <= mp.run(j.id, sched.Q).start
    again = sched.simulate(*sched.parse_jobs(json.loads(json.dumps(doc))), "hetjob")
    assert again == het
