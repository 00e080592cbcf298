"""Growing file-transfer workload between hosts of different LANs.

Every iteration each host sends one file to its (seeded) partner in another
LAN.  File sizes climb a fixed ladder: the n-th iteration transfers
(n+1) * 140428 bytes.  Tasks move through Running/Executing/Completed/Failed
states; failed transfers respawn once with the same size.
"""

from __future__ import annotations

import csv
import enum
import json
import random
from dataclasses import dataclass, replace

FILE_SIZE_STEP = 140_428  # bytes added per iteration
FILE_SIZE_FLOOR = FILE_SIZE_STEP  # size of the very first transfer


class TaskState(str, enum.Enum):
    RUNNING = "Running"
    EXECUTING = "Executing"
    COMPLETED = "Completed"
    FAILED = "Failed"


class FailureCause(str, enum.Enum):
    HOST_DOWN = "HostDown"
    PORT_DOWN = "PortDown"
    TIMEOUT = "Timeout"


class TaskEvent(str, enum.Enum):
    TRANSFER_DONE = "TransferDone"
    HOST_FAILURE = "HostFailure"
    PORT_FAILURE = "PortFailure"
    TICK = "Tick"
    ALL_PEERS_DONE = "AllPeersDone"


class IllegalTransition(RuntimeError):
    """Raised when a task receives an event its state cannot accept."""


@dataclass(frozen=True)
class TransferTask:
    id: str
    src_host: int
    dst_host: int
    iteration: int
    size: int
    state: TaskState = TaskState.EXECUTING
    failure_cause: FailureCause | None = None
    last_failure: FailureCause | None = None
    attempt: int = 0
    start_t: float | None = None
    end_t: float | None = None
    # optional scripted fault: (delivered-bytes fraction at which to trip, cause)
    scripted_failure: tuple[float, FailureCause] | None = None


@dataclass(frozen=True)
class TransferRecord:
    task_id: str
    src_host: int
    dst_host: int
    size: int
    duration_s: float | None
    rate_bytes_per_s: float | None
    status: str
    timestamp: float


def next_file_size(prev: int | None) -> int:
    """Next rung of the size ladder; the first transfer starts at the floor."""
    if prev is None:
        return FILE_SIZE_FLOOR
    if prev < 0:
        raise ValueError(f"file size cannot be negative, got {prev}")
    return prev + FILE_SIZE_STEP


def file_size_at(iteration: int) -> int:
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return FILE_SIZE_FLOOR + iteration * FILE_SIZE_STEP


def transfer_rate(size: int, duration: float) -> float:
    if duration <= 0:
        raise ValueError(f"transfer duration must be positive, got {duration}")
    return size / duration


def _cross_lan_pairing(hosts: list[int], lan: dict[int, int], rng: random.Random) -> dict[int, int]:
    """Permutation of hosts with every image in a foreign LAN.

    Each host sends exactly one file and receives exactly one, so access
    links never collide at the receiver and core contention stays the thing
    under study.  Sampled by seeded shuffle with rejection.
    """
    for _ in range(10_000):
        targets = hosts[:]
        rng.shuffle(targets)
        if all(lan[h] != lan[t] for h, t in zip(hosts, targets)):
            return dict(zip(hosts, targets))
    # fall back to a LAN-rotating assignment, still deterministic
    by_lan: dict[int, list[int]] = {}
    for h in hosts:
        by_lan.setdefault(lan[h], []).append(h)
    lan_ids = sorted(by_lan)
    if len(lan_ids) < 2:
        raise ValueError("cross-LAN pairing needs at least two LANs")
    mapping = {}
    for i, l in enumerate(lan_ids):
        nxt = by_lan[lan_ids[(i + 1) % len(lan_ids)]]
        for j, h in enumerate(by_lan[l]):
            mapping[h] = nxt[j % len(nxt)]
    return mapping


def build_schedule(topology, iterations: int, seed: int = 0, *,
                   failure_prob: float = 0.0) -> list[TransferTask]:
    """One task per host per iteration, all cross-LAN, partner fixed per seed.

    Partners are drawn once per schedule so that traffic history stays
    predictive across iterations.  With `failure_prob` > 0 a seeded fraction
    of tasks carries a scripted mid-transfer fault for exercising recovery.
    """
    if topology.lan_count() < 2:
        raise ValueError("schedule needs hosts in at least two LANs")
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    rng = random.Random(seed)
    hosts = sorted(topology.hosts)
    pairing = _cross_lan_pairing(hosts, topology.lan, rng)
    tasks: list[TransferTask] = []
    for it in range(iterations):
        size = file_size_at(it)
        for h in hosts:
            scripted = None
            if failure_prob > 0 and rng.random() < failure_prob:
                frac = 0.1 + 0.8 * rng.random()
                cause = FailureCause.HOST_DOWN if rng.random() < 0.5 else FailureCause.PORT_DOWN
                scripted = (frac, cause)
            tasks.append(TransferTask(
                id=f"i{it:03d}-h{h:03d}",
                src_host=h,
                dst_host=pairing[h],
                iteration=it,
                size=size,
                scripted_failure=scripted,
            ))
    return tasks


def fail_and_respawn(task: TransferTask, cause: FailureCause) -> tuple[TransferTask, TransferTask]:
    """Mark a task failed and produce its same-size replacement."""
    failed = replace(task, state=TaskState.FAILED, failure_cause=cause)
    respawn = replace(
        task,
        id=f"{task.id}-r{task.attempt + 1}",
        state=TaskState.EXECUTING,
        failure_cause=None,
        last_failure=cause,
        attempt=task.attempt + 1,
        start_t=None,
        end_t=None,
        scripted_failure=None,
    )
    return failed, respawn


def step_task(task: TransferTask, event: TaskEvent) -> TransferTask:
    """Advance the task state machine by one event.

    Failure events return the respawned same-size task (the failed snapshot
    is available via `fail_and_respawn`).  A completed task acknowledged with
    AllPeersDone yields its successor for the next iteration, one rung up
    the size ladder.
    """
    s, e = task.state, event
    if s == TaskState.RUNNING and e == TaskEvent.TICK:
        return task
    if s == TaskState.EXECUTING and e == TaskEvent.TICK:
        return task  # progress check only
    if s == TaskState.EXECUTING and e == TaskEvent.TRANSFER_DONE:
        return replace(task, state=TaskState.COMPLETED)
    if s == TaskState.EXECUTING and e == TaskEvent.HOST_FAILURE:
        return fail_and_respawn(task, FailureCause.HOST_DOWN)[1]
    if s == TaskState.EXECUTING and e == TaskEvent.PORT_FAILURE:
        return fail_and_respawn(task, FailureCause.PORT_DOWN)[1]
    if s == TaskState.COMPLETED and e == TaskEvent.ALL_PEERS_DONE:
        return replace(
            task,
            id=f"i{task.iteration + 1:03d}-h{task.src_host:03d}",
            iteration=task.iteration + 1,
            size=next_file_size(task.size),
            state=TaskState.EXECUTING,
            failure_cause=None,
            start_t=None,
            end_t=None,
        )
    raise IllegalTransition(f"event {event.value} is not legal in state {s.value}")


# ---------------------------------------------------------------------------
# serialization

RECORD_FIELDS = ["timestamp", "src", "dst", "size", "duration", "rate", "status"]


def records_to_csv(records: list[TransferRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([
                repr(r.timestamp), r.src_host, r.dst_host, r.size,
                "" if r.duration_s is None else repr(r.duration_s),
                "" if r.rate_bytes_per_s is None else repr(r.rate_bytes_per_s),
                r.status,
            ])


def schedule_to_json(tasks: list[TransferTask], *, tick: float | None = None,
                     horizon: float | None = None) -> str:
    payload = {
        "tick": tick,
        "horizon": horizon,
        "tasks": [
            {"id": t.id, "src": t.src_host, "dst": t.dst_host,
             "iteration": t.iteration, "size": t.size}
            for t in tasks
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def schedule_from_json(text: str) -> tuple[list[TransferTask], float | None, float | None]:
    data = json.loads(text)
    tasks = [
        TransferTask(id=t["id"], src_host=t["src"], dst_host=t["dst"],
                     iteration=t["iteration"], size=t["size"])
        for t in data["tasks"]
    ]
    return tasks, data.get("tick"), data.get("horizon")
