"""Worker collectives: one worker per time interval, neighbor-only channels.

Two interchangeable backends run the same worker scripts: ``thread`` (default,
in-process) and ``process`` (fork-based, for wall-clock scaling runs). Results
are deterministic under any scheduling because workers communicate only
through ordered point-to-point channels and order-independent reductions.

Workers may optionally record every send into a message log entry
``{"from": p, "to": q, "tag": ..., "time": simulation_time, "norm": ...}``.
"""

from __future__ import annotations

import multiprocessing as mp
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import CollectiveFailure


@dataclass
class MessageRecorder:
    """Collects worker message logs and per-worker receive-wait times."""

    messages: list[dict] = field(default_factory=list)
    wait_seconds: list[float] = field(default_factory=list)

    def to_json_lines(self) -> str:
        import json

        return "\n".join(json.dumps(m) for m in self.messages)


class _Aborted(RuntimeError):
    """Raised inside workers when a peer failed; silently swallowed."""


class _ThreadLinks:
    """Per-worker communication endpoints for the thread backend."""

    def __init__(self, rank, size, inbox_prev, inbox_next, out_prev, out_next,
                 barrier, shared, abort, log_sends):
        self.rank = rank
        self.size = size
        self._inbox_prev = inbox_prev
        self._inbox_next = inbox_next
        self._out_prev = out_prev
        self._out_next = out_next
        self._barrier = barrier
        self._shared = shared
        self._abort = abort
        self.log: list[dict] = [] if log_sends else None
        self.wait_seconds = 0.0

    def _record(self, to, payload, tag, sim_time):
        if self.log is not None:
            norm = float(np.linalg.norm(payload)) if isinstance(payload, np.ndarray) else 0.0
            self.log.append(
                {"from": self.rank, "to": to, "tag": tag, "time": float(sim_time), "norm": norm}
            )

    def send_next(self, payload, tag="", sim_time=0.0):
        self._record(self.rank + 1, payload, tag, sim_time)
        self._out_next.put(payload)

    def send_prev(self, payload, tag="", sim_time=0.0):
        self._record(self.rank - 1, payload, tag, sim_time)
        self._out_prev.put(payload)

    def _blocking_get(self, q):
        start = time.perf_counter()
        while True:
            try:
                item = q.get(timeout=0.05)
                self.wait_seconds += time.perf_counter() - start
                return item
            except queue.Empty:
                if self._abort.is_set():
                    raise _Aborted()

    def recv_prev(self):
        return self._blocking_get(self._inbox_prev)

    def recv_next(self):
        return self._blocking_get(self._inbox_next)

    def barrier(self):
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            raise _Aborted()

    def allreduce_max(self, value: float) -> float:
        self._shared[self.rank] = value
        self.barrier()
        out = max(self._shared)
        self.barrier()
        return out

    def allgather(self, payload) -> list:
        self._shared[self.rank] = payload
        self.barrier()
        out = list(self._shared)
        self.barrier()
        return out


def _run_threaded(size, worker_fn, log_sends):
    barrier = threading.Barrier(size)
    abort = threading.Event()
    shared = [None] * size
    chans_up = [queue.Queue() for _ in range(size - 1)]   # p -> p+1
    chans_down = [queue.Queue() for _ in range(size - 1)]  # p -> p-1
    results: list[Any] = [None] * size
    failures: list[tuple[int, BaseException]] = []
    links: list[_ThreadLinks] = []
    lock = threading.Lock()

    for p in range(size):
        links.append(
            _ThreadLinks(
                p,
                size,
                inbox_prev=chans_up[p - 1] if p > 0 else None,
                inbox_next=chans_down[p] if p < size - 1 else None,
                out_prev=chans_down[p - 1] if p > 0 else None,
                out_next=chans_up[p] if p < size - 1 else None,
                barrier=barrier,
                shared=shared,
                abort=abort,
                log_sends=log_sends,
            )
        )

    def runner(p):
        try:
            results[p] = worker_fn(p, links[p])
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - forwarded to caller
            with lock:
                failures.append((p, exc))
            abort.set()
            barrier.abort()

    threads = [threading.Thread(target=runner, args=(p,), daemon=True) for p in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if failures:
        failures.sort(key=lambda f: f[0])
        rank, exc = failures[0]
        raise CollectiveFailure(rank, type(exc).__name__, exc)
    logs = [lnk.log or [] for lnk in links]
    waits = [lnk.wait_seconds for lnk in links]
    return results, logs, waits


class _ProcessLinks:
    """Per-worker endpoints for the fork-based process backend."""

    def __init__(self, rank, size, conn_prev, conn_next, log_sends):
        self.rank = rank
        self.size = size
        self._conn_prev = conn_prev
        self._conn_next = conn_next
        self.log: list[dict] = [] if log_sends else None
        self.wait_seconds = 0.0

    def _record(self, to, payload, tag, sim_time):
        if self.log is not None:
            norm = float(np.linalg.norm(payload)) if isinstance(payload, np.ndarray) else 0.0
            self.log.append(
                {"from": self.rank, "to": to, "tag": tag, "time": float(sim_time), "norm": norm}
            )

    def send_next(self, payload, tag="", sim_time=0.0):
        self._record(self.rank + 1, payload, tag, sim_time)
        self._conn_next.send(payload)

    def send_prev(self, payload, tag="", sim_time=0.0):
        self._record(self.rank - 1, payload, tag, sim_time)
        self._conn_prev.send(payload)

    def _timed_recv(self, conn):
        start = time.perf_counter()
        item = conn.recv()
        self.wait_seconds += time.perf_counter() - start
        return item

    def recv_prev(self):
        return self._timed_recv(self._conn_prev)

    def recv_next(self):
        return self._timed_recv(self._conn_next)

    def allreduce_max(self, value: float) -> float:
        # up-sweep to the last rank, then down-sweep back: neighbor-only
        acc = value
        if self.rank > 0:
            acc = max(acc, self._timed_recv(self._conn_prev))
        if self.rank < self.size - 1:
            self._conn_next.send(acc)
            acc = self._timed_recv(self._conn_next)
        if self.rank > 0:
            self._conn_prev.send(acc)
        return acc

    def barrier(self):
        self.allreduce_max(0.0)

    def allgather(self, payload) -> list:
        items = {self.rank: payload}
        if self.rank > 0:
            items.update(self._timed_recv(self._conn_prev))
        if self.rank < self.size - 1:
            self._conn_next.send(items)
            items = self._timed_recv(self._conn_next)
        if self.rank > 0:
            self._conn_prev.send(items)
        return [items[p] for p in range(self.size)]


def _process_entry(rank, size, worker_fn, conn_prev, conn_next, result_conn, log_sends):
    links = _ProcessLinks(rank, size, conn_prev, conn_next, log_sends)
    try:
        res = worker_fn(rank, links)
        result_conn.send(("ok", res, links.log or [], links.wait_seconds))
    except BaseException as exc:  # noqa: BLE001 - reported to the parent
        result_conn.send(("error", exc, links.log or [], links.wait_seconds))


def _run_processes(size, worker_fn, log_sends):
    ctx = mp.get_context("fork")
    ring = [ctx.Pipe() for _ in range(size - 1)]
    result_pipes = [ctx.Pipe(duplex=False) for _ in range(size)]
    procs = []
    for p in range(size):
        conn_prev = ring[p - 1][1] if p > 0 else None
        conn_next = ring[p][0] if p < size - 1 else None
        proc = ctx.Process(
            target=_process_entry,
            args=(p, size, worker_fn, conn_prev, conn_next, result_pipes[p][1], log_sends),
        )
        procs.append(proc)
        proc.start()

    results = [None] * size
    logs = [[] for _ in range(size)]
    waits = [0.0] * size
    failures: list[tuple[int, BaseException]] = []
    pending = {result_pipes[p][0]: p for p in range(size)}
    try:
        while pending:
            # after a failure, give concurrently-failing peers a short grace
            # window so the lowest failing rank is reported deterministically
            ready = mp.connection.wait(list(pending),
                                       timeout=0.5 if failures else 60.0)
            if not ready:
                if failures:
                    break
                raise RuntimeError("worker collective stalled")
            for conn in ready:
                p = pending.pop(conn)
                try:
                    status, payload, log, wait = conn.recv()
                except EOFError:
                    failures.append((p, RuntimeError("worker died")))
                    continue
                logs[p], waits[p] = log, wait
                if status == "ok":
                    results[p] = payload
                else:
                    failures.append((p, payload))
    finally:
        if failures:
            # peers may be blocked on a channel that will never fill
            for proc in procs:
                proc.terminate()
        for proc in procs:
            proc.join(timeout=5.0)
            if proc.is_alive():
                proc.kill()
    if failures:
        failures.sort(key=lambda f: f[0])
        rank, exc = failures[0]
        raise CollectiveFailure(rank, type(exc).__name__, exc)
    return results, logs, waits


def run_collective(
    size: int,
    worker_fn: Callable[[int, Any], Any],
    backend: str = "thread",
    recorder: MessageRecorder | None = None,
) -> list:
    """Run ``worker_fn(rank, links)`` on every rank and gather the results.

    All inter-worker traffic goes through the ``links`` endpoints. If a
    worker raises, the collective aborts and a :class:`CollectiveFailure`
    naming the lowest failing rank propagates.
    """
    if size < 1:
        raise ValueError("need at least one worker")
    log_sends = recorder is not None
    if size == 1:

        class _Solo:
            rank, size = 0, 1
            log = [] if log_sends else None
            wait_seconds = 0.0

            def allreduce_max(self, value):
                return value

            def barrier(self):
                pass

            def allgather(self, payload):
                return [payload]

        solo = _Solo()
        try:
            results = [worker_fn(0, solo)]
        except BaseException as exc:  # noqa: BLE001
            raise CollectiveFailure(0, type(exc).__name__, exc)
        logs, waits = [solo.log or []], [0.0]
    elif backend == "thread":
        results, logs, waits = _run_threaded(size, worker_fn, log_sends)
    elif backend == "process":
        results, logs, waits = _run_processes(size, worker_fn, log_sends)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    if recorder is not None:
        for log in logs:
            recorder.messages.extend(log)
        recorder.wait_seconds = waits
    return results
