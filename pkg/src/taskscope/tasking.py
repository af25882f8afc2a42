"""A small cooperative many-task runtime.

Tasks are plain callables or coroutine functions.  A coroutine task suspends
with ``await suspend_on(token)`` (or simply ``await token``); the worker that
ran it goes on with other work and the task is re-queued once the token is
fulfilled, possibly on a different worker.  Every lifecycle transition is
reported to an optional profiler so that suspended time can be excluded from
a task's active time.
"""

from __future__ import annotations

import inspect
import itertools
import threading
from collections import Counter, deque
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterator

from .clock import now_ns

UNNAMED_TASK = "unnamed-task"
ROOT_GUID = 0

PENDING = "pending"
FULFILLED = "fulfilled"


class TaskingError(RuntimeError):
    pass


class SchedulerShutdownError(TaskingError):
    pass


class UsageError(TaskingError):
    pass


class DoubleFulfillError(TaskingError):
    pass


class DeadlockError(TaskingError):
    def __init__(self, suspended: list[int]):
        self.suspended = sorted(suspended)
        super().__init__(f"deadlock: suspended tasks {self.suspended} can never resume")


class TaskFailedError(TaskingError):
    def __init__(self, identity: "TaskIdentity", error: BaseException):
        self.identity = identity
        self.error = error
        super().__init__(f"task {identity.guid} ({identity.label}) failed: {error!r}")


@dataclass(frozen=True)
class TaskIdentity:
    guid: int
    name: str | None = None
    parent_guid: int | None = ROOT_GUID
    locality: int = 0

    @property
    def label(self) -> str:
        return self.name if self.name else UNNAMED_TASK


@dataclass(frozen=True)
class SchedulerConfig:
    worker_count: int = 1
    seed: int = 0
    run_queue_policy: str = "fifo"

    def __post_init__(self) -> None:
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.run_queue_policy != "fifo":
            raise ValueError(f"unsupported run queue policy {self.run_queue_policy!r}")


_local = threading.local()


def current_task() -> TaskIdentity | None:
    task = getattr(_local, "task", None)
    return task.identity if task is not None else None


def current_runtime() -> "Runtime | None":
    return getattr(_local, "runtime", None)


def current_worker() -> int | None:
    return getattr(_local, "worker", None)


class CompletionToken:
    """Single-assignment future.

    ``identity`` is set when the token represents a spawned task.
    """

    __slots__ = ("_lock", "_state", "_value", "_error", "_waiters", "_callbacks", "_event", "identity")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._state = PENDING
        self._value: Any = None
        self._error: BaseException | None = None
        self._waiters: list[_Task] = []
        self._callbacks: list[Callable[[CompletionToken], None]] = []
        self._event: threading.Event | None = None
        self.identity: TaskIdentity | None = None

    @property
    def state(self) -> str:
        return self._state

    @property
    def done(self) -> bool:
        return self._state is FULFILLED

    @property
    def waiter_guids(self) -> set[int]:
        with self._lock:
            return {t.identity.guid for t in self._waiters}

    def result(self) -> Any:
        if self._state is PENDING:
            raise UsageError("token is still pending")
        if self._error is not None:
            raise self._error
        return self._value

    def exception(self) -> BaseException | None:
        return self._error

    def add_done_callback(self, fn: Callable[["CompletionToken"], None]) -> None:
        with self._lock:
            if self._state is PENDING:
                self._callbacks.append(fn)
                return
        fn(self)

    def wait(self, timeout: float | None = None) -> Any:
        """Block a thread that is not a task until the token is fulfilled."""
        if getattr(_local, "task", None) is not None:
            raise UsageError("tasks must use suspend_on() instead of blocking in wait()")
        with self._lock:
            if self._state is PENDING and self._event is None:
                self._event = threading.Event()
            event = self._event
        if event is not None and not event.wait(timeout):
            raise TimeoutError("token not fulfilled within timeout")
        return self.result()

    def __await__(self):
        return suspend_on(self).__await__()

    def _settle(self, value: Any, error: BaseException | None) -> bool:
        with self._lock:
            if self._state is not PENDING:
                return False
            self._value = value
            self._error = error
            self._state = FULFILLED
            waiters, self._waiters = self._waiters, []
            callbacks, self._callbacks = self._callbacks, []
            event = self._event
        if event is not None:
            event.set()
        for task in waiters:
            task.runtime._wake(task)
        for fn in callbacks:
            fn(self)
        return True

    def _add_waiter(self, task: "_Task") -> bool:
        with self._lock:
            if self._state is PENDING:
                self._waiters.append(task)
                return True
        return False

    def __repr__(self) -> str:
        return f"<CompletionToken {self._state}>"


class Promise:
    """Write side of a promise/future pair."""

    __slots__ = ("token", "_runtime")

    def __init__(self, token: CompletionToken, runtime: "Runtime | None" = None):
        self.token = token
        self._runtime = runtime
        if runtime is not None:
            runtime.hold()

    def fulfill(self, value: Any = None) -> None:
        if not self.token._settle(value, None):
            raise DoubleFulfillError("promise already fulfilled")
        self._released()

    def fail(self, error: BaseException) -> None:
        if not self.token._settle(None, error):
            raise DoubleFulfillError("promise already fulfilled")
        self._released()

    def _released(self) -> None:
        if self._runtime is not None:
            self._runtime.release()
            self._runtime = None


def make_promise(runtime: "Runtime | None" = None) -> tuple[Promise, CompletionToken]:
    """Create a promise/future pair.

    Passing ``runtime`` marks the promise as externally fulfilled: the runtime
    will not report a deadlock while it is outstanding.
    """
    token = CompletionToken()
    return Promise(token, runtime), token


def fulfilled(value: Any = None) -> CompletionToken:
    token = CompletionToken()
    token._settle(value, None)
    return token


class _Suspension:
    __slots__ = ("token",)

    def __init__(self, token: CompletionToken):
        self.token = token

    def __await__(self):
        if self.token._state is PENDING:
            yield self.token
        return self.token.result()


def suspend_on(token: CompletionToken) -> _Suspension:
    """Awaitable that yields the current task until ``token`` is fulfilled."""
    if getattr(_local, "task", None) is None:
        raise UsageError("suspend_on() called outside a running task")
    if not isinstance(token, CompletionToken):
        raise TypeError(f"expected CompletionToken, got {type(token).__name__}")
    return _Suspension(token)


class _Task:
    __slots__ = ("identity", "runtime", "body", "args", "coro", "token")

    def __init__(self, identity, runtime, body, args, token):
        self.identity = identity
        self.runtime = runtime
        self.body = body
        self.args = args
        self.coro = None
        self.token = token


class Runtime:
    """Multi-worker scheduler with per-worker FIFO queues and work stealing."""

    def __init__(
        self,
        config: SchedulerConfig | None = None,
        *,
        profiler: Any = None,
        locality: int = 0,
    ):
        self.config = config or SchedulerConfig()
        self.profiler = profiler
        self.locality = locality
        self._lock = threading.Lock()
        self._work_cv = threading.Condition(self._lock)
        self._idle_cv = threading.Condition(self._lock)
        self._queues: list[deque[_Task]] = [deque() for _ in range(self.config.worker_count)]
        self._guids = itertools.count(1)
        self._live = 0
        self._running = 0
        self._external = 0
        self._suspended: dict[int, _Task] = {}
        self._rr = 0
        self._shutdown = False
        self._deadlock: list[int] | None = None
        self._failures: list[tuple[TaskIdentity, BaseException]] = []
        # always-on, profiler-independent per-name completion counts
        self.completed_counts: Counter[str] = Counter()
        self._workers = [
            threading.Thread(target=self._worker_main, args=(i,), name=f"taskscope-L{locality}-W{i}", daemon=True)
            for i in range(self.config.worker_count)
        ]
        for t in self._workers:
            t.start()

    # -- public API ---------------------------------------------------

    def new_identity(self, name: str | None, parent: int | None = ROOT_GUID) -> TaskIdentity:
        """Allocate a guid for a timer that is not backed by a scheduled task."""
        with self._lock:
            return TaskIdentity(next(self._guids), name, parent, self.locality)

    def spawn(
        self,
        body: Callable[..., Any],
        *args: Any,
        name: str | None = None,
        parent: int | None = None,
    ) -> CompletionToken:
        cur = getattr(_local, "task", None)
        if parent is None:
            parent = cur.identity.guid if cur is not None and cur.runtime is self else ROOT_GUID
        token = CompletionToken()
        prof = self.profiler
        with self._lock:
            if self._shutdown:
                raise SchedulerShutdownError("runtime has been shut down")
            identity = TaskIdentity(next(self._guids), name, parent, self.locality)
            token.identity = identity
            task = _Task(identity, self, body, args, token)
            self._live += 1
            if prof is not None:
                prof.on_task_create(identity)
            self._queues[self._target_queue()].append(task)
            self._work_cv.notify()
        return token

    def run_until_idle(self, *roots: Any, timeout: float | None = None) -> float:
        """Spawn ``roots`` and block until every task has completed.

        A root is a callable or a ``(name, callable, *args)`` tuple.  Returns
        the elapsed wall time in seconds.
        """
        start = now_ns()
        for root in roots:
            if isinstance(root, tuple):
                name, fn, *args = root
                self.spawn(fn, *args, name=name)
            else:
                self.spawn(root)
        with self._lock:
            if not roots and self._live == 0:
                raise UsageError("run_until_idle() needs at least one root task")
            ok = self._idle_cv.wait_for(lambda: self._live == 0 or self._deadlock is not None, timeout)
            if not ok:
                raise TimeoutError(f"runtime not idle after {timeout}s; suspended: {sorted(self._suspended)}")
            if self._deadlock is not None:
                stuck = [self._suspended.pop(g) for g in self._deadlock]
                self._live -= len(stuck)
                guids, self._deadlock = self._deadlock, None
            else:
                stuck, guids = [], None
            failures, self._failures = self._failures, []
        if guids is not None:
            for task in stuck:
                if task.coro is not None:
                    task.coro.close()
            raise DeadlockError(guids)
        if failures:
            identity, error = failures[0]
            raise TaskFailedError(identity, error) from error
        return (now_ns() - start) / 1e9

    def hold(self) -> None:
        """Register an outstanding external fulfillment source."""
        with self._lock:
            self._external += 1

    def release(self) -> None:
        with self._lock:
            self._external -= 1
            self._check_deadlock_locked()

    @contextmanager
    def held(self) -> Iterator[None]:
        self.hold()
        try:
            yield
        finally:
            self.release()

    @property
    def suspended_guids(self) -> list[int]:
        with self._lock:
            return sorted(self._suspended)

    def shutdown(self) -> None:
        with self._lock:
            self._shutdown = True
            self._work_cv.notify_all()
        for t in self._workers:
            if t is not threading.current_thread():
                t.join()

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()

    # -- internals ----------------------------------------------------

    def _target_queue(self) -> int:
        if getattr(_local, "runtime", None) is self:
            return _local.worker
        self._rr = (self._rr + 1) % len(self._queues)
        return self._rr

    def _pop_locked(self, idx: int) -> _Task | None:
        q = self._queues[idx]
        if q:
            return q.popleft()
        for j in range(len(self._queues) - 1, -1, -1):
            if self._queues[j]:
                return self._queues[j].popleft()
        return None

    def _check_deadlock_locked(self) -> None:
        if (
            self._running == 0
            and self._external == 0
            and self._live > 0
            and self._deadlock is None
            and len(self._suspended) == self._live
        ):
            self._deadlock = sorted(self._suspended)
            self._idle_cv.notify_all()

    def _wake(self, task: _Task) -> None:
        with self._lock:
            self._suspended.pop(task.identity.guid, None)
            self._queues[self._target_queue()].append(task)
            self._work_cv.notify()

    def _worker_main(self, idx: int) -> None:
        _local.runtime = self
        _local.worker = idx
        while True:
            with self._lock:
                task = self._pop_locked(idx)
                while task is None:
                    if self._shutdown:
                        return
                    self._check_deadlock_locked()
                    self._work_cv.wait()
                    task = self._pop_locked(idx)
                self._running += 1
            self._step(task, idx)

    def _step(self, task: _Task, idx: int) -> None:
        prof = self.profiler
        guid = task.identity.guid
        _local.task = task
        try:
            if task.coro is None:
                if prof is not None:
                    prof.on_task_start(guid, worker=idx)
                try:
                    result = task.body(*task.args)
                except BaseException as exc:  # noqa: BLE001 - reported through the token
                    self._finish(task, None, exc, idx)
                    return
                if not inspect.iscoroutine(result):
                    self._finish(task, result, None, idx)
                    return
                task.coro = result
            elif prof is not None:
                prof.on_task_resume(guid, worker=idx)
            try:
                awaited = task.coro.send(None)
            except StopIteration as stop:
                self._finish(task, stop.value, None, idx)
                return
            except BaseException as exc:  # noqa: BLE001
                self._finish(task, None, exc, idx)
                return
        finally:
            _local.task = None
        if not isinstance(awaited, CompletionToken):
            task.coro.close()
            self._finish(task, None, TypeError(f"task awaited {awaited!r}; only tokens are supported"), idx)
            return
        if prof is not None:
            prof.on_task_yield(guid, worker=idx)
        with self._lock:
            self._suspended[guid] = task
        if not awaited._add_waiter(task):
            self._wake(task)
        with self._lock:
            self._running -= 1
            self._check_deadlock_locked()

    def _finish(self, task: _Task, value: Any, error: BaseException | None, idx: int) -> None:
        if self.profiler is not None:
            self.profiler.on_task_stop(task.identity.guid, worker=idx)
        with self._lock:
            self.completed_counts[task.identity.label] += 1
            if error is not None:
                self._failures.append((task.identity, error))
        task.token._settle(value, error)
        with self._lock:
            self._running -= 1
            self._live -= 1
            if self._live == 0:
                self._idle_cv.notify_all()
            else:
                self._check_deadlock_locked()
