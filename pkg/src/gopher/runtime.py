"""Lightweight-process substrate.

Processes are ``async def`` bodies driven step by step on an :class:`Executor`.
A process that awaits a :class:`Future` yields it to its driver, which parks
the *process* (not the worker thread) until the future completes and then
resubmits the next step.  Two executor flavours exist:

* threaded: ``workers`` daemon threads pull steps from a shared FIFO queue,
  and a timer thread feeds expired timers into the same queue;
* deterministic: no threads at all.  Steps run in strict FIFO order in the
  thread that calls :meth:`Executor.run_until_complete` (or :meth:`run`),
  optionally against a virtual clock that only moves when told to.
"""

from __future__ import annotations

import concurrent.futures
import contextvars
import functools
import heapq
import inspect
import itertools
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .errors import DeadlockError, RejectedError, UsageError

log = logging.getLogger("gopher")

WORKERS_ENV = "GOPHER_WORKERS"


class Future(concurrent.futures.Future):
    """A thread-safe eventual value that processes can ``await``."""

    def __await__(self):
        if not self.done():
            yield self
        return self.result()


def completed(value: Any = None) -> Future:
    fut = Future()
    fut.set_result(value)
    return fut


def failed(exc: BaseException) -> Future:
    fut = Future()
    fut.set_exception(exc)
    return fut


class ProcessHandle(Future):
    """Eventual result of a spawned process.

    A handle counts as *observed* once somebody awaits it, asks for its result
    or attaches a callback.  Failures of unobserved handles are reported to the
    executor's failure listener so they are never silently lost.
    """

    def __init__(self, pid: int):
        super().__init__()
        self.pid = pid
        self._observed = False

    def add_done_callback(self, fn):
        self._observed = True
        super().add_done_callback(fn)

    def result(self, timeout=None):
        self._observed = True
        return super().result(timeout)

    def exception(self, timeout=None):
        self._observed = True
        return super().exception(timeout)

    def __repr__(self):
        return f"<ProcessHandle pid={self.pid} state={self._state}>"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return workers


@dataclass(frozen=True)
class ExecutorConfig:
    workers: int = 1
    deterministic: bool = False
    virtual_time: bool = False

    def __post_init__(self):
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ValueError(f"workers must be a positive int, got {self.workers!r}")
        if self.deterministic and self.workers != 1:
            raise ValueError("deterministic mode requires exactly one worker")
        if self.virtual_time and not self.deterministic:
            raise ValueError("virtual time requires deterministic mode")


class TimerHandle:
    __slots__ = ("deadline", "_callback", "cancelled")

    def __init__(self, deadline: float, callback: Callable[[], Any]):
        self.deadline = deadline
        self._callback = callback
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


_local = threading.local()
_default_stack: list[Executor] = []
_global_default: Optional[Executor] = None
_global_lock = threading.Lock()


def default_executor() -> Executor:
    """The innermost executor entered with ``with``, else a lazily created shared pool."""
    global _global_default
    if _default_stack:
        return _default_stack[-1]
    with _global_lock:
        if _global_default is None or _global_default.is_shutdown:
            _global_default = Executor()
        return _global_default


def current_executor() -> Executor:
    """Executor running the current step, falling back to :func:`default_executor`."""
    ex = getattr(_local, "executor", None)
    return ex if ex is not None else default_executor()


def _log_failure(handle: ProcessHandle, exc: BaseException) -> None:
    log.error("process %d failed and nobody observed it", handle.pid, exc_info=exc)


class Executor:
    def __init__(
        self,
        config: Optional[ExecutorConfig] = None,
        *,
        workers: Optional[int] = None,
        deterministic: bool = False,
        virtual_time: bool = False,
        failure_listener: Optional[Callable[[ProcessHandle, BaseException], Any]] = None,
    ):
        if config is None:
            if workers is None:
                workers = 1 if deterministic else default_workers()
            config = ExecutorConfig(workers, deterministic, virtual_time)
        self.config = config
        self.failure_listener = failure_listener or _log_failure
        self._lock = threading.Lock()
        self._work = threading.Condition(self._lock)
        self._timer_wakeup = threading.Condition(self._lock)
        self._jobs: deque = deque()
        self._timers: list = []
        self._timer_seq = itertools.count()
        self._pids = itertools.count(1)
        self._shutdown = False
        self._clock = 0.0
        self._epoch = time.monotonic()
        self._threads: list[threading.Thread] = []
        if not config.deterministic:
            for i in range(config.workers):
                t = threading.Thread(target=self._worker, name=f"gopher-worker-{i}", daemon=True)
                t.start()
                self._threads.append(t)
            t = threading.Thread(target=self._timer_loop, name="gopher-timer", daemon=True)
            t.start()
            self._threads.append(t)

    def __repr__(self):
        c = self.config
        return (
            f"<Executor workers={c.workers} deterministic={c.deterministic} "
            f"virtual_time={c.virtual_time}>"
        )

    # -- lifecycle ---------------------------------------------------------

    def __enter__(self):
        _default_stack.append(self)
        return self

    def __exit__(self, *exc_info):
        _default_stack.remove(self)
        self.shutdown()

    @property
    def is_shutdown(self) -> bool:
        return self._shutdown

    def shutdown(self) -> None:
        with self._lock:
            self._shutdown = True
            self._jobs.clear()
            self._work.notify_all()
            self._timer_wakeup.notify_all()
        me = threading.current_thread()
        for t in self._threads:
            if t is not me:
                t.join(timeout=1.0)

    # -- scheduling --------------------------------------------------------

    def submit(self, fn: Callable, *args) -> None:
        """Queue ``fn(*args)`` to run on a worker."""
        job = functools.partial(fn, *args) if args else fn
        with self._lock:
            if self._shutdown:
                raise RejectedError("executor has been shut down")
            self._jobs.append(job)
            self._work.notify()

    def schedule_step(self, step, flow=None) -> None:
        """Queue a continuated step, or a future that will produce one.

        ``flow`` receives the failure if ``step`` is a future that fails.
        """
        self.submit(self._resume_step, step, flow)

    def _resume_step(self, step, flow) -> None:
        if step is None:
            return
        if isinstance(step, concurrent.futures.Future):
            def _on_done(f):
                exc = f.exception()
                if exc is not None:
                    if flow is not None:
                        flow.do_throw(exc)
                else:
                    self.schedule_step(f.result(), flow)

            step.add_done_callback(_on_done)
            return
        try:
            step._resume(self)
        except Exception as e:
            target = getattr(step, "flow", None) or flow
            if target is None:
                raise
            target.do_throw(e)

    def call_later(self, delay: float, fn: Callable, *args) -> TimerHandle:
        callback = functools.partial(fn, *args) if args else fn
        with self._lock:
            if self._shutdown:
                raise RejectedError("executor has been shut down")
            handle = TimerHandle(self._now_locked() + max(delay, 0.0), callback)
            heapq.heappush(self._timers, (handle.deadline, next(self._timer_seq), handle))
            self._timer_wakeup.notify()
        return handle

    def now(self) -> float:
        with self._lock:
            return self._now_locked()

    def _now_locked(self) -> float:
        if self.config.virtual_time:
            return self._clock
        return time.monotonic() - self._epoch

    def spawn(self, body, *args) -> ProcessHandle:
        """Start ``body`` as a lightweight process.

        ``body`` may be a coroutine object, an ``async def`` function (called
        with ``args``), or a plain callable whose return value becomes the
        process result.
        """
        proc = _Process(self, next(self._pids), body, args)
        self.submit(proc._step)
        return proc.handle

    # -- job execution -----------------------------------------------------

    def _run_job(self, job) -> None:
        prev = getattr(_local, "executor", None)
        _local.executor = self
        try:
            job()
        except Exception:
            log.exception("unhandled error in executor job")
        finally:
            _local.executor = prev

    def _worker(self) -> None:
        while True:
            with self._lock:
                while not self._jobs and not self._shutdown:
                    self._work.wait()
                if self._shutdown:
                    return
                job = self._jobs.popleft()
            self._run_job(job)

    def _timer_loop(self) -> None:
        with self._lock:
            while not self._shutdown:
                if not self._timers:
                    self._timer_wakeup.wait()
                    continue
                delay = self._timers[0][0] - self._now_locked()
                if delay > 0:
                    self._timer_wakeup.wait(delay)
                    continue
                _, _, handle = heapq.heappop(self._timers)
                if not handle.cancelled:
                    self._jobs.append(handle._callback)
                    self._work.notify()

    # -- deterministic driving ---------------------------------------------

    def _require_deterministic(self, what: str) -> None:
        if not self.config.deterministic:
            raise UsageError(f"{what} is only available in deterministic mode")

    def _next_job(self):
        with self._lock:
            if not self.config.virtual_time:
                now = self._now_locked()
                while self._timers and self._timers[0][0] <= now:
                    _, _, handle = heapq.heappop(self._timers)
                    if not handle.cancelled:
                        self._jobs.append(handle._callback)
            return self._jobs.popleft() if self._jobs else None

    def run(self) -> int:
        """Run queued steps until the queue is empty; returns the number run."""
        self._require_deterministic("run()")
        count = 0
        while (job := self._next_job()) is not None:
            self._run_job(job)
            count += 1
        return count

    def _pop_live_timer(self) -> Optional[TimerHandle]:
        with self._lock:
            while self._timers:
                _, _, handle = heapq.heappop(self._timers)
                if not handle.cancelled:
                    return handle
            return None

    def _peek_deadline(self) -> Optional[float]:
        with self._lock:
            while self._timers and self._timers[0][2].cancelled:
                heapq.heappop(self._timers)
            return self._timers[0][0] if self._timers else None

    def _fire(self, handle: TimerHandle) -> None:
        with self._lock:
            self._clock = max(self._clock, handle.deadline)
        self._run_job(handle._callback)
        self.run()

    def advance(self, delta: float) -> None:
        """Move the virtual clock forward, firing due timers in deadline order."""
        if not self.config.virtual_time:
            raise UsageError("advance() requires virtual-time mode")
        if delta < 0:
            raise ValueError("cannot move the clock backwards")
        self.run()
        target = self._clock + delta
        while (deadline := self._peek_deadline()) is not None and deadline <= target:
            self._fire(self._pop_live_timer())
        with self._lock:
            self._clock = target

    def run_until_complete(self, fut: concurrent.futures.Future, timeout: Optional[float] = None):
        """Drive the executor until ``fut`` is done and return its result.

        In virtual-time mode an idle queue makes the clock jump to the next
        timer deadline.  Threaded executors simply block on ``fut``.
        """
        if isinstance(fut, ProcessHandle):
            fut._observed = True
        if not self.config.deterministic:
            return fut.result(timeout)
        while not fut.done():
            job = self._next_job()
            if job is not None:
                self._run_job(job)
                continue
            deadline = self._peek_deadline()
            if deadline is None:
                raise DeadlockError("no runnable work left and the awaited future is not done")
            if self.config.virtual_time:
                self._fire(self._pop_live_timer())
            else:
                time.sleep(max(0.0, deadline - self.now()))
        return fut.result()

    wait = run_until_complete


def spawn(body, *args) -> ProcessHandle:
    """Spawn a process on the current executor."""
    return current_executor().spawn(body, *args)


go = spawn


def sleep(delay: float) -> Future:
    """A future that completes after ``delay`` seconds of executor time.

    ``sleep(0)`` completes immediately, so awaiting it just requeues the
    caller behind everything already runnable.
    """
    fut = Future()
    if delay <= 0:
        fut.set_result(None)
    else:
        current_executor().call_later(delay, fut.set_result, None)
    return fut


# -- processes ---------------------------------------------------------------

_current_process: contextvars.ContextVar[Optional[_Process]] = contextvars.ContextVar(
    "gopher_process", default=None
)


def current_process() -> Optional[_Process]:
    return _current_process.get()


def in_process() -> bool:
    return _current_process.get() is not None


_FATAL = (KeyboardInterrupt, SystemExit, GeneratorExit)


class _Process:
    def __init__(self, executor: Executor, pid: int, body, args):
        self.executor = executor
        self.handle = ProcessHandle(pid)
        self.defers: list[Callable] = []
        self.failure: Optional[BaseException] = None
        self.result: Any = None
        self.in_defer = 0
        self._context = contextvars.copy_context()
        self._context.run(_current_process.set, self)
        self._start = (body, args)
        self._coro = None

    @property
    def pid(self) -> int:
        return self.handle.pid

    def _step(self, exc: Optional[BaseException] = None) -> None:
        if self._coro is None:
            # Created on first step so a never-run process leaves no dangling coroutine.
            self._coro = self._main(*self._start)
        try:
            if exc is None:
                awaited = self._context.run(self._coro.send, None)
            else:
                awaited = self._context.run(self._coro.throw, exc)
        except StopIteration:
            return
        if awaited is None:
            self.executor.submit(self._step)
        elif isinstance(awaited, concurrent.futures.Future):
            awaited.add_done_callback(self._wake)
        else:
            err = TypeError(f"processes can only await gopher futures, got {awaited!r}")
            self.executor.submit(self._step, err)

    def _wake(self, _fut) -> None:
        try:
            self.executor.submit(self._step)
        except RejectedError:
            pass

    async def _main(self, body, args):
        try:
            value = body(*args) if callable(body) else body
            if inspect.isawaitable(value):
                value = await value
            self.result = value
        except _FATAL:
            raise
        except BaseException as e:
            self.failure = e
        while self.defers:
            action = self.defers.pop()
            self.in_defer += 1
            try:
                outcome = action()
                if inspect.isawaitable(outcome):
                    await outcome
            except Exception as e:
                self.failure = e
                self.result = None
            finally:
                self.in_defer -= 1
        self._finish()

    def _finish(self) -> None:
        handle = self.handle
        if self.failure is not None:
            unobserved = not handle._observed
            handle.set_exception(self.failure)
            if unobserved:
                try:
                    self.executor.failure_listener(handle, self.failure)
                except Exception:
                    log.exception("process failure listener raised")
        else:
            handle.set_result(self.result)


def defer(action: Callable[[], Any]) -> None:
    """Register a cleanup action that runs (LIFO) when the current process exits."""
    proc = _current_process.get()
    if proc is None:
        raise UsageError("defer() called outside a process")
    proc.defers.append(action)


def recover(handler: Callable[[BaseException], Any]) -> Any:
    """Offer the current failure to ``handler`` from inside a deferred action.

    If the process is failing and ``handler`` returns something other than
    ``None``, that value becomes the process result and the failure is
    cleared.  Returning ``None`` declines.
    """
    proc = _current_process.get()
    if proc is None or proc.in_defer == 0:
        raise UsageError("recover() called outside a deferred action")
    if proc.failure is None:
        return None
    value = handler(proc.failure)
    if value is not None:
        proc.failure = None
        proc.result = value
    return value
