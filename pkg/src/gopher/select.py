"""Selectors: mutually exclusive choice over channel events and timeouts.

A selector owns an ordered list of branches and runs in its own process.
Each *round* registers every branch with the channels involved; all those
registrations share one arbiter, so the first opportunity to arrive claims
the round and every other registration declines when its turn comes.  The
winning branch body then runs to completion before the next round starts.

Branch handler signatures depend on the policy::

    policy           read / write body     timeout body
    once, forever    body(value)           body()
    fold(initial)    body(value, state)    body(state)

``value`` is the value read, or the value written for write branches.  In a
fold the body returns the next state.  ``produce`` for a write branch is
called as ``produce()`` (or ``produce(state)`` in a fold) at the moment the
write slot is claimed, under the channel's lock, so keep it cheap.

In a fold, a branch endpoint may be a callable taking the current state and
returning the endpoint, which lets the state itself hold channels.

Example::

    fib = select.fold((0, 1),
        select.on_write(out, lambda s: s[0], lambda x, s: (s[1], s[0] + s[1])),
        select.on_read(quit, lambda _q, s: select.exit(s)),
    )
"""

from __future__ import annotations

import contextvars
import inspect
import threading
from dataclasses import dataclass
from typing import Any, Callable, Optional, Union

from .channels import Input, Output
from .errors import ChannelClosedError, EndOfInputError, UsageError
from .flow import CLOSED, Done, Failure, FlowTermination
from .runtime import Executor, Future, ProcessHandle, current_executor, current_process

ONCE = "once"
FOREVER = "forever"


@dataclass(frozen=True)
class Fold:
    initial: Any


Policy = Union[str, Fold]


@dataclass(eq=False)
class OnRead:
    channel: Union[Input, Callable[..., Input]]
    body: Optional[Callable] = None


@dataclass(eq=False)
class OnWrite:
    channel: Union[Output, Callable[..., Output]]
    produce: Callable
    body: Optional[Callable] = None


@dataclass(eq=False)
class OnTimeout:
    delay: float
    body: Optional[Callable] = None


SelectBranch = Union[OnRead, OnWrite, OnTimeout]


def on_read(channel, body=None) -> OnRead:
    return OnRead(channel, body)


def on_write(channel, produce, body=None) -> OnWrite:
    if not callable(produce):
        raise TypeError("produce must be callable")
    return OnWrite(channel, produce, body)


def on_timeout(delay: float, body=None) -> OnTimeout:
    if delay < 0:
        raise ValueError("timeout must be non-negative")
    return OnTimeout(delay, body)


class SelectExit(BaseException):
    """Raised by :func:`exit`; carries the selector's result."""

    def __init__(self, value, selector):
        super().__init__(value)
        self.value = value
        self.selector = selector


_current_selector: contextvars.ContextVar[Optional[Selector]] = contextvars.ContextVar(
    "gopher_selector", default=None
)


def exit(value=None):
    """Finish the enclosing selector with ``value``. Never returns."""
    sel = _current_selector.get()
    if sel is None or sel._process is not current_process():
        raise UsageError("select.exit() called outside a selector branch")
    raise SelectExit(value, sel)


class _Round:
    def __init__(self):
        self.lock = threading.Lock()
        self.owner: Optional[int] = None
        self.finished = False
        self.future = Future()
        self.timer = None

    def claim(self, idx: int) -> bool:
        with self.lock:
            if self.owner is not None:
                return False
            self.owner = idx
            return True

    def resolve(self, outcome) -> None:
        with self.lock:
            if self.finished:
                return
            self.finished = True
        if self.timer is not None:
            self.timer.cancel()
        self.future.set_result(outcome)

    def fire_timeout(self, idx: int) -> None:
        if self.claim(idx):
            self.resolve(("timeout", idx, None))


class _BranchFlow(FlowTermination):
    """The flow a single branch registration reports into."""

    def __init__(self, rnd: _Round, idx: int):
        self._round = rnd
        self._idx = idx

    @property
    def completed(self) -> bool:
        rnd = self._round
        return rnd.finished or (rnd.owner is not None and rnd.owner != self._idx)

    def do_exit(self, value) -> bool:
        self._round.resolve(value)
        return True

    def do_throw(self, exc: BaseException) -> bool:
        rnd = self._round
        with rnd.lock:
            if rnd.owner is None:
                rnd.owner = self._idx
            elif rnd.owner != self._idx:
                return False
        rnd.resolve(("error", self._idx, exc))
        return True


async def _invoke(body, args):
    result = body(*args)
    if inspect.isawaitable(result):
        result = await result
    return result


class Selector:
    """Unsugared selector builder.

    >>> sel = Selector().on_read(ch, handle).with_timeout(0.5, on_idle)
    >>> done = sel.run("forever")
    """

    def __init__(self, branches=(), executor: Optional[Executor] = None):
        self.branches: list[SelectBranch] = []
        self._executor = executor
        self._process = None
        self._started = False
        for b in branches:
            self.add(b)

    def add(self, branch: SelectBranch) -> Selector:
        if not isinstance(branch, (OnRead, OnWrite, OnTimeout)):
            raise TypeError(f"not a select branch: {branch!r}")
        if isinstance(branch, OnTimeout) and any(isinstance(b, OnTimeout) for b in self.branches):
            raise UsageError("a selector takes at most one timeout branch")
        self.branches.append(branch)
        return self

    def on_read(self, channel, body=None) -> Selector:
        return self.add(on_read(channel, body))

    def on_write(self, channel, produce, body=None) -> Selector:
        return self.add(on_write(channel, produce, body))

    def with_timeout(self, delay: float, body=None) -> Selector:
        return self.add(on_timeout(delay, body))

    def run(self, policy: Policy = FOREVER) -> ProcessHandle:
        if self._started:
            raise UsageError("selector already running")
        if not self.branches:
            raise UsageError("selector has no branches")
        if not (policy in (ONCE, FOREVER) or isinstance(policy, Fold)):
            raise ValueError(f"unknown select policy {policy!r}")
        self._started = True
        ex = self._executor or current_executor()
        return ex.spawn(self._loop, policy)

    # -- engine ------------------------------------------------------------

    def _resolve(self, endpoint, state, folding):
        if isinstance(endpoint, (Input, Output)):
            return endpoint
        return endpoint(state) if folding else endpoint()

    def _start_round(self, live: list[int], rotation: int, state, folding: bool) -> Future:
        rnd = _Round()
        n = len(self.branches)
        ex = current_executor()
        for k in range(n):
            idx = (rotation + k) % n
            if idx not in live:
                continue
            if rnd.owner is not None:
                break
            branch = self.branches[idx]
            if isinstance(branch, OnTimeout):
                rnd.timer = ex.call_later(branch.delay, rnd.fire_timeout, idx)
            elif isinstance(branch, OnRead):
                ch = self._resolve(branch.channel, state, folding)
                ch.cbread(self._read_offer(rnd, idx), _BranchFlow(rnd, idx))
            else:
                ch = self._resolve(branch.channel, state, folding)
                ch.cbwrite(self._write_offer(rnd, idx, branch.produce, state, folding), _BranchFlow(rnd, idx))
        return rnd.future

    @staticmethod
    def _read_offer(rnd: _Round, idx: int):
        def offer(cr):
            if not rnd.claim(idx):
                return None
            return lambda readin: Done(("read", idx, readin), cr.flow)

        return offer

    @staticmethod
    def _write_offer(rnd: _Round, idx: int, produce, state, folding):
        def offer(cw):
            if not rnd.claim(idx):
                return None
            try:
                value = produce(state) if folding else produce()
            except Exception as e:
                rnd.resolve(("error", idx, e))
                return None
            return value, Done(("write", idx, value), cw.flow)

        return offer

    async def _loop(self, policy: Policy):
        folding = isinstance(policy, Fold)
        once = policy == ONCE
        state = policy.initial if folding else None
        self._process = current_process()
        _current_selector.set(self)
        n = len(self.branches)
        channel_branches = {i for i, b in enumerate(self.branches) if not isinstance(b, OnTimeout)}
        dead: set[int] = set()
        rotation = 0
        while True:
            if dead and channel_branches <= dead:
                raise EndOfInputError("every branch channel of the selector is closed")
            live = [i for i in range(n) if i not in dead]
            kind, idx, payload = await self._start_round(live, rotation, state, folding)
            rotation = (rotation + 1) % n
            branch = self.branches[idx]
            if kind == "error":
                if once and isinstance(payload, ChannelClosedError):
                    dead.add(idx)
                    continue
                raise payload
            if kind == "read":
                if payload is CLOSED:
                    if once:
                        dead.add(idx)
                        continue
                    raise EndOfInputError(f"select branch {idx} reached end of input")
                if isinstance(payload, Failure):
                    raise payload.error
                args = (payload.value, state) if folding else (payload.value,)
            elif kind == "write":
                args = (payload, state) if folding else (payload,)
            else:
                args = (state,) if folding else ()
            if branch.body is None:
                result = state
            else:
                try:
                    result = await _invoke(branch.body, args)
                except SelectExit as e:
                    if e.selector is not self:
                        raise
                    return e.value
            if once:
                return result
            if folding:
                state = result


def once(*branches: SelectBranch) -> ProcessHandle:
    """Fire exactly one branch; the result is that branch body's return value."""
    return Selector(branches).run(ONCE)


def forever(*branches: SelectBranch) -> ProcessHandle:
    """Fire one branch per round until a body calls :func:`exit`."""
    return Selector(branches).run(FOREVER)


def fold(initial, *branches: SelectBranch) -> ProcessHandle:
    """Thread a state through rounds; completes with the value passed to :func:`exit`."""
    return Selector(branches).run(Fold(initial))


# A fold whose branches name their endpoints through the state, e.g.
# ``fold_over(source, on_read(lambda ch: ch, step))``.
fold_over = fold
