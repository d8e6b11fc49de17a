"""Derived endpoints and asynchronous collection helpers.

Derived inputs (``map``, ``filter``, ``zip``) are demand driven: they pull
one value from upstream only while some downstream reader is registered,
and offer it to their own readers in FIFO order.  A pulled value whose
readers all declined waits in a one-slot lookahead for the next reader, so
no value is lost when a selector loses interest mid-flight.
"""

from __future__ import annotations

import functools
import inspect
import threading
from collections import deque
from typing import Any, Awaitable, Callable, Iterable

from .channels import GROWING, Channel, Input, Output, _flush
from .errors import ChannelClosedError
from .flow import CLOSED, ContRead, ContWrite, Failure, FlowTermination, Value, deliver
from .runtime import Executor, Future, spawn


class _DerivedInput(Input):
    def __init__(self, executor: Executor):
        self._executor = executor
        self._lock = threading.Lock()
        self._readers: deque = deque()
        self._pending: deque = deque()
        self._eof = False
        self._pulling = False

    @property
    def executor(self) -> Executor:
        return self._executor

    def cbread(self, f, ft: FlowTermination) -> None:
        with self._lock:
            self._readers.append(ContRead(f, self, ft))
            effects = self._settle()
            pull = self._claim_pull()
        _flush(self._executor, effects)
        if pull:
            self._pull()

    def _settle(self) -> list:
        effects: list = []
        while self._readers and (self._pending or self._eof):
            r = self._readers.popleft()
            if r.flow.completed:
                continue
            try:
                consumer = r.function(r)
            except Exception as e:
                effects.append(functools.partial(r.flow.do_throw, e))
                continue
            if consumer is None:
                continue
            readin = self._pending.popleft() if self._pending else CLOSED
            effects.append(functools.partial(deliver, self._executor, consumer, readin, r.flow))
        return effects

    def _claim_pull(self) -> bool:
        if self._pulling or self._pending or self._eof:
            return False
        self._readers = deque(r for r in self._readers if not r.flow.completed)
        if not self._readers:
            return False
        self._pulling = True
        return True

    def _wants_value(self) -> bool:
        with self._lock:
            if any(not r.flow.completed for r in self._readers):
                return True
            self._pulling = False
            return False

    def _request(self, source: Input, on_readin: Callable, *, required: bool = False) -> None:
        def consume(readin):
            on_readin(readin)

        if required:
            source.cbread(lambda _cr: consume, FlowTermination())
        else:
            source.cbread(lambda _cr: consume if self._wants_value() else None, FlowTermination())

    def _deliver(self, readin) -> None:
        with self._lock:
            self._pulling = False
            if readin is CLOSED:
                self._eof = True
            else:
                self._pending.append(readin)
            effects = self._settle()
            pull = self._claim_pull()
        _flush(self._executor, effects)
        if pull:
            self._pull()

    def _pull(self) -> None:
        raise NotImplementedError


class MappedInput(_DerivedInput):
    def __init__(self, source: Input, g: Callable[[Any], Any]):
        super().__init__(source.executor)
        self.source = source
        self._g = g

    def _pull(self) -> None:
        self._request(self.source, self._on_readin)

    def _on_readin(self, readin) -> None:
        if isinstance(readin, Value):
            try:
                readin = Value(self._g(readin.value))
            except Exception as e:
                readin = Failure(e)
        self._deliver(readin)


class FilteredInput(_DerivedInput):
    def __init__(self, source: Input, p: Callable[[Any], bool]):
        super().__init__(source.executor)
        self.source = source
        self._p = p

    def _pull(self) -> None:
        self._request(self.source, self._on_readin)

    def _on_readin(self, readin) -> None:
        if isinstance(readin, Value):
            try:
                keep = self._p(readin.value)
            except Exception as e:
                readin, keep = Failure(e), True
            if not keep:
                self._pull()
                return
        self._deliver(readin)


class ZippedInput(_DerivedInput):
    def __init__(self, left: Input, right: Input):
        super().__init__(left.executor)
        self.left = left
        self.right = right

    def _pull(self) -> None:
        self._request(self.left, self._on_left)

    def _on_left(self, readin) -> None:
        if not isinstance(readin, Value):
            self._deliver(readin)
            return
        x = readin.value

        def on_right(rb):
            self._deliver(Value((x, rb.value)) if isinstance(rb, Value) else rb)

        # The left value is already taken, so the right side must not decline.
        self._request(self.right, on_right, required=True)


def map_input(source: Input, g: Callable[[Any], Any]) -> Input:
    return MappedInput(source, g)


def filter_input(source: Input, p: Callable[[Any], bool]) -> Input:
    return FilteredInput(source, p)


def zip_inputs(left: Input, right: Input) -> Input:
    """Pairs the k-th values of both sides; ends when either side ends."""
    return ZippedInput(left, right)


def fold_input(source: Input, z, step: Callable[[Any, Any], Any]) -> Future:
    async def run():
        acc = z
        async for value in source:
            acc = step(acc, value)
            if inspect.isawaitable(acc):
                acc = await acc
        return acc

    return source.executor.spawn(run)


def dup_input(source: Input) -> tuple[Channel, Channel]:
    """Copy every value of ``source`` to two independently buffered inputs."""
    ex = source.executor
    a, b = Channel(GROWING, ex), Channel(GROWING, ex)

    async def route():
        try:
            async for value in source:
                a.awrite(value)
                b.awrite(value)
        finally:
            a.close()
            b.close()

    ex.spawn(route)
    return a, b


# -- merged outputs ----------------------------------------------------------


class _MergeClaim:
    def __init__(self, ft: FlowTermination):
        self.ft = ft
        self.lock = threading.Lock()
        self.claimed = False
        self.winner = None
        self.dead = 0


class _MergeSlot(FlowTermination):
    """Per-constituent flow for one merged write registration."""

    def __init__(self, claim: _MergeClaim):
        self._claim = claim

    @property
    def completed(self) -> bool:
        return self._claim.claimed or self._claim.ft.completed

    def do_exit(self, value) -> bool:
        return self._claim.ft.do_exit(value)

    def do_throw(self, exc: BaseException) -> bool:
        claim = self._claim
        if isinstance(exc, ChannelClosedError) and claim.winner is not self:
            with claim.lock:
                if claim.claimed:
                    return False
                claim.dead += 1
                if claim.dead < 2:
                    return False
                claim.claimed = True
        return claim.ft.do_throw(exc)


class MergedOutput(Output):
    """``first | second``: each write settles on whichever side accepts first."""

    __match_args__ = ("first", "second")

    def __init__(self, first: Output, second: Output):
        self.first = first
        self.second = second
        self._lock = threading.Lock()
        self._turn = 0

    def __repr__(self):
        return f"MergedOutput({self.first!r}, {self.second!r})"

    def __iter__(self):
        yield self.first
        yield self.second

    @property
    def executor(self) -> Executor:
        return self.first.executor

    def close(self) -> None:
        self.first.close()
        self.second.close()

    def cbwrite(self, f, ft: FlowTermination) -> None:
        with self._lock:
            order = (self.first, self.second) if self._turn == 0 else (self.second, self.first)
            self._turn ^= 1
        claim = _MergeClaim(ft)

        def offer(slot, _cw):
            with claim.lock:
                if claim.claimed or ft.completed:
                    return None
                claim.claimed = True
                claim.winner = slot
            return f(ContWrite(f, self, ft))

        for sink in order:
            if claim.claimed:
                break
            slot = _MergeSlot(claim)
            sink.cbwrite(functools.partial(offer, slot), slot)


def merge_outputs(first: Output, second: Output) -> MergedOutput:
    return MergedOutput(first, second)


# -- asynchronous collection helpers -----------------------------------------


def map_async(xs: Iterable, g: Callable[[Any], Awaitable | Any]) -> Future:
    """Apply ``g`` to each element in turn; call k+1 starts after result k arrives."""

    async def run():
        out = []
        for x in xs:
            r = g(x)
            if inspect.isawaitable(r):
                r = await r
            out.append(r)
        return out

    return spawn(run)


def fold_async(xs: Iterable, z, step: Callable[[Any, Any], Awaitable | Any]) -> Future:
    async def run():
        acc = z
        for x in xs:
            acc = step(acc, x)
            if inspect.isawaitable(acc):
                acc = await acc
        return acc

    return spawn(run)
