"""Channels and the callback-registration read/write protocol.

Readers and writers register *opportunity callbacks* with ``cbread`` and
``cbwrite``.  Whenever a channel can match a reader with a value (or a
writer with free space or a waiting reader) it calls the registered callback
with a :class:`~gopher.flow.ContRead` / :class:`~gopher.flow.ContWrite`
descriptor.  The callback either declines by returning ``None`` (the
registration is consumed and the opportunity passes to the next one in
line) or accepts:

* a read callback returns a consumer ``ReadIn -> step``;
* a write callback returns ``(value, next_step)``.

Opportunity callbacks run while the channel's lock is held.  They must be
quick and must not touch channels themselves; anything heavier belongs in
the returned consumer or step, which run later on the executor.
"""

from __future__ import annotations

import functools
import math
import threading
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Any, Optional, Union

from .errors import ChannelClosedError, EndOfInputError, RejectedError, UsageError
from .flow import CLOSED, ContRead, ContWrite, Done, Failure, FlowTermination, Value, deliver
from .runtime import Executor, Future, current_executor, in_process

_PRUNE_FLOOR = 64


@dataclass(frozen=True)
class ChannelKind:
    name: str
    capacity: Optional[int]

    @classmethod
    def rendezvous(cls) -> ChannelKind:
        return RENDEZVOUS

    @classmethod
    def buffered(cls, capacity: int) -> ChannelKind:
        if not isinstance(capacity, int) or capacity < 1:
            raise ValueError(f"buffered capacity must be a positive int, got {capacity!r}")
        return cls("buffered", capacity)

    @classmethod
    def growing(cls) -> ChannelKind:
        return GROWING

    @classmethod
    def one_shot(cls) -> ChannelKind:
        return ONE_SHOT


RENDEZVOUS = ChannelKind("rendezvous", 0)
GROWING = ChannelKind("growing", None)
ONE_SHOT = ChannelKind("one-shot", 1)


def _run_all(effects) -> None:
    for effect in effects:
        effect()


class Input(ABC):
    """Readable endpoint."""

    @property
    @abstractmethod
    def executor(self) -> Executor: ...

    @abstractmethod
    def cbread(self, f, ft: FlowTermination) -> None: ...

    def aread(self) -> Future:
        """Future of the next value; fails with EndOfInputError once closed and drained."""
        ft = FlowTermination()

        def consume(readin):
            if isinstance(readin, Value):
                return Done(readin.value, ft)
            if isinstance(readin, Failure):
                raise readin.error
            raise EndOfInputError(f"{self!r} is closed")

        self.cbread(lambda _cr: consume, ft)
        return ft.future

    async def read(self):
        if not in_process():
            raise UsageError("read() must be awaited inside a process; use aread()")
        return await self.aread()

    def __aiter__(self):
        return _InputIterator(self)

    def map(self, g) -> Input:
        from .combinators import map_input

        return map_input(self, g)

    def filter(self, p) -> Input:
        from .combinators import filter_input

        return filter_input(self, p)

    def zip(self, other: Input) -> Input:
        from .combinators import zip_inputs

        return zip_inputs(self, other)

    def fold(self, z, step) -> Future:
        from .combinators import fold_input

        return fold_input(self, z, step)

    def dup(self) -> tuple[Input, Input]:
        from .combinators import dup_input

        return dup_input(self)


class _InputIterator:
    __slots__ = ("_source",)

    def __init__(self, source: Input):
        self._source = source

    def __aiter__(self):
        return self

    async def __anext__(self):
        try:
            return await self._source.aread()
        except EndOfInputError:
            raise StopAsyncIteration from None


class Output(ABC):
    """Writable endpoint."""

    @property
    @abstractmethod
    def executor(self) -> Executor: ...

    @abstractmethod
    def cbwrite(self, f, ft: FlowTermination) -> None: ...

    def awrite(self, value) -> Future:
        """Future completing once ``value`` is buffered or taken by a reader."""
        ft = FlowTermination()
        self.cbwrite(lambda _cw: (value, Done(None, ft)), ft)
        return ft.future

    async def write(self, value) -> None:
        if not in_process():
            raise UsageError("write() must be awaited inside a process; use awrite()")
        await self.awrite(value)

    def close(self) -> None:
        raise NotImplementedError

    def __or__(self, other: Output):
        from .combinators import merge_outputs

        return merge_outputs(self, other)


@dataclass(eq=False)
class _Committed:
    """A writer whose callback already accepted, parked until a reader takes the value."""

    value: Any
    next: Any
    flow: FlowTermination


class Channel(Input, Output):
    def __init__(self, kind: ChannelKind = RENDEZVOUS, executor: Optional[Executor] = None):
        self.kind = kind
        self._executor = executor if executor is not None else current_executor()
        self._capacity = math.inf if kind.capacity is None else kind.capacity
        self._one_shot = kind is ONE_SHOT or kind.name == "one-shot"
        self._lock = threading.Lock()
        self._buffer: deque = deque()
        self._readers: deque = deque()
        self._writers: deque = deque()
        self._prune_readers_at = _PRUNE_FLOOR
        self._prune_writers_at = _PRUNE_FLOOR
        self._closed = False

    def __repr__(self):
        state = "closed" if self._closed else "open"
        return f"<Channel {self.kind.name} {state} buffered={len(self._buffer)}>"

    @property
    def executor(self) -> Executor:
        return self._executor

    @property
    def closed(self) -> bool:
        return self._closed

    def __len__(self) -> int:
        return len(self._buffer)

    # -- protocol ----------------------------------------------------------

    def cbread(self, f, ft: FlowTermination) -> None:
        with self._lock:
            self._readers.append(ContRead(f, self, ft))
            if len(self._readers) >= self._prune_readers_at:
                self._readers = deque(r for r in self._readers if not r.flow.completed)
                self._prune_readers_at = max(_PRUNE_FLOOR, 2 * len(self._readers))
            effects = self._settle()
        self._flush(effects)

    def cbwrite(self, f, ft: FlowTermination) -> None:
        with self._lock:
            self._writers.append(ContWrite(f, self, ft))
            if len(self._writers) >= self._prune_writers_at:
                self._writers = deque(
                    w for w in self._writers if isinstance(w, _Committed) or not w.flow.completed
                )
                self._prune_writers_at = max(_PRUNE_FLOOR, 2 * len(self._writers))
            effects = self._settle()
        self._flush(effects)

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            effects = self._settle()
        self._flush(effects)

    # -- settlement (lock held) --------------------------------------------

    def _flush(self, effects) -> None:
        _flush(self._executor, effects)

    def _offer_read(self, reg: ContRead, effects):
        if reg.flow.completed:
            return None
        try:
            return reg.function(reg)
        except Exception as e:
            effects.append(functools.partial(reg.flow.do_throw, e))
            return None

    def _offer_write(self, reg, effects):
        if isinstance(reg, _Committed):
            return reg.value, reg.next
        if reg.flow.completed:
            return None
        try:
            return reg.function(reg)
        except Exception as e:
            effects.append(functools.partial(reg.flow.do_throw, e))
            return None

    def _settle(self) -> list:
        effects: list = []
        ex = self._executor
        buffer, readers, writers = self._buffer, self._readers, self._writers
        progressed = True
        while progressed:
            progressed = False
            while buffer and readers:
                r = readers.popleft()
                consumer = self._offer_read(r, effects)
                if consumer is None:
                    continue
                effects.append(functools.partial(deliver, ex, consumer, Value(buffer.popleft()), r.flow))
                progressed = True
            while writers and not self._closed and len(buffer) < self._capacity:
                w = writers.popleft()
                offer = self._offer_write(w, effects)
                if offer is None:
                    continue
                value, nxt = offer
                buffer.append(value)
                effects.append(functools.partial(ex.schedule_step, nxt, w.flow))
                progressed = True
                if self._one_shot:
                    self._closed = True
            if self._capacity == 0 and not self._closed:
                while readers and writers:
                    w = writers.popleft()
                    offer = self._offer_write(w, effects)
                    if offer is None:
                        continue
                    value, nxt = offer
                    while readers:
                        r = readers.popleft()
                        consumer = self._offer_read(r, effects)
                        if consumer is not None:
                            effects.append(
                                functools.partial(
                                    _handoff, ex, consumer, value, r.flow, nxt, w.flow
                                )
                            )
                            progressed = True
                            break
                    else:
                        writers.appendleft(_Committed(value, nxt, w.flow))
                        break
        if self._closed:
            while writers:
                w = writers.popleft()
                if isinstance(w, _Committed) or not w.flow.completed:
                    effects.append(
                        functools.partial(w.flow.do_throw, ChannelClosedError(f"{self!r} is closed"))
                    )
            if not buffer:
                while readers:
                    r = readers.popleft()
                    consumer = self._offer_read(r, effects)
                    if consumer is not None:
                        effects.append(functools.partial(deliver, ex, consumer, CLOSED, r.flow))
        return effects


def _flush(executor, effects: list) -> None:
    if not effects:
        return
    try:
        executor.submit(_run_all, effects)
    except RejectedError:
        # Late closes from finalizers after shutdown have nobody left to notify.
        if not executor.is_shutdown:
            raise


def _handoff(executor, consumer, value, reader_flow, writer_next, writer_flow) -> None:
    # Reader receipt happens before the writer's continuation is even queued.
    deliver(executor, consumer, Value(value), reader_flow)
    executor.schedule_step(writer_next, writer_flow)


def make_channel(
    kind: Union[ChannelKind, int] = RENDEZVOUS, *, executor: Optional[Executor] = None
) -> Channel:
    """Create a channel. An int is shorthand: 0 is rendezvous, k > 0 is buffered(k)."""
    if isinstance(kind, int):
        kind = RENDEZVOUS if kind == 0 else ChannelKind.buffered(kind)
    return Channel(kind, executor)
