"""The callback protocol shared by channels, combinators and selectors.

A *flow* is a chain of :class:`Continuated` steps.  Each step is either
terminal (:class:`Done`), bound to a channel event (:class:`ContRead`,
:class:`ContWrite`), an unconditional hop (:class:`Skip`), or :data:`NEVER`.
The executor resumes steps one at a time; a flow's final value lands in its
:class:`FlowTermination`.

``ContRead`` and ``ContWrite`` double as the event descriptors handed to the
opportunity callbacks of ``cbread``/``cbwrite``, carrying the endpoint and
the flow the registration belongs to.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

from .runtime import Future


class FlowTermination:
    """Single-use completion sink: the first ``do_exit``/``do_throw`` wins."""

    def __init__(self, future: Optional[Future] = None):
        self.future = future if future is not None else Future()

    @property
    def completed(self) -> bool:
        return self.future.done()

    def do_exit(self, value: Any) -> bool:
        try:
            self.future.set_result(value)
        except concurrent.futures.InvalidStateError:
            return False
        return True

    def do_throw(self, exc: BaseException) -> bool:
        try:
            self.future.set_exception(exc)
        except concurrent.futures.InvalidStateError:
            return False
        return True


# -- read outcomes -----------------------------------------------------------


@dataclass(frozen=True)
class Value:
    value: Any


class _Closed:
    __slots__ = ()

    def __repr__(self):
        return "CLOSED"

    def __reduce__(self):
        return (_closed, ())


def _closed():
    return CLOSED


CLOSED = _Closed()


@dataclass(frozen=True)
class Failure:
    error: BaseException


ReadIn = Union[Value, _Closed, Failure]


# -- continuated steps -------------------------------------------------------


class Continuated:
    flow: Optional[FlowTermination] = None

    def _resume(self, executor) -> None:
        raise NotImplementedError


@dataclass(eq=False)
class Done(Continuated):
    value: Any
    flow: FlowTermination

    def _resume(self, executor) -> None:
        self.flow.do_exit(self.value)


@dataclass(eq=False)
class ContRead(Continuated):
    function: Callable[[ContRead], Optional[Callable[[Any], Any]]]
    source: Any
    flow: FlowTermination

    def _resume(self, executor) -> None:
        self.source.cbread(self.function, self.flow)


@dataclass(eq=False)
class ContWrite(Continuated):
    function: Callable[[ContWrite], Optional[tuple]]
    sink: Any
    flow: FlowTermination

    def _resume(self, executor) -> None:
        self.sink.cbwrite(self.function, self.flow)


@dataclass(eq=False)
class Skip(Continuated):
    function: Callable[[], Any]
    flow: FlowTermination

    def _resume(self, executor) -> None:
        nxt = self.function()
        if nxt is not None:
            executor.schedule_step(nxt, self.flow)


@dataclass(eq=False)
class _Never(Continuated):
    flow: Optional[FlowTermination] = field(default=None)

    def _resume(self, executor) -> None:
        pass

    def __repr__(self):
        return "NEVER"


NEVER = _Never()


def deliver(executor, consumer, readin, flow: FlowTermination) -> None:
    """Hand ``readin`` to a read consumer and schedule the step it returns."""
    try:
        step = consumer(readin)
    except Exception as e:
        flow.do_throw(e)
        return
    if step is not None:
        executor.schedule_step(step, flow)
