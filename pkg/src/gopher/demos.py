"""Canonical example programs, written against the public API.

Each ``run_*`` function must be called with an executor installed (see
:mod:`gopher.cli`) and returns a future of plain Python data, so the same
code backs the command line demos and the test-suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Optional

from . import select
from .channels import GROWING, Channel, Input, Output, make_channel
from .combinators import MergedOutput, map_async
from .runtime import Future, current_executor, go, sleep
from .select import on_read, on_timeout, on_write
from .transputer import InPort, OutPort, Transputer


# -- primes ------------------------------------------------------------------


def n_primes(n: int) -> Future:
    """First ``n`` primes from a sieve whose fold state is the filtered source."""
    if n < 1:
        raise ValueError("n must be >= 1")
    source = make_channel()
    out = make_channel()

    async def generate():
        # Unbounded, but rendezvous writes keep it exactly one step ahead of demand.
        for i in itertools.count(2):
            await source.write(i)

    go(generate)

    async def next_prime(p, ch: Input):
        await out.write(p)
        return ch.filter(lambda x: x % p != 0)

    select.fold_over(source, on_read(lambda ch: ch, next_prime))
    return map_async(range(n), lambda _i: out.aread())


# -- fibonacci ---------------------------------------------------------------


def fibonacci(c: Output, quit: Input) -> Future:
    """Emit fibonacci numbers on ``c`` until ``quit`` is readable; yields the final state."""
    return select.fold(
        (0, 1),
        on_write(c, lambda s: s[0], lambda _x, s: (s[1], s[0] + s[1])),
        on_read(quit, lambda _q, s: select.exit(s)),
    )


def run_fibonacci(count: int) -> Future:
    if count < 1:
        raise ValueError("count must be >= 1")
    c = make_channel()
    quit = make_channel()
    final = fibonacci(c, quit)

    async def consume():
        values = [await c.read() for _ in range(count)]
        await quit.write(True)
        return values, await final

    return go(consume)


# -- broadcast ---------------------------------------------------------------


@dataclass(frozen=True)
class _Message:
    next: Channel
    value: Any


class Broadcast:
    """Fan every message out to all registered listener channels.

    The bus is a chain of one-slot channels: publishing writes
    ``_Message(next_bus, value)`` into the current bus and makes ``next_bus``
    current.  Each listener follows the chain, putting each message back
    after reading it so the other listeners see it too.
    """

    def __init__(self):
        self.listener: Channel = make_channel()
        self.messages: Channel = make_channel()
        self.process = select.fold(
            make_channel(1),
            on_read(self.messages, self._publish),
            on_read(self.listener, self._subscribe),
        )

    async def _publish(self, value, bus: Channel) -> Channel:
        new_bus = make_channel(1)
        await bus.write(_Message(new_bus, value))
        return new_bus

    def _subscribe(self, ch: Output, bus: Channel) -> Channel:
        async def relay(msg: _Message, current: Channel) -> Channel:
            await current.write(msg)
            await ch.write(msg.value)
            return msg.next

        select.fold_over(bus, on_read(lambda current: current, relay))
        return bus


def run_broadcast(listeners: int, messages: int) -> Future:
    if listeners < 1 or messages < 1:
        raise ValueError("listeners and messages must be >= 1")

    async def main():
        b = Broadcast()
        inboxes = [make_channel(GROWING) for _ in range(listeners)]
        for inbox in inboxes:
            await b.listener.write(inbox)
        for m in range(messages):
            await b.messages.write(m)
        transcripts = []
        for inbox in inboxes:
            transcripts.append([await inbox.read() for _ in range(messages)])
        return transcripts

    return go(main)


# -- bandwidth ---------------------------------------------------------------


@dataclass
class BandwidthReport:
    log: list[str] = field(default_factory=list)
    delivered: list[tuple[int, Any]] = field(default_factory=list)
    grows: int = 0
    shrinks: int = 0
    refusals: int = 0


class BandwidthControl:
    """Hands out extra consumers on request, up to ``max_consumers``."""

    def __init__(self, report: BandwidthReport, delay: float, max_consumers: int):
        self.report_to = report
        self.delay = delay
        self.max_consumers = max_consumers
        self.active = 0
        self._ids = itertools.count()
        self._done = make_channel(GROWING)

    def log(self, text: str) -> None:
        ms = current_executor().now() * 1000
        self.report_to.log.append(f"{ms:.0f}ms {text}")

    def spawn_consumer(self) -> Channel:
        ch = make_channel()
        cid = next(self._ids)
        self.active += 1

        async def consume():
            async for task in ch:
                if self.delay > 0:
                    await sleep(self.delay)
                self.report_to.delivered.append((cid, task))
                self._done.awrite(task)

        go(consume)
        return ch

    def distribute_bandwidth(self) -> Optional[Channel]:
        if self.active >= self.max_consumers:
            return None
        ch = self.spawn_consumer()
        self.report_to.grows += 1
        self.log(f"grow consumers={self.active}")
        return ch

    def release(self, ch: Output) -> None:
        ch.close()
        self.active -= 1
        self.report_to.shrinks += 1
        self.log(f"shrink consumers={self.active}")

    def report(self, text: str) -> None:
        self.report_to.refusals += 1
        self.log(text)


def run_bandwidth(
    tasks: int,
    slow_delay: float,
    *,
    write_timeout: float = 0.010,
    read_timeout: float = 0.050,
    max_consumers: int = 4,
) -> Future:
    """Feed a burst of tasks through an output that grows under pressure and shrinks when idle."""
    report = BandwidthReport()
    control = BandwidthControl(report, slow_delay, max_consumers)
    inbox = make_channel()
    quit = make_channel()

    async def on_task(task, out: Output):
        async def grow():
            extra = control.distribute_bandwidth()
            if extra is None:
                control.report("Can't increase bandwidth")
                await out.write(task)
                return out
            await extra.write(task)
            return out | extra

        return await select.once(
            on_write(out, lambda: task, lambda _v: out),
            on_timeout(write_timeout, grow),
        )

    def on_idle(out: Output):
        match out:
            case MergedOutput(first, second):
                control.release(second)
                return first
            case _:
                return out

    scaler = select.fold(
        control.spawn_consumer(),
        on_read(inbox, on_task),
        on_timeout(read_timeout, on_idle),
        on_read(quit, lambda _q, out: select.exit(out)),
    )

    async def main():
        control.log("start consumers=1")
        for t in range(tasks):
            await inbox.write(t)
        for _ in range(tasks):
            await control._done.read()
        await sleep(read_timeout * (max_consumers + 1.5))
        await quit.write(True)
        await scaler
        return report

    return go(main)


# -- zipper ------------------------------------------------------------------


class Zipper(Transputer):
    """Pairs values from two inputs, whichever side shows up first."""

    in_x = InPort()
    in_y = InPort()
    out = OutPort()

    def loop(self):
        return [on_read(self.in_x, self._got_x), on_read(self.in_y, self._got_y)]

    async def _got_x(self, x):
        y = await self.in_y.read()
        await self.out.write((x, y))

    async def _got_y(self, y):
        x = await self.in_x.read()
        await self.out.write((x, y))


def run_zipper(xs: list, ys: list) -> Future:
    if len(xs) != len(ys):
        raise ValueError("zipper inputs must have equal length")
    x_ch, y_ch, out = make_channel(), make_channel(), make_channel()
    Zipper().bind(in_x=x_ch, in_y=y_ch, out=out).start()

    async def feed(ch, values):
        for v in values:
            await ch.write(v)

    go(feed, x_ch, xs)
    go(feed, y_ch, ys)
    return map_async(range(len(xs)), lambda _i: out.aread())
