"""Transputers: actor-like processing nodes built on selectors.

A transputer declares named input and output ports, binds them to channels,
and runs its ``loop()`` branches as a forever-selector in its own process.
Subclass it the way you would write a small actor::

    class Zipper(Transputer):
        in_x = InPort()
        in_y = InPort()
        out = OutPort()

        def loop(self):
            return [on_read(self.in_x, self.got_x), on_read(self.in_y, self.got_y)]

        async def got_x(self, x):
            await self.out.write((x, await self.in_y.read()))

        async def got_y(self, y):
            await self.out.write((await self.in_x.read(), y))

or build one from functions with :func:`define_transputer`.  ``loop()`` and
``reset()`` are called again on every restart, so per-run state set up there
starts fresh while the port bindings (and whatever is buffered in the bound
channels) survive.

When a loop body raises, the transputer's ``recovery`` callable maps the
error to a :class:`RecoveryDecision`.  ``ESCALATE`` hands the error to the
``supervisor`` callable (``supervisor(transputer, error) -> decision``); with
no supervisor it behaves like ``STOP``.  Reaching end of input is not a
fault: it stops the node without consulting recovery.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Union

from . import select
from .channels import GROWING, Channel, Input, Output
from .errors import DefinitionError, EndOfInputError, UsageError
from .flow import FlowTermination
from .runtime import Executor, ProcessHandle, current_executor

log = logging.getLogger("gopher.transputer")

DEFAULT_MAX_RESTARTS = 10


class RecoveryDecision(enum.Enum):
    RESTART = "restart"
    ESCALATE = "escalate"
    STOP = "stop"


RESTART = RecoveryDecision.RESTART
ESCALATE = RecoveryDecision.ESCALATE
STOP = RecoveryDecision.STOP


@dataclass(frozen=True)
class Share:
    pass


@dataclass(frozen=True)
class Distribute:
    key: Callable[[Any], int]


@dataclass(frozen=True)
class Duplicate:
    pass


PortPolicy = Union[Share, Distribute, Duplicate]


class Port:
    direction = "?"

    def __init__(self, name: Optional[str] = None):
        self.name = name
        self.channel = None

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r} bound={self.channel is not None}>"

    @property
    def bound(self) -> bool:
        return self.channel is not None

    def bind(self, channel) -> None:
        self.channel = channel

    def _target(self):
        if self.channel is None:
            raise UsageError(f"port {self.name!r} is not bound")
        return self.channel

    @property
    def executor(self) -> Executor:
        return self._target().executor


class InPort(Port, Input):
    direction = "in"

    def cbread(self, f, ft: FlowTermination) -> None:
        self._target().cbread(f, ft)


class OutPort(Port, Output):
    direction = "out"

    def cbwrite(self, f, ft: FlowTermination) -> None:
        self._target().cbwrite(f, ft)

    def close(self) -> None:
        self._target().close()


def _no_recovery(exc: BaseException) -> RecoveryDecision:
    return ESCALATE


class Transputer:
    def __init__(
        self,
        name: Optional[str] = None,
        *,
        recovery: Optional[Callable[[BaseException], RecoveryDecision]] = None,
        supervisor: Optional[Callable[[Transputer, BaseException], RecoveryDecision]] = None,
        max_restarts: int = DEFAULT_MAX_RESTARTS,
    ):
        self.name = name or type(self).__name__
        self.recovery = recovery or _no_recovery
        self.supervisor = supervisor
        self.max_restarts = max_restarts
        self.restart_count = 0
        self.failures: list[BaseException] = []
        self.handle: Optional[ProcessHandle] = None
        self.ports: dict[str, Port] = {}
        self._loop_spec = None
        self._reset_hook = None
        seen = set()
        for klass in type(self).__mro__:
            for attr, decl in vars(klass).items():
                if isinstance(decl, Port) and attr not in seen:
                    seen.add(attr)
                    self.add_port(attr, type(decl))

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"

    def __getitem__(self, name: str) -> Port:
        return self.ports[name]

    def __add__(self, other: Transputer) -> ParallelTransputer:
        return compose(self, other)

    def add_port(self, name: str, kind: type = InPort) -> Port:
        if name in self.ports:
            raise DefinitionError(f"duplicate port name {name!r} in {self.name}")
        port = kind(name)
        self.ports[name] = port
        declared = getattr(type(self), name, None)
        if name.isidentifier() and name not in vars(self) and (declared is None or isinstance(declared, Port)):
            setattr(self, name, port)
        return port

    def bind(self, **channels) -> Transputer:
        for name, channel in channels.items():
            if name not in self.ports:
                raise DefinitionError(f"{self.name} has no port {name!r}")
            self.ports[name].bind(channel)
        return self

    # -- behaviour hooks ---------------------------------------------------

    def loop(self) -> Iterable[select.SelectBranch]:
        spec = self._loop_spec
        if spec is None:
            raise NotImplementedError("Transputer subclasses must define loop()")
        return spec(self) if callable(spec) else spec

    def reset(self) -> None:
        if self._reset_hook is not None:
            self._reset_hook(self)

    # -- lifecycle ---------------------------------------------------------

    def _check_bound(self) -> None:
        unbound = [name for name, p in self.ports.items() if not p.bound]
        if unbound:
            raise UsageError(f"{self.name}: unbound ports {unbound}")

    def start(self) -> ProcessHandle:
        if self.handle is not None:
            raise UsageError(f"{self.name} already started")
        self._check_bound()
        return self._launch()

    def _launch(self) -> ProcessHandle:
        self.handle = current_executor().spawn(self._run)
        return self.handle

    def _decide(self, exc: BaseException) -> RecoveryDecision:
        decision = self.recovery(exc)
        if decision is ESCALATE:
            if self.supervisor is None:
                return STOP
            decision = self.supervisor(self, exc)
            if decision is ESCALATE:
                return STOP
        return decision

    def _may_restart(self, exc: BaseException) -> bool:
        self.failures.append(exc)
        if isinstance(exc, EndOfInputError):
            return False
        if self._decide(exc) is not RESTART:
            return False
        if self.restart_count >= self.max_restarts:
            log.warning("%s exceeded %d restarts; stopping", self.name, self.max_restarts)
            return False
        self.restart_count += 1
        log.info("%s restarting (#%d) after %r", self.name, self.restart_count, exc)
        return True

    async def _run(self):
        while True:
            self.reset()
            branches = list(self.loop())
            if not branches:
                raise DefinitionError(f"{self.name} has an empty loop")
            try:
                return await select.forever(*branches)
            except Exception as e:
                if not self._may_restart(e):
                    raise


def define_transputer(
    name: str,
    *,
    inputs: Iterable[str] = (),
    outputs: Iterable[str] = (),
    loop,
    recovery=None,
    supervisor=None,
    max_restarts: int = DEFAULT_MAX_RESTARTS,
    reset: Optional[Callable[[Transputer], None]] = None,
) -> Transputer:
    """Build a transputer from port names and a loop.

    ``loop`` is either a fixed list of branches or a callable taking the
    transputer and returning one; the callable form is re-invoked on each
    restart, so state it closes over is rebuilt.
    """
    if not callable(loop) and not list(loop):
        raise DefinitionError(f"{name} has an empty loop")
    t = Transputer(name, recovery=recovery, supervisor=supervisor, max_restarts=max_restarts)
    for port_name in inputs:
        t.add_port(port_name, InPort)
    for port_name in outputs:
        t.add_port(port_name, OutPort)
    t._loop_spec = loop if callable(loop) else list(loop)
    t._reset_hook = reset
    return t


class ParallelTransputer(Transputer):
    """Runs its children side by side; finishes when all of them have."""

    def __init__(self, *children: Transputer, name: Optional[str] = None, **kwargs):
        super().__init__(name or "+".join(c.name for c in children), **kwargs)
        self.children = list(children)

    def _check_bound(self) -> None:
        for child in self.children:
            child._check_bound()

    def _launch(self) -> ProcessHandle:
        for child in self.children:
            if child.handle is None or child.handle.done():
                child._launch()
        self.handle = current_executor().spawn(self._run)
        return self.handle

    async def _run(self):
        events = Channel(GROWING)

        def watch(i, handle):
            handle.add_done_callback(lambda h: events.awrite((i, h)))

        for i, child in enumerate(self.children):
            watch(i, child.handle)
        results: dict[int, Any] = {}
        while len(results) < len(self.children):
            i, handle = await events.read()
            exc = handle.exception()
            if exc is None:
                results[i] = handle.result()
                continue
            if not self._may_restart(exc):
                raise exc
            watch(i, self.children[i]._launch())
        return [results[i] for i in range(len(self.children))]


def compose(a: Transputer, b: Transputer, **kwargs) -> ParallelTransputer:
    return ParallelTransputer(a, b, **kwargs)


async def _distribute(source: Input, targets: list[Channel], key) -> None:
    try:
        async for message in source:
            await targets[key(message) % len(targets)].write(message)
    finally:
        for t in targets:
            t.close()


async def _duplicate(source: Input, targets: list[Channel]) -> None:
    try:
        async for message in source:
            for t in targets:
                await t.write(message)
    finally:
        for t in targets:
            t.close()


class ReplicatedTransputer(ParallelTransputer):
    """``n`` instances of one transputer whose ports are wired per policy.

    * ``Share()``: every instance uses the public channel directly, so
      instances compete for input and interleave on output.
    * ``Distribute(key)``: a router sends message ``m`` to instance
      ``key(m) % n`` (input ports only).
    * ``Duplicate()``: a router copies every message to every instance
      (input ports only).
    """

    def __init__(
        self,
        factory: Callable[[], Transputer],
        n: int,
        policies: Optional[dict[str, PortPolicy]] = None,
        *,
        name: Optional[str] = None,
        **kwargs,
    ):
        if not isinstance(n, int) or n < 1:
            raise DefinitionError(f"replication count must be a positive int, got {n!r}")
        instances = [factory() for _ in range(n)]
        base = name or instances[0].name
        for i, inst in enumerate(instances):
            inst.index = i
            inst.name = f"{base}[{i}]"
        super().__init__(*instances, name=base, **kwargs)
        self.n = n
        for port_name, port in instances[0].ports.items():
            self.add_port(port_name, type(port))
        self.policies: dict[str, PortPolicy] = {}
        for port_name, policy in (policies or {}).items():
            self._set_policy(port_name, policy)
        self._wired = False

    @property
    def instances(self) -> list[Transputer]:
        return self.children

    def _set_policy(self, port_name: str, policy: PortPolicy) -> ReplicatedTransputer:
        port = self.ports.get(port_name)
        if port is None:
            raise DefinitionError(f"{self.name} has no port {port_name!r}")
        if isinstance(port, OutPort) and not isinstance(policy, Share):
            raise DefinitionError(f"output port {port_name!r} only supports the share policy")
        if not isinstance(policy, (Share, Distribute, Duplicate)):
            raise DefinitionError(f"unknown port policy {policy!r}")
        self.policies[port_name] = policy
        return self

    def share(self, port_name: str) -> ReplicatedTransputer:
        return self._set_policy(port_name, Share())

    def distribute(self, port_name: str, key: Callable[[Any], int]) -> ReplicatedTransputer:
        return self._set_policy(port_name, Distribute(key))

    def duplicate(self, port_name: str) -> ReplicatedTransputer:
        return self._set_policy(port_name, Duplicate())

    def _check_bound(self) -> None:
        Transputer._check_bound(self)

    def _wire(self) -> None:
        ex = current_executor()
        for port_name, port in self.ports.items():
            policy = self.policies.get(port_name, Share())
            if isinstance(policy, Share):
                for inst in self.instances:
                    inst.ports[port_name].bind(port.channel)
                continue
            internals = [Channel(GROWING, ex) for _ in range(self.n)]
            for inst, ch in zip(self.instances, internals):
                inst.ports[port_name].bind(ch)
            if isinstance(policy, Distribute):
                ex.spawn(_distribute, port.channel, internals, policy.key)
            else:
                ex.spawn(_duplicate, port.channel, internals)
        self._wired = True

    def _launch(self) -> ProcessHandle:
        if not self._wired:
            self._wire()
        return super()._launch()


def replicate(
    factory: Callable[[], Transputer], n: int, policies: Optional[dict[str, PortPolicy]] = None, **kwargs
) -> ReplicatedTransputer:
    return ReplicatedTransputer(factory, n, policies, **kwargs)
