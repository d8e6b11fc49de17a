import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gopher import (
    DeadlockError,
    Executor,
    ExecutorConfig,
    RejectedError,
    UsageError,
    defer,
    go,
    make_channel,
    recover,
    sleep,
)
from gopher.flow import Done, FlowTermination, Skip
from gopher.runtime import default_workers


def test_spawn_returns_value(ex):
    assert ex.wait(go(lambda: 7)) == 7


def test_spawn_async_body(ex):
    async def body(x):
        await sleep(0)
        return x * 2

    assert ex.wait(go(body, 21)) == 42


def test_spawn_failure_reaches_handle(ex):
    class Boom(Exception):
        pass

    def body():
        raise Boom()

    with pytest.raises(Boom):
        ex.wait(go(body))


def test_blocked_process_leaves_executor_responsive(ex):
    never = make_channel()
    stuck = go(never.read)
    assert ex.wait(go(lambda: "other")) == "other"
    assert not stuck.done()


def test_process_ids_are_unique(ex):
    handles = [go(lambda: None) for _ in range(50)]
    assert len({h.pid for h in handles}) == 50


def test_defer_runs_lifo(ex):
    order = []

    def body():
        defer(lambda: order.append("A"))
        defer(lambda: order.append("B"))
        return 1

    assert ex.wait(go(body)) == 1
    assert order == ["B", "A"]


def test_defer_runs_on_failure_before_completion(ex):
    order = []

    def body():
        defer(lambda: order.append("cleanup"))
        raise ValueError("x")

    h = go(body)
    with pytest.raises(ValueError):
        ex.wait(h)
    assert order == ["cleanup"]


def test_defer_outside_process():
    with pytest.raises(UsageError):
        defer(lambda: None)


def test_recover_maps_failure_to_value(ex):
    def body():
        defer(lambda: recover(lambda e: 0))
        raise ValueError("x")

    assert ex.wait(go(body)) == 0


def test_recover_not_consulted_on_success(ex):
    consulted = []

    def body():
        defer(lambda: recover(lambda e: consulted.append(e) or 0))
        return 5

    assert ex.wait(go(body)) == 5
    assert consulted == []


def test_recover_decline_passes_failure(ex):
    def body():
        defer(lambda: recover(lambda e: None))
        raise KeyError("k")

    with pytest.raises(KeyError):
        ex.wait(go(body))


def test_recover_outside_defer(ex):
    def body():
        recover(lambda e: 0)

    with pytest.raises(UsageError):
        ex.wait(go(body))


def test_failing_defer_supersedes_result(ex):
    def body():
        defer(lambda: 1 / 0)
        return 3

    with pytest.raises(ZeroDivisionError):
        ex.wait(go(body))


def test_outer_defer_recovers_inner_defer_failure(ex):
    def body():
        defer(lambda: recover(lambda e: "rescued"))
        defer(lambda: 1 / 0)
        return 3

    assert ex.wait(go(body)) == "rescued"


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=20))
def test_defer_order_property(k):
    with Executor(deterministic=True) as e:
        order = []

        def body():
            for i in range(k):
                defer(lambda i=i: order.append(i))

        e.wait(go(body))
        assert order == list(reversed(range(k)))


def test_unobserved_failure_goes_to_listener():
    seen = []
    with Executor(deterministic=True, failure_listener=lambda h, e: seen.append(type(e))) as e:

        def body():
            raise RuntimeError()

        go(body)
        e.run()
    assert seen == [RuntimeError]


def test_observed_failure_skips_listener():
    seen = []
    with Executor(deterministic=True, failure_listener=lambda h, e: seen.append(e)) as e:
        h = go(lambda: 1 / 0)
        h.add_done_callback(lambda _h: None)
        e.run()
    assert seen == []


def test_completion_once(ex):
    calls = []
    h = go(lambda: 1)
    h.add_done_callback(lambda f: calls.append(f.result()))
    ex.run()
    assert calls == [1]


@pytest.mark.parametrize(
    "kwargs",
    [dict(workers=0), dict(workers=2, deterministic=True), dict(virtual_time=True)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ExecutorConfig(**kwargs)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("GOPHER_WORKERS", "3")
    assert default_workers() == 3


def test_schedule_done_and_skip(ex):
    ft = FlowTermination()
    ex.schedule_step(Skip(lambda: Done(9, ft), ft), ft)
    assert ex.wait(ft.future) == 9


def test_deterministic_fifo(ex):
    order = []
    ex.submit(order.append, "A")
    ex.submit(order.append, "B")
    ex.run()
    assert order == ["A", "B"]


def test_rejected_after_shutdown():
    e = Executor(deterministic=True)
    e.shutdown()
    with pytest.raises(RejectedError):
        e.submit(lambda: None)


def test_advance_fires_on_second_step(ex):
    fired = []
    ex.call_later(0.100, fired.append, "t")
    ex.advance(0.050)
    assert fired == []
    ex.advance(0.050)
    assert fired == ["t"]


def test_advance_orders_timers(ex):
    fired = []
    ex.call_later(0.020, fired.append, 20)
    ex.call_later(0.010, fired.append, 10)
    ex.advance(0.030)
    assert fired == [10, 20]
    assert ex.now() == pytest.approx(0.030)


def test_advance_zero(ex):
    fired = []
    ex.call_later(0.001, fired.append, 1)
    ex.advance(0)
    assert fired == []


def test_advance_requires_virtual_time():
    with Executor(deterministic=True) as e, pytest.raises(UsageError):
        e.advance(1)


def test_sleep_uses_virtual_clock(ex):
    async def body():
        await sleep(2.5)
        return ex.now()

    assert ex.wait(go(body)) == 2.5


def test_deadlock_detected(ex):
    with pytest.raises(DeadlockError):
        ex.wait(make_channel().aread())


def test_pairwise_rendezvous_single_worker():
    n = 1000
    with Executor(workers=1) as e:
        done = []
        lock = threading.Lock()

        async def pair(ch, role):
            if role == "w":
                await ch.write(role)
            else:
                await ch.read()
            with lock:
                done.append(role)

        handles = []
        for _ in range(n // 2):
            ch = make_channel()
            handles.append(go(pair, ch, "r"))
            handles.append(go(pair, ch, "w"))
        for h in handles:
            e.wait(h, timeout=30)
    assert len(done) == n


def _trace_program(e):
    trace = []
    chans = [make_channel(k) for k in (0, 1, 2)]

    async def producer(i, ch):
        for v in range(5):
            await ch.write((i, v))
            trace.append(("w", i, v))

    async def consumer(i, ch):
        for _ in range(5):
            trace.append(("r", i, await ch.read()))

    for i, ch in enumerate(chans):
        go(producer, i, ch)
        go(consumer, i, ch)
    e.run()
    return trace


def test_determinism_identical_traces():
    traces = []
    for _ in range(2):
        with Executor(deterministic=True, virtual_time=True) as e:
            traces.append(_trace_program(e))
    assert traces[0] == traces[1]
    assert len(traces[0]) == 30
