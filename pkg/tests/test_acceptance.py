"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line."""

import random
import threading
import time
from collections import Counter, defaultdict

from hypothesis import given, settings
from hypothesis import strategies as st

from gopher import (
    GROWING,
    RESTART,
    Executor,
    FlowTermination,
    InPort,
    OutPort,
    Transputer,
    define_transputer,
    go,
    make_channel,
    on_read,
    on_timeout,
    replicate,
    select,
    sleep,
)
from gopher import cli
from gopher.demos import run_broadcast, run_fibonacci
from gopher.flow import Done


def first_primes(n):
    found, k = [], 2
    while len(found) < n:
        if all(k % d for d in range(2, int(k**0.5) + 1)):
            found.append(k)
        k += 1
    return found


def test_01_primes_cli(criterion, capsys):
    criterion(1, "primes --n 100 --deterministic: first 100 primes, ends 541, 5 identical runs")
    outputs = []
    for _ in range(5):
        assert cli.main(["primes", "--n", "100", "--deterministic"]) == 0
        outputs.append(capsys.readouterr().out)
    assert len(set(outputs)) == 1
    lines = outputs[0].splitlines()
    assert [int(x) for x in lines[:-1]] == first_primes(100)
    assert lines[-1] == "RESULT: 541"
    print("PASS primes")


def test_02_fibonacci_fold(criterion):
    criterion(2, "fibonacci count=20 matches recurrence; final state (6765, 10946)")
    with Executor(deterministic=True, virtual_time=True) as e:
        values, final = e.wait(run_fibonacci(20))
    x, y, expected = 0, 1, []
    for _ in range(20):
        expected.append(x)
        x, y = y, x + y
    assert values == expected
    assert final == (x, y) == (6765, 10946)
    print("PASS fibonacci")


def test_03_rendezvous_ordering(criterion):
    criterion(3, "rendezvous: 10,000 transfers, zero writer-before-receipt violations")
    n = 10_000
    received = set()
    violations = []
    lock = threading.Lock()
    with Executor(workers=4) as e:
        ch = make_channel()

        def reader_flow():
            ft = FlowTermination()

            def consumer(readin):
                with lock:
                    received.add(readin.value)
                return Done(None, ft)

            ch.cbread(lambda _cr: consumer, ft)
            return ft.future

        def check(i):
            def cb(_f):
                with lock:
                    if i not in received:
                        violations.append(i)

            return cb

        writes = []
        rng = random.Random(3)
        pending_reads = []
        for i in range(n):
            # Randomize whether the reader or the writer registers first.
            if rng.random() < 0.5:
                pending_reads.append(reader_flow())
                w = ch.awrite(i)
            else:
                w = ch.awrite(i)
                pending_reads.append(reader_flow())
            w.add_done_callback(check(i))
            writes.append(w)
        for f in writes + pending_reads:
            f.result(timeout=60)
    assert len(received) == n
    assert violations == []
    print("PASS rendezvous")


def test_04_capacity_bound(criterion):
    criterion(4, "buffered(k) k in {1,2,8}: completed writes minus reads never exceed k")
    for k in (1, 2, 8):
        rng = random.Random(k)
        with Executor(deterministic=True) as e:
            ch = make_channel(k)
            state = {"writes": 0, "reads": 0, "peak": 0}

            def on_write_done(_f):
                state["writes"] += 1
                state["peak"] = max(state["peak"], state["writes"] - state["reads"])

            def consumer_for(ft):
                def consumer(readin):
                    state["reads"] += 1
                    return Done(None, ft)

                return consumer

            # Alternating random bursts around a balanced backlog, so the buffer fills to k.
            ops, writes, reads = [], 0, 0
            while writes < 500 or reads < 500:
                burst = rng.randint(1, 2 * k + 2)
                w = min(burst, 500 - writes)
                ops += ["w"] * w
                writes += w
                r = min(rng.randint(1, writes - reads + 1), 500 - reads)
                ops += ["r"] * r
                reads += r
            for op in ops:
                if op == "w":
                    ch.awrite(object()).add_done_callback(on_write_done)
                else:
                    ft = FlowTermination()
                    ch.cbread(lambda _cr, c=consumer_for(ft): c, ft)
                for _ in range(rng.randint(0, 3)):
                    job = e._next_job()
                    if job is None:
                        break
                    e._run_job(job)
            e.run()
            assert state["writes"] == state["reads"] == 500
            assert state["peak"] <= k, (k, state)
            assert state["peak"] == k
    print("PASS capacity")


def test_05_selector_fairness(criterion):
    criterion(5, "selector: 1000 rounds, fire-count difference <= 1, exclusion counter <= 1")
    rounds = 1000
    with Executor(deterministic=True) as e:
        a, b = make_channel(GROWING), make_channel(GROWING)
        for _ in range(rounds):
            a.awrite("a")
            b.awrite("b")
        counts = Counter()
        inside = {"now": 0, "peak": 0}

        async def body(v):
            inside["now"] += 1
            inside["peak"] = max(inside["peak"], inside["now"])
            await sleep(0)
            counts[v] += 1
            inside["now"] -= 1
            if sum(counts.values()) == rounds:
                select.exit(None)

        e.wait(select.forever(on_read(a, body), on_read(b, body)))
    assert sum(counts.values()) == rounds
    assert abs(counts["a"] - counts["b"]) <= 1
    assert inside["peak"] == 1
    print("PASS fairness")


def test_06_timeout_virtual_time(criterion):
    criterion(6, "timeout fires at exactly 10 ms; a value at 5 ms suppresses it")
    with Executor(deterministic=True, virtual_time=True) as e:
        ch = make_channel()
        fired = []
        h = select.once(on_read(ch, lambda v: "value"), on_timeout(0.010, lambda: fired.append(e.now()) or "timeout"))
        e.advance(0.005)
        assert not h.done()
        assert e.wait(h) == "timeout"
        assert fired == [0.010]

    with Executor(deterministic=True, virtual_time=True) as e:
        ch = make_channel()
        fired = []

        async def late():
            await sleep(0.005)
            await ch.write(5)

        go(late)
        h = select.once(on_read(ch, lambda v: ("value", v, e.now())), on_timeout(0.010, lambda: fired.append(e.now())))
        assert e.wait(h) == ("value", 5, 0.005)
        e.advance(0.100)
        assert fired == []
    print("PASS timeout")


def test_07_broadcast(criterion):
    criterion(7, "broadcast 10 listeners x 100 messages: 1,000 ordered deliveries")
    with Executor(deterministic=True, virtual_time=True) as e:
        transcripts = e.wait(run_broadcast(10, 100))
    assert len(transcripts) == 10
    assert sum(map(len, transcripts)) == 1000
    assert all(t == list(range(100)) for t in transcripts)
    print("PASS broadcast")


class _Node(Transputer):
    data = InPort()
    control = InPort()
    out = OutPort()

    def loop(self):
        return [
            on_read(self.data, lambda m: self.out.awrite(("data", self.index, m))),
            on_read(self.control, lambda m: self.out.awrite(("control", self.index, m))),
        ]


def _feed(ch, values):
    async def run():
        for v in values:
            await ch.write(v)

    return go(run)


def test_08_replication(criterion):
    criterion(8, "replication: distribute stable over 1,000 sends, duplicate 100x10 exactly once, share conserves")
    rng = random.Random(8)
    with Executor(deterministic=True) as e:
        data, control, out = make_channel(), make_channel(), make_channel(GROWING)
        replicate(_Node, 4).distribute("data", key=lambda m: m).share("out").bind(
            data=data, control=control, out=out
        ).start()
        sent = [rng.randrange(64) for _ in range(1000)] + [10] * 50
        e.wait(_feed(data, sent))
        e.run()
        placement = defaultdict(set)
        for _, idx, m in out._buffer:
            placement[m].add(idx)
        assert len(out._buffer) == len(sent)
        assert all(places == {m % 4} for m, places in placement.items())
        assert placement[10] == {2}

    with Executor(deterministic=True) as e:
        data, control, out = make_channel(), make_channel(), make_channel(GROWING)
        replicate(_Node, 10).duplicate("control").bind(data=data, control=control, out=out).start()
        e.wait(_feed(control, range(100)))
        e.run()
        per_instance = defaultdict(list)
        for kind, idx, m in out._buffer:
            assert kind == "control"
            per_instance[idx].append(m)
        assert sorted(per_instance) == list(range(10))
        assert all(v == list(range(100)) for v in per_instance.values())

    with Executor(deterministic=True) as e:
        inp, out = make_channel(), make_channel(GROWING)
        echo = lambda: define_transputer(  # noqa: E731
            "echo", inputs=["inp"], outputs=["out"], loop=lambda t: [on_read(t.inp, t.out.awrite)]
        )
        replicate(echo, 3).bind(inp=inp, out=out).start()
        values = list(range(300))
        e.wait(_feed(inp, values))
        e.run()
        assert Counter(out._buffer) == Counter(values)
    print("PASS replication")


def test_09_supervision(criterion):
    criterion(9, "supervision: every 10th message faults, restarts = faults, no loss or duplicates")
    processed = []

    def loop(t):
        async def body(m):
            if m % 10 == 9:
                raise RuntimeError(f"fault on {m}")
            processed.append(m)
            await t.out.write(m)

        return [on_read(t.inp, body)]

    with Executor(deterministic=True) as e:
        inp, out = make_channel(GROWING), make_channel(GROWING)
        for m in range(100):
            inp.awrite(m)
        t = define_transputer(
            "worker", inputs=["inp"], outputs=["out"], loop=loop, recovery=lambda exc: RESTART
        )
        t.bind(inp=inp, out=out).start()
        e.run()
    expected = [m for m in range(100) if m % 10 != 9]
    assert processed == expected
    assert list(out._buffer) == expected
    assert t.restart_count == 10 == len(t.failures)
    print("PASS supervision")


def test_10_ring_scale(criterion):
    criterion(10, "10,000-process ring on 1 worker completes within 30 s")
    n, laps = 10_000, 2
    start = time.monotonic()
    with Executor(workers=1) as e:
        chans = [make_channel() for _ in range(n)]

        async def node(i):
            for _ in range(laps):
                token = await chans[i].read()
                await chans[(i + 1) % n].write(token + 1)

        handles = [go(node, i) for i in range(1, n)]

        async def head():
            await chans[1].write(1)
            for lap in range(laps):
                token = await chans[0].read()
                if lap + 1 < laps:
                    await chans[1].write(token + 1)
            return token

        result = e.wait(go(head), timeout=30)
        for h in handles:
            e.wait(h, timeout=30)
    elapsed = time.monotonic() - start
    assert result == laps * n
    assert elapsed < 30, elapsed
    print(f"PASS ring {elapsed:.2f}s")


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(-10_000, 10_000), max_size=50),
    st.integers(1, 9),
    st.integers(-5, 5),
)
def _combinator_laws(values, m, c):
    f = lambda x: x * m + c  # noqa: E731
    g = lambda x: x - c  # noqa: E731
    p = lambda x: x % m == 0  # noqa: E731

    def stream():
        ch = make_channel()

        async def produce():
            for v in values:
                await ch.write(v)
            ch.close()

        go(produce)
        return ch

    async def collect(inp):
        return [v async for v in inp]

    with Executor(deterministic=True) as e:
        assert e.wait(go(collect, stream().map(lambda x: x))) == values
        assert e.wait(go(collect, stream().map(g).map(f))) == e.wait(go(collect, stream().map(lambda x: f(g(x)))))
        got = e.wait(go(collect, stream().filter(p)))
        assert all(p(x) for x in got)
        assert got == [x for x in values if p(x)]
    _combinator_laws.cases += 1


def test_11_combinator_laws(criterion):
    criterion(11, "functor laws and filter soundness over >= 100 random streams")
    _combinator_laws.cases = 0
    _combinator_laws()
    assert _combinator_laws.cases >= 100
    print(f"PASS combinator laws ({_combinator_laws.cases} cases)")
