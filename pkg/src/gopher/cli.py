"""``gopher-demo``: run the example programs with checkable text output.

Every demo prints one value per line followed by a ``RESULT:`` summary line
and exits 0.  If a demo's own consistency check fails it prints a single
``ERROR:`` line to stderr and exits 1.
"""

from __future__ import annotations

import argparse
import sys
from typing import Callable

from . import demos
from .runtime import Executor

WAIT_TIMEOUT = 120.0


class InvariantViolation(Exception):
    pass


def _is_prime(k: int) -> bool:
    return k >= 2 and all(k % d for d in range(2, int(k**0.5) + 1))


def _executor(args, *, virtual: bool = False) -> Executor:
    if args.deterministic or virtual:
        return Executor(deterministic=True, virtual_time=True)
    return Executor(workers=args.workers)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantViolation(message)


def demo_primes(args):
    with _executor(args) as ex:
        primes = ex.wait(demos.n_primes(args.n), WAIT_TIMEOUT)
    _check(len(primes) == args.n, f"expected {args.n} primes, got {len(primes)}")
    _check(all(map(_is_prime, primes)), "sieve emitted a composite number")
    _check(primes == sorted(set(primes)), "primes not strictly increasing")
    return [str(p) for p in primes], str(primes[-1])


def demo_fibonacci(args):
    with _executor(args) as ex:
        values, final = ex.wait(demos.run_fibonacci(args.count), WAIT_TIMEOUT)
    x, y = 0, 1
    for v in values:
        _check(v == x, f"fibonacci value {v} != {x}")
        x, y = y, x + y
    _check(final == (x, y), f"final state {final} != {(x, y)}")
    return [str(v) for v in values], str(final)


def demo_broadcast(args):
    with _executor(args) as ex:
        transcripts = ex.wait(demos.run_broadcast(args.listeners, args.messages), WAIT_TIMEOUT)
    expected = list(range(args.messages))
    for i, t in enumerate(transcripts):
        _check(t == expected, f"listener {i} transcript out of order or incomplete")
    lines = [f"listener {i}: " + " ".join(map(str, t)) for i, t in enumerate(transcripts)]
    return lines, f"deliveries={sum(map(len, transcripts))}"


def demo_bandwidth(args):
    # Timeouts only make reproducible sense against the virtual clock.
    with _executor(args, virtual=True) as ex:
        report = ex.wait(
            demos.run_bandwidth(
                args.tasks, args.slow_ms / 1000.0, max_consumers=args.max_consumers
            )
        )
    delivered = sorted(task for _, task in report.delivered)
    _check(delivered == list(range(args.tasks)), "tasks lost or delivered twice")
    summary = (
        f"delivered={len(delivered)} grows={report.grows} "
        f"shrinks={report.shrinks} refused={report.refusals}"
    )
    return report.log, summary


def demo_zipper(args):
    xs = [s for s in args.xs.split(",") if s] if args.xs else []
    ys = [s for s in args.ys.split(",") if s] if args.ys else []
    if len(xs) != len(ys):
        raise InvariantViolation("--xs and --ys must have the same length")
    with _executor(args) as ex:
        pairs = ex.wait(demos.run_zipper(xs, ys), WAIT_TIMEOUT)
    _check(pairs == list(zip(xs, ys)), "pairs do not match index-wise zip")
    return [f"({x}, {y})" for x, y in pairs], f"pairs={len(pairs)}"


DEMOS: dict[str, Callable] = {
    "primes": demo_primes,
    "fibonacci": demo_fibonacci,
    "broadcast": demo_broadcast,
    "bandwidth": demo_bandwidth,
    "zipper": demo_zipper,
}


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gopher-demo", description=__doc__.splitlines()[0])
    p.add_argument("demo", choices=sorted(DEMOS))
    p.add_argument("--n", type=_positive, default=10, help="primes: how many")
    p.add_argument("--count", type=_positive, default=10, help="fibonacci: values to read")
    p.add_argument("--listeners", type=_positive, default=3, help="broadcast: listener count")
    p.add_argument("--messages", type=_positive, default=5, help="broadcast: message count")
    p.add_argument("--tasks", type=_positive, default=10, help="bandwidth: tasks in the burst")
    p.add_argument("--slow-ms", type=_non_negative, default=0.0, help="bandwidth: consumer delay")
    p.add_argument("--max-consumers", type=_positive, default=4, help="bandwidth: growth cap")
    p.add_argument("--xs", default="1,2,3", help="zipper: comma separated left values")
    p.add_argument("--ys", default="a,b,c", help="zipper: comma separated right values")
    p.add_argument("--deterministic", action="store_true", help="single worker, virtual clock")
    p.add_argument("--workers", type=_positive, default=None, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        lines, result = DEMOS[args.demo](args)
    except InvariantViolation as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    print(f"RESULT: {result}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
