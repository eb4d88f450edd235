"""
Generic utility functions that are called frequently across modules.
"""
import functools
import hashlib
import os
import typing
from datetime import datetime, timezone

NAME_INDICES = {}
OWN_COLOR = "\x1b[32;1m"
OTHER_COLOR = "\x1b[0m"
THREADS_ENV = "GSM_FORGE_THREADS"


def timestamp():
    return "{}".format(datetime.now(timezone.utc).isoformat())


def color_print(string: str, own_color: str = OWN_COLOR, other_color: str = OTHER_COLOR):
    print(f"{own_color}{timestamp()} {string}{other_color}", flush=True)


def warn(string: str):
    color_print(f"WARNING: {string}", "\x1b[33;1m")


def int_reduce_mul(*integers: typing.Union[typing.List[typing.Iterable[int]], typing.List[int]]) -> int:
    if not integers:
        return 1
    if isinstance(integers[0], typing.Iterable):
        integers = integers[0]
    return functools.reduce(int.__mul__, (int(i) for i in integers), 1)


def random_name(prefix="") -> str:
    """
    Generates a unique, deterministic name by appending a per-prefix counter.
    :return: name string
    """
    if prefix not in NAME_INDICES:
        NAME_INDICES[prefix] = -1
    NAME_INDICES[prefix] += 1
    return f'{prefix}{NAME_INDICES[prefix]}'


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def worker_count(jobs: int) -> int:
    """
    Number of pool workers for `jobs` independent tasks, bounded by the GSM_FORGE_THREADS environment variable.
    """
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        warn(f"{THREADS_ENV}={raw!r} is not an integer. Falling back to 1.")
        threads = 1
    return max(1, min(threads, jobs))
