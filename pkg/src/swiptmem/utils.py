"""Small shared helpers: unit conversion, seeding, atomic file writes."""

import hashlib
import os
import tempfile
from contextlib import contextmanager

import numpy as np


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ValueError("power must be > 0 to express in dBm")
    return 10.0 * np.log10(watts) + 30.0


def dbm_to_amplitude(dbm: float) -> float:
    """Peak power in dBm to a peak amplitude in volts (1-ohm reference)."""
    return float(np.sqrt(dbm_to_watts(dbm)))


def substream(master_seed: int, *names) -> np.random.Generator:
    """Independent, reproducible random stream named by a path of labels.

    Streams are derived by hashing the label path, so adding or renaming one
    stream never perturbs any other.
    """
    digest = hashlib.sha256("/".join(str(n) for n in names).encode()).digest()
    words = [int.from_bytes(digest[i: i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *words]))


@contextmanager
def atomic_write(path, mode="w"):
    """Write to a temp file in the target directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
