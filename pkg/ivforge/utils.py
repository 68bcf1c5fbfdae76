import os

import psutil

from . import errors

MASK64 = 0xFFFF_FFFF_FFFF_FFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E37_79B9_7F4A_7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, rep: int, grid: int = 0) -> int:
    """Counter-based seed for replication `rep` at grid point `grid`.

    Depends only on its arguments, so a replication draws the same stream no
    matter which worker runs it or in which order.
    """
    h = splitmix64(master_seed & MASK64)
    h = splitmix64(h ^ (grid & MASK64))
    return splitmix64(h ^ (rep & MASK64))


def default_threads() -> int:
    env = os.environ.get("IVFORGE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise errors.ConfigError(f"IVFORGE_THREADS must be an integer, got {env!r}") from None
    return psutil.cpu_count(logical=True) or 1
