"""Operation counters for verifying work-complexity contracts.

The numeric kernels in this package are vectorized, so counters are tallied
analytically from the shapes each kernel actually processes. They exist to
prove contracts (zero multiplications in LUT scoring, one pass over the data
in codebook construction, row-proportional dequantization), not to profile.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Iterator


@dataclass
class OpCounters:
    lut_lookups: int = 0
    lut_adds: int = 0
    score_muls: int = 0
    dense_muls: int = 0
    dense_adds: int = 0
    codebook_subvector_reads: int = 0
    kmeans_subvector_reads: int = 0
    dequant_rows: int = 0

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


_active: list[OpCounters] = []


def tally(counter: str, amount: int) -> None:
    """Add ``amount`` to ``counter`` on every active collector. No-op otherwise."""
    if not _active:
        return
    for counters in _active:
        setattr(counters, counter, getattr(counters, counter) + amount)


@contextmanager
def collect() -> Iterator[OpCounters]:
    """Collect op counts for everything executed inside the block.

    Collectors nest; each one sees all operations performed while it is open.
    """
    counters = OpCounters()
    _active.append(counters)
    try:
        yield counters
    finally:
        _active.remove(counters)
