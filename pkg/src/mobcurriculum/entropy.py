"""Normalized Lempel-Ziv mobility entropy and the Fano predictability bound."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import Dataset, GridSpec, Trajectory

logger = logging.getLogger(__name__)


def symbolize(traj: Trajectory, grid: GridSpec) -> np.ndarray:
    """Flatten cells to integers with ``x * (y_max + 1) + y``."""
    return traj.x * (grid.y_max + 1) + traj.y


@dataclass(frozen=True)
class LZParse:
    phrases: Tuple[Tuple[int, ...], ...]

    @property
    def dict_size(self) -> int:
        return len(self.phrases)

    @property
    def consumed(self) -> int:
        return sum(len(p) for p in self.phrases)

    @property
    def mean_phrase_len(self) -> float:
        return self.consumed / self.dict_size

    @property
    def phrase_lengths(self) -> List[int]:
        return [len(p) for p in self.phrases]


def lz_parse(seq: Sequence[int]) -> LZParse:
    """Greedy left-to-right phrase parsing.

    At each position the shortest prefix of the remaining input that is not yet
    a phrase is emitted and added to the dictionary. Every proper prefix of a
    new phrase is already a phrase, so the dictionary is kept as a trie and the
    parse runs in linear time. If the input ends while still inside the trie the
    remaining suffix is emitted as a (duplicate) tail phrase.
    """
    seq = [int(s) for s in (seq.tolist() if isinstance(seq, np.ndarray) else seq)]
    n = len(seq)
    if n == 0:
        raise ValueError("cannot parse an empty sequence")
    root: dict = {}
    phrases = []
    i = 0
    while i < n:
        node = root
        j = i
        while j < n and seq[j] in node:
            node = node[seq[j]]
            j += 1
        if j < n:
            node[seq[j]] = {}
            j += 1
        phrases.append(tuple(seq[i:j]))
        i = j
    return LZParse(tuple(phrases))


def lz_entropy(parse: LZParse) -> float:
    """``ln N / (mean_phrase_len * ln 2)`` in bits."""
    n = parse.consumed
    if n < 2:
        raise ValueError(f"LZ entropy needs at least 2 symbols, got {n}")
    return math.log(n) / (parse.mean_phrase_len * math.log(2))


def normalized_entropy(seq: Sequence[int]) -> float:
    """LZ entropy divided by ``log2 N``; equals ``|D| / N``. Zero for ``N == 1``."""
    parse = lz_parse(seq)
    n = parse.consumed
    if n < 2:
        return 0.0
    h = lz_entropy(parse) / math.log2(n)
    return min(1.0, max(0.0, h))


def trajectory_entropy(traj: Trajectory, grid: GridSpec) -> float:
    return normalized_entropy(symbolize(traj, grid))


@dataclass(frozen=True)
class EntropyRecord:
    uid: str
    n_symbols: int
    dict_size: int
    h_lz: float
    h_norm: float


def entropy_records(dataset: Dataset) -> List[EntropyRecord]:
    out = []
    for traj in dataset:
        parse = lz_parse(symbolize(traj, dataset.grid))
        n = parse.consumed
        h_lz = lz_entropy(parse) if n >= 2 else 0.0
        h_norm = min(1.0, h_lz / math.log2(n)) if n >= 2 else 0.0
        out.append(EntropyRecord(traj.uid, n, parse.dict_size, h_lz, h_norm))
    return out


def write_entropy_csv(records: Sequence[EntropyRecord], stream) -> None:
    stream.write("uid,n_symbols,dict_size,h_lz,h_norm\n")
    for r in records:
        stream.write(f"{r.uid},{r.n_symbols},{r.dict_size},{r.h_lz!r},{r.h_norm!r}\n")


def _fano_rhs(phi: float, q: int) -> float:
    # 0 * log2(0) taken as 0 at both ends
    h = 0.0
    if 0.0 < phi < 1.0:
        h = -phi * math.log2(phi) - (1.0 - phi) * math.log2(1.0 - phi)
    if phi < 1.0 and q > 2:
        h += (1.0 - phi) * math.log2(q - 1)
    return h


@dataclass(frozen=True)
class FanoBound:
    entropy_bits: float
    alphabet: int
    max_accuracy: float


def fano_max_accuracy(entropy_bits: float, alphabet: int, tol: float = 1e-9, max_iter: int = 200) -> float:
    """Largest accuracy ``phi`` in ``[1/Q, 1]`` that Fano's inequality allows.

    Solves ``H = H_b(phi) + (1 - phi) log2(Q - 1)`` by bisection. The right-hand
    side decreases from ``log2 Q`` at ``phi = 1/Q`` to 0 at ``phi = 1``.
    """
    q = int(alphabet)
    if q < 2:
        raise ValueError(f"alphabet must be >= 2, got {alphabet}")
    h_max = math.log2(q)
    h = float(entropy_bits)
    if not 0.0 <= h <= h_max:
        clamped = min(max(h, 0.0), h_max)
        logger.warning("entropy %.6g outside [0, log2 Q=%.6g]; clamped to %.6g", h, h_max, clamped)
        h = clamped
    if h == 0.0:
        return 1.0
    lo, hi = 1.0 / q, 1.0
    if h >= h_max:
        return lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _fano_rhs(mid, q) > h:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def fano_bound(entropy_bits: float, alphabet: int) -> FanoBound:
    return FanoBound(entropy_bits, alphabet, fano_max_accuracy(entropy_bits, alphabet))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray


def entropy_histogram(dataset: Dataset, bins: int = 20) -> Histogram:
    """Counts of per-user normalized entropy over equal-width bins on [0, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = [trajectory_entropy(traj, dataset.grid) for traj in dataset]
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return Histogram(edges, counts)
