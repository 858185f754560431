"""Per-node SHA-256 puzzles with full and partial proofs.

Each node gets its own puzzle per epoch (the node id is part of the
preimage), so two nodes can never submit the same work. Difficulty is a
count of leading zero bits and stays fixed for the lifetime of a chain.

Two ways of producing proofs live here:

* :func:`solve` / :func:`mine_window` really hash on the host. Every proof
  they return can be re-checked with :func:`verify`.
* :func:`simulate_window` / :func:`simulate_first_full` draw the outcome of
  ``n`` hash attempts from the exact geometric/binomial model without doing
  the work. Their proofs are flagged ``simulated`` and carry no usable nonce.
"""
from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from .encoding import blob, text, u64
from .errors import NoProof

PARTIAL_MARGIN = 8
HASH_BITS = 256


def min_partial_bits(difficulty_bits: int, margin: int = PARTIAL_MARGIN) -> int:
    return max(0, difficulty_bits - margin)


@dataclass(frozen=True)
class Puzzle:
    node_id: str
    epoch_seed: bytes
    difficulty_bits: int

    def __post_init__(self):
        if len(self.epoch_seed) != 32:
            raise ValueError("epoch_seed must be 32 bytes")
        if not 0 <= self.difficulty_bits <= HASH_BITS:
            raise ValueError("difficulty_bits out of range")

    @property
    def prefix(self) -> bytes:
        """Preimage bytes before the nonce: seed then node id."""
        return blob(self.epoch_seed) + text(self.node_id)

    @property
    def min_partial_bits(self) -> int:
        return min_partial_bits(self.difficulty_bits)


@dataclass(frozen=True)
class Proof:
    nonce: int
    achieved_bits: int
    hashes_attempted: int
    elapsed: float
    is_full: bool
    simulated: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Proof":
        return cls(
            nonce=int(d["nonce"]),
            achieved_bits=int(d["achieved_bits"]),
            hashes_attempted=int(d["hashes_attempted"]),
            elapsed=float(d["elapsed"]),
            is_full=bool(d["is_full"]),
            simulated=bool(d.get("simulated", False)),
        )


@dataclass(frozen=True)
class MiningOutcome:
    """Result of one epoch's mining window.

    ``share_count`` counts attempts that reached ``share_bits`` (the partial
    threshold); ``proof`` is the best single attempt.
    """

    proof: Proof
    share_bits: int
    share_count: int
    window: float
    shares: tuple = ()


def derive_puzzle(node_id: str, epoch_seed: bytes, difficulty_bits: int) -> Puzzle:
    return Puzzle(node_id, bytes(epoch_seed), int(difficulty_bits))


def leading_zero_bits(digest: bytes) -> int:
    return HASH_BITS - int.from_bytes(digest, "big").bit_length()


def verify(puzzle: Puzzle, nonce: int) -> int:
    """Leading zero bits of the puzzle hash at ``nonce``. One hash, always."""
    return leading_zero_bits(hashlib.sha256(puzzle.prefix + u64(nonce)).digest())


def _start_nonce(rng_seed) -> int:
    if rng_seed is None:
        return 0
    return int(np.random.default_rng(rng_seed).integers(0, 2**62))


def _scan(prefix: bytes, start: int, count: int, difficulty: int, stop_on_full: bool, share_bits=None):
    """Sequential scan. Returns (best_nonce, best_bits, attempts, shares)."""
    base = hashlib.sha256(prefix)
    best_nonce, best_bits = start, -1
    shares = []
    attempts = 0
    for nonce in range(start, start + count):
        h = base.copy()
        h.update(nonce.to_bytes(8, "big"))
        bits = HASH_BITS - int.from_bytes(h.digest(), "big").bit_length()
        attempts += 1
        if share_bits is not None and bits >= share_bits:
            shares.append(nonce)
        if bits > best_bits:
            best_nonce, best_bits = nonce, bits
            if stop_on_full and bits >= difficulty:
                break
    return best_nonce, best_bits, attempts, shares


def _scan_lane(args):
    return _scan(*args)


def solve(
    puzzle: Puzzle,
    hash_budget: int,
    timeout: float,
    hash_rate: float,
    rng_seed=None,
    min_partial: int | None = None,
    lanes: int = 1,
) -> Proof:
    """Search nonces sequentially and return the first full proof.

    The search covers at most ``min(hash_budget, hash_rate * timeout)``
    attempts. Without a full proof the best partial one (most bits, then
    smallest nonce) is returned, or :class:`NoProof` if even that falls short
    of ``min_partial``. ``elapsed`` is simulated time, ``attempts / hash_rate``.

    With ``lanes > 1`` disjoint nonce ranges are hashed in worker processes
    and reduced to exactly what the sequential scan would have returned.
    """
    if hash_budget <= 0:
        raise ValueError("hash_budget must be positive")
    if hash_rate <= 0:
        raise ValueError("hash_rate must be positive")
    limit = min(int(hash_budget), int(math.floor(hash_rate * timeout)))
    if min_partial is None:
        min_partial = puzzle.min_partial_bits
    start = _start_nonce(rng_seed)
    d = puzzle.difficulty_bits
    if limit <= 0:
        raise NoProof("no attempts fit in the budget")

    if lanes <= 1 or limit < 4 * lanes:
        nonce, bits, attempts, _ = _scan(puzzle.prefix, start, limit, d, True)
    else:
        chunk = -(-limit // lanes)
        jobs = []
        for k in range(lanes):
            lo = start + k * chunk
            n = max(0, min(chunk, start + limit - lo))
            if n:
                jobs.append((puzzle.prefix, lo, n, d, True))
        with ProcessPoolExecutor(max_workers=len(jobs)) as ex:
            results = list(ex.map(_scan_lane, jobs))
        full = [(r[0], r) for r in results if r[1] >= d]
        if full:
            nonce = min(full)[0]
            bits = verify(puzzle, nonce)
            attempts = nonce - start + 1
        else:
            nonce, bits = min(((r[0], r[1]) for r in results), key=lambda t: (-t[1], t[0]))
            attempts = limit

    if bits < min_partial:
        raise NoProof(f"best attempt reached {bits} bits, need {min_partial}")
    return Proof(nonce, bits, attempts, attempts / hash_rate, bits >= d)


def mine_window(puzzle: Puzzle, hash_rate: float, window: float, effort: float = 1.0, rng_seed=None) -> MiningOutcome:
    """Really hash for a whole mining window, collecting every partial proof."""
    n = int(math.floor(hash_rate * effort * window))
    s = puzzle.min_partial_bits
    if n <= 0:
        raise NoProof("no attempts fit in the window")
    start = _start_nonce(rng_seed)
    nonce, bits, attempts, shares = _scan(puzzle.prefix, start, n, puzzle.difficulty_bits, False, s)
    if not shares:
        raise NoProof(f"no attempt reached {s} bits")
    proof = Proof(nonce, bits, attempts, window, bits >= puzzle.difficulty_bits)
    return MiningOutcome(proof, s, len(shares), window, tuple(shares))


def best_bits_from_shares(share_count: int, share_bits: int, rng: np.random.Generator) -> int:
    """Best attempt among ``share_count`` attempts already known to reach ``share_bits``.

    Each extra zero bit halves the survivors, so the record is found by
    repeated binomial thinning.
    """
    k, survivors = share_bits, share_count
    while k < HASH_BITS:
        nxt = int(rng.binomial(survivors, 0.5))
        if nxt == 0:
            break
        k, survivors = k + 1, nxt
    return k


def simulate_window(
    puzzle: Puzzle, hash_rate: float, window: float, rng: np.random.Generator, effort: float = 1.0
) -> MiningOutcome:
    """Statistical stand-in for :func:`mine_window` (no host hashing)."""
    n = int(math.floor(hash_rate * effort * window))
    s = puzzle.min_partial_bits
    if n <= 0:
        raise NoProof("no attempts fit in the window")
    count = int(rng.binomial(n, 2.0**-s))
    if count == 0:
        raise NoProof(f"no attempt reached {s} bits")
    bits = best_bits_from_shares(count, s, rng)
    nonce = int(rng.integers(0, 2**63))
    proof = Proof(nonce, bits, n, window, bits >= puzzle.difficulty_bits, simulated=True)
    return MiningOutcome(proof, s, count, window)


def simulate_first_full(puzzle: Puzzle, hash_rate: float, timeout: float, rng: np.random.Generator) -> Proof:
    """Statistical stand-in for :func:`solve` with an unlimited hash budget.

    Attempts until the first full proof are geometric with success
    probability ``2**-d``.
    """
    d = puzzle.difficulty_bits
    limit = int(math.floor(hash_rate * timeout))
    attempts = int(rng.geometric(2.0**-d))
    if attempts > limit:
        raise NoProof(f"no full proof within {limit} attempts")
    extra = int(rng.geometric(0.5)) - 1
    nonce = int(rng.integers(0, 2**63))
    return Proof(nonce, min(HASH_BITS, d + extra), attempts, attempts / hash_rate, True, simulated=True)


def measure_hash_rate(duration: float, lanes: int = 1) -> tuple[float, int]:
    """Hash for ``duration`` wall seconds on the host; returns (h/s, hashes)."""
    import time

    if duration <= 0:
        return 0.0, 0
    if lanes > 1:
        with ProcessPoolExecutor(max_workers=lanes) as ex:
            counts = list(ex.map(_timed_lane, [duration] * lanes))
        total = sum(counts)
        return total / duration, total
    total = _timed_lane(duration)
    return total / duration, total


def _timed_lane(duration: float) -> int:
    import time

    prefix = hashlib.sha256(os.urandom(32))
    end = time.perf_counter() + duration
    n = 0
    while time.perf_counter() < end:
        for nonce in range(n, n + 4096):
            h = prefix.copy()
            h.update(nonce.to_bytes(8, "big"))
            h.digest()
        n += 4096
    return n
