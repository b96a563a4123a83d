"""Externality pricing: redundancy-priced ingestion fees, escalating
message micro-taxes, risk-scaled insurance premiums, and emergency
stake surges.

All fee formulas produce integer micro-credits via half-up rounding, and
every charge lands in the treasury or the insurance pool so the global
conservation identity stays exact. Tau parameters are deliberately
exposed in scenario configuration for experimentation rather than fixed
at a recommended value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .market import round_half_up


class EconomicsError(Exception):
    pass


class DimensionMismatchError(EconomicsError):
    pass


@dataclass(frozen=True)
class EconPolicy:
    f_min: int = 1                 # ingestion fee floor
    f_max: int = 100               # ingestion fee ceiling
    r0: float = 0.5                # redundancy below this is free of surcharge
    tau_base: int = 1              # per-message base tax
    m_free: int = 10               # untaxed-escalation message allowance per window
    beta: float = 0.1              # escalation slope above the allowance
    premium_base: int = 10
    premium_slope: float = 0.5
    gateway_fee: int = 10
    tax_window: int = 16           # ticks over which message counts accumulate
    transfer_tax: int = 0

    def __post_init__(self) -> None:
        if self.f_min > self.f_max:
            raise EconomicsError("f_min exceeds f_max")
        if not 0 <= self.r0 < 1:
            raise EconomicsError("r0 must lie in [0, 1)")
        if min(self.f_min, self.tau_base, self.premium_base, self.gateway_fee) < 0:
            raise EconomicsError("fees must be non-negative")


@dataclass
class InfoEntry:
    entry_id: str
    author: bytes
    embedding: np.ndarray
    verified: bool
    tick: int
    content: Optional[object] = None  # carried payload, not part of pricing


class InfoStore:
    """Shared information resource with unit-norm embeddings."""

    def __init__(self, dimension: int, verify_lag: int = 0) -> None:
        self.dimension = dimension
        self.verify_lag = verify_lag
        self.entries: list[InfoEntry] = []
        self._counter = 0

    def _check_vector(self, embedding: np.ndarray) -> np.ndarray:
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"embedding dimension {embedding.shape} != ({self.dimension},)"
            )
        norm = float(np.linalg.norm(embedding))
        if abs(norm - 1.0) > 1e-9:
            raise EconomicsError(f"embedding norm {norm} not within 1e-9 of 1")
        return embedding

    def redundancy(self, candidate: np.ndarray) -> float:
        """Max clamped cosine similarity against the verified entries."""
        candidate = self._check_vector(candidate)
        verified = [e.embedding for e in self.entries if e.verified]
        if not verified:
            return 0.0
        sims = np.asarray(verified) @ candidate
        return float(max(0.0, float(np.max(sims))))

    def add(self, author: bytes, embedding: np.ndarray, tick: int,
            content: Optional[object] = None) -> InfoEntry:
        embedding = self._check_vector(embedding)
        entry = InfoEntry(
            entry_id=f"i{self._counter:06d}",
            author=author,
            embedding=embedding,
            verified=self.verify_lag == 0,
            tick=tick,
            content=content,
        )
        self._counter += 1
        self.entries.append(entry)
        return entry

    def advance_verification(self, tick: int) -> None:
        # The verified set only grows.
        for e in self.entries:
            if not e.verified and tick - e.tick >= self.verify_lag:
                e.verified = True

    def get(self, entry_id: str) -> InfoEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise EconomicsError(f"no info entry {entry_id}")


def ingestion_fee(r: float, policy: EconPolicy) -> int:
    """Redundancy-priced write fee: flat floor up to r0, linear to the cap."""
    if not 0.0 <= r <= 1.0:
        raise EconomicsError(f"redundancy {r} outside [0, 1]")
    scaled = (r - policy.r0) / (1.0 - policy.r0)
    scaled = min(1.0, max(0.0, scaled))
    return round_half_up(policy.f_min + (policy.f_max - policy.f_min) * scaled)


def message_tax(sender_window_count: int, policy: EconPolicy, surge_factor: int = 1) -> int:
    """Escalating per-message tax on the sender's recent volume."""
    if sender_window_count < 0:
        raise EconomicsError("window count must be non-negative")
    over = max(0, sender_window_count - policy.m_free)
    return round_half_up(policy.tau_base * surge_factor * (1.0 + policy.beta * over))


def premium(intended_class: int, effective_reputation: float, policy: EconPolicy) -> int:
    """Risk-based per-epoch insurance premium."""
    return round_half_up(
        policy.premium_base
        * (1.0 + policy.premium_slope * intended_class)
        * (2.0 - effective_reputation)
    )


@dataclass
class SurgeState:
    """Emergency multiplier on the interaction tax; reverts exactly at expiry."""

    factor: int = 1
    until_tick: int = -1

    def activate(self, factor: int, duration: int, tick: int) -> None:
        if factor < 1:
            raise EconomicsError("surge factor must be >= 1")
        self.factor = factor
        self.until_tick = tick + duration

    def effective_factor(self, tick: int) -> int:
        if self.factor > 1 and tick >= self.until_tick:
            self.factor = 1
            self.until_tick = -1
        return self.factor


class MessageMeter:
    """Rolling per-sender message counts over the tax window."""

    def __init__(self, window: int) -> None:
        self.window = window
        self._per_tick: dict[bytes, dict[int, int]] = {}

    def record(self, sender: bytes, tick: int) -> None:
        ticks = self._per_tick.setdefault(sender, {})
        ticks[tick] = ticks.get(tick, 0) + 1

    def window_count(self, sender: bytes, tick: int) -> int:
        ticks = self._per_tick.get(sender)
        if not ticks:
            return 0
        lo = tick - self.window + 1
        return sum(n for t, n in ticks.items() if lo <= t <= tick)

    def prune(self, tick: int) -> None:
        lo = tick - self.window + 1
        for ticks in self._per_tick.values():
            stale = [t for t in ticks if t < lo]
            for t in stale:
                del ticks[t]
