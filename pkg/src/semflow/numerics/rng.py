"""Seeded randomness.

All stochastic draws in the package flow through `Rng`, a thin wrapper over
NumPy's PCG64 generator. PCG64 produces the same integer stream on every
platform, so a seed pins the exact draw sequence; float64 conversion is then
deterministic within one build. Derived streams (`derive`) are keyed off the
parent entropy so per-clip / per-run streams never overlap.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _as_key(k) -> int:
    """Map a derivation key to a stable 64-bit integer; strings are hashed."""
    if isinstance(k, str):
        return int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "little")
    return int(k)


class Rng:
    """Deterministic random stream with serializable state."""

    def __init__(self, seed: int, _keys: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.keys = tuple(_as_key(k) for k in _keys)
        ss = np.random.SeedSequence([self.seed, *self.keys])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, *keys) -> "Rng":
        """Independent child stream keyed by ints or strings (e.g. clip index)."""
        return Rng(self.seed, self.keys + tuple(_as_key(k) for k in keys))

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        return self.gen.standard_normal(shape) * std

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self.gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self.gen.choice(n, size=size, replace=replace)

    # State round-trips through JSON for exact training resume.
    def state(self) -> dict:
        st = self.gen.bit_generator.state
        return {
            "seed": self.seed,
            "keys": list(self.keys),
            "pcg_state": str(st["state"]["state"]),
            "pcg_inc": str(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @staticmethod
    def from_state(state: dict) -> "Rng":
        rng = Rng(state["seed"], tuple(state["keys"]))
        rng.gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(state["pcg_state"]), "inc": int(state["pcg_inc"])},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }
        return rng
