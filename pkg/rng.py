"""
Counter-based random streams for selfgate
Every random draw in the project goes through an RngStream so runs replay exactly
"""

import hashlib
from typing import Any, Dict

import numpy as np


def _stream_key(seed: int, name: str) -> int:
    """Derive a 128-bit Philox key from a seed and a stream name"""
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class RngStream:
    """A named Philox stream: identical (seed, name, counter) gives identical draws"""

    def __init__(self, seed: int, name: str = "root", counter: int = 0):
        self.seed = int(seed)
        self.name = name
        self._bitgen = np.random.Philox(key=_stream_key(self.seed, name))
        if counter:
            self._bitgen.advance(int(counter))
        self.generator = np.random.Generator(self._bitgen)

    def substream(self, name: str) -> "RngStream":
        """Independent child stream; does not consume draws from this one"""
        return RngStream(self.seed, f"{self.name}/{name}")

    @property
    def counter(self) -> int:
        """Philox block counter (number of 4x64-bit blocks consumed)"""
        words = self._bitgen.state["state"]["counter"]
        return int(words[0]) | (int(words[1]) << 64)

    # Draw helpers

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, values: np.ndarray, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(values, size=size, replace=replace)

    def gumbel(self, size, clamp: float = 1e-12) -> np.ndarray:
        """Gumbel(0, 1) noise by inverse CDF of clamped uniforms"""
        u = np.clip(self.generator.uniform(0.0, 1.0, size=size), clamp, 1.0 - clamp)
        return -np.log(-np.log(u))

    def child_seed(self) -> int:
        """A 32-bit seed for libraries that take an integer seed (networkx)"""
        return int(self.generator.integers(0, 2**32 - 1))

    # Serialization

    def state_dict(self) -> Dict[str, Any]:
        """JSON-safe snapshot including the partially consumed output buffer"""
        raw = self._bitgen.state
        return {
            "seed": self.seed,
            "name": self.name,
            "bit_generator": {
                "state": {k: [int(x) for x in np.asarray(v).ravel()] for k, v in raw["state"].items()},
                "buffer": [int(x) for x in np.asarray(raw["buffer"]).ravel()],
                "buffer_pos": int(raw["buffer_pos"]),
                "has_uint32": int(raw["has_uint32"]),
                "uinteger": int(raw["uinteger"]),
            },
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "RngStream":
        stream = cls(state["seed"], state.get("name", "root"))
        saved = state.get("bit_generator")
        if saved:
            stream._bitgen.state = {
                "bit_generator": "Philox",
                "state": {k: np.asarray(v, dtype=np.uint64) for k, v in saved["state"].items()},
                "buffer": np.asarray(saved["buffer"], dtype=np.uint64),
                "buffer_pos": saved["buffer_pos"],
                "has_uint32": saved["has_uint32"],
                "uinteger": saved["uinteger"],
            }
        return stream

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, name={self.name!r}, counter={self.counter})"
