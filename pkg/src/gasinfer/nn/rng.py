"""SplitMix64: a tiny platform-independent 64-bit random stream."""

import math

import numpy as np
import numpy.typing as npt

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The SplitMix64 finalizer (a bijective 64-bit mixing function)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic generator; identical sequences on every platform."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int) -> npt.NDArray[np.float32]:
        values = [low + (high - low) * self.next_float() for _ in range(size)]
        return np.array(values, dtype=np.float32)

    def glorot(self, fan_out: int, fan_in: int) -> npt.NDArray[np.float32]:
        """A (fan_out x fan_in) matrix drawn from uniform(-s, s), s = sqrt(6/(fan_in+fan_out))."""
        scale = math.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(-scale, scale, fan_out * fan_in).reshape(fan_out, fan_in)
