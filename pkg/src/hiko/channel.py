"""BPSK over AWGN: modulation, power normalization, noise and channel LLRs.

``snr_to_sigma`` treats SNR as Eb/N0 in dB, so the noise level depends on the
code rate: sigma = sqrt(1 / (2 * rate * 10^(snr_db / 10))). Passing rate 1
gives the Es/N0 reading, which is what ``noise_sigma`` uses for the
``"esn0"`` convention (the default for training and evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


CONVENTIONS = ("esn0", "ebn0")


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    rate: float
    seed: int = 0
    convention: str = "ebn0"

    @property
    def sigma(self) -> float:
        return noise_sigma(self.snr_db, self.rate, self.convention)


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based (Philox) generator; substreams come from ``SeedSequence.spawn``."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed: int | np.random.SeedSequence, count: int) -> list[np.random.Generator]:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return [make_rng(child) for child in seed.spawn(count)]


def modulate_bpsk(bits: np.ndarray) -> np.ndarray:
    """Map bit 0 to +1.0 and bit 1 to -1.0."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def normalize_power(batch: np.ndarray) -> np.ndarray:
    """Scale the whole batch by one factor so its mean squared symbol is 1."""
    batch = np.asarray(batch, dtype=np.float64)
    power = np.mean(batch**2)
    if not power > 0.0:
        raise ValueError("cannot normalize the power of an all-zero batch")
    return batch / np.sqrt(power)


def normalize_power_backward(batch: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of ``normalize_power`` with respect to its input."""
    count = batch.size
    scale = np.sqrt(np.mean(batch**2))
    return grad_out / scale - batch * np.sum(grad_out * batch) / (scale**3 * count)


def snr_to_sigma(snr_db: float, rate: float) -> float:
    """Noise standard deviation per real dimension for an Eb/N0 value in dB."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return float(np.sqrt(1.0 / (2.0 * rate * 10.0 ** (snr_db / 10.0))))


def noise_sigma(snr_db: float, rate: float, convention: str = "esn0") -> float:
    """Noise level for ``snr_db`` read as Es/N0 (``"esn0"``) or Eb/N0 (``"ebn0"``)."""
    if convention == "esn0":
        return snr_to_sigma(snr_db, 1.0)
    if convention == "ebn0":
        return snr_to_sigma(snr_db, rate)
    raise ValueError(f"unknown SNR convention {convention!r}, expected one of {CONVENTIONS}")


def awgn(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.standard_normal(x.shape)


def llr_from_awgn(y: np.ndarray, sigma: float) -> np.ndarray:
    """Channel LLRs log P(bit=0 | y) / P(bit=1 | y) = 2 y / sigma^2."""
    return 2.0 * np.asarray(y, dtype=np.float64) / sigma**2
