"""Monte Carlo BER/BLER measurement and codeword distance analysis."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from hiko.channel import awgn, llr_from_awgn, make_rng, modulate_bpsk, noise_sigma, normalize_power
from hiko.classical import dumer_decode, hard_decision
from hiko.codes import build_plotkin_tree, rm_encode
from hiko.ko import NeuralCodec

BER_HEADER = ("snr_db", "bits", "bit_errors", "blocks", "block_errors", "ber", "bler")
HIST_HEADER = ("bin_left", "bin_right", "count")
# Upper bound on channel symbols simulated per batch.
BATCH_SYMBOLS = 1 << 19


class ClassicalCodec:
    """RM encoding with BPSK and Dumer decoding, behind the same interface as NeuralCodec."""

    def __init__(self, m: int, r: int, first_order_leaves: bool = True) -> None:
        self.tree = build_plotkin_tree(m, r)
        self.first_order_leaves = first_order_leaves
        self.k = self.tree.k
        self.n = self.tree.n

    def encode(self, msg: np.ndarray) -> np.ndarray:
        return normalize_power(modulate_bpsk(rm_encode(self.tree, msg)))

    def decode_bits(self, llr: np.ndarray) -> np.ndarray:
        return dumer_decode(self.tree, llr, self.first_order_leaves)[0]


def decode_bits(codec, llr: np.ndarray) -> np.ndarray:
    if isinstance(codec, NeuralCodec):
        return hard_decision(codec.decode(llr))
    return codec.decode_bits(llr)


@dataclass
class BerPoint:
    snr_db: float
    bits_tested: int
    bit_errors: int
    blocks_tested: int
    block_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_tested

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks_tested

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(ber=self.ber, bler=self.bler)
        return d


def simulate_point(codec, snr_db: float, min_bits: int, min_errors: int, seed, convention: str = "esn0") -> BerPoint:
    """Simulate one SNR point until enough bits and errors are seen (or the cap is hit)."""
    rng = make_rng(seed)
    sigma = noise_sigma(snr_db, codec.k / codec.n, convention)
    blocks_per_batch = max(1, min(math.ceil(min_bits / codec.k), BATCH_SYMBOLS // codec.n))
    bits = errors = blocks = block_errors = 0
    cap = 100 * min_bits
    while bits < cap and (bits < min_bits or errors < min_errors):
        msg = rng.integers(0, 2, (blocks_per_batch, codec.k), dtype=np.uint8)
        y = awgn(codec.encode(msg), sigma, rng)
        wrong = decode_bits(codec, llr_from_awgn(y, sigma)) != msg
        bits += msg.size
        errors += int(wrong.sum())
        blocks += blocks_per_batch
        block_errors += int(wrong.any(axis=-1).sum())
    return BerPoint(float(snr_db), bits, errors, blocks, block_errors)


def ber_curve(
    codec,
    snrs,
    min_bits: int = 10**5,
    min_errors: int = 100,
    seed: int = 0,
    convention: str = "esn0",
    workers: int = 1,
) -> list[BerPoint]:
    """BER/BLER at every SNR in ``snrs``.

    Each point draws from its own substream of ``seed``, so results do not
    depend on ``workers``.
    """
    snrs = list(snrs)
    if not snrs:
        raise ValueError("empty SNR list")
    if min_bits < 10**4:
        raise ValueError(f"min_bits must be at least 1e4, got {min_bits}")
    children = np.random.SeedSequence(seed).spawn(len(snrs))
    args = [(codec, s, min_bits, min_errors, child, convention) for s, child in zip(snrs, children)]
    if workers <= 1 or len(snrs) == 1:
        return [simulate_point(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(simulate_point, *zip(*args)))


# -- distance analysis ------------------------------------------------------


class MessageSampler:
    """Pairs of codewords for distinct random messages of a ``k``-bit encoder."""

    def __init__(self, k: int, encode) -> None:
        self.k = k
        self._encode = encode

    def pairs(self, n_pairs: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.k < 1:
            raise ValueError("a code with no message bits has no distinct codeword pairs")
        a = rng.integers(0, 2, (n_pairs, self.k), dtype=np.uint8)
        b = rng.integers(0, 2, (n_pairs, self.k), dtype=np.uint8)
        same = np.all(a == b, axis=-1)
        while same.any():
            b[same] = rng.integers(0, 2, (int(same.sum()), self.k), dtype=np.uint8)
            same = np.all(a == b, axis=-1)
        words = normalize_power(self._encode(np.concatenate([a, b])))
        return words[:n_pairs], words[n_pairs:]


def rm_sampler(m: int, r: int) -> MessageSampler:
    tree = build_plotkin_tree(m, r)
    return MessageSampler(tree.k, lambda msg: modulate_bpsk(rm_encode(tree, msg)))


def neural_sampler(codec: NeuralCodec, quantized: bool = False) -> MessageSampler:
    def encode(msg):
        x = codec.encode(msg)
        return quantize_codeword(x) if quantized else x

    return MessageSampler(codec.k, encode)


class GaussianCodebook:
    """``count`` i.i.d. standard-normal codewords of length ``n``, batch power-normalized."""

    def __init__(self, words: np.ndarray) -> None:
        self.words = words

    def pairs(self, n_pairs: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        count = len(self.words)
        i = rng.integers(0, count, n_pairs)
        j = (i + rng.integers(1, count, n_pairs)) % count
        return self.words[i], self.words[j]


def gaussian_codebook(n: int, count: int, rng: np.random.Generator) -> GaussianCodebook:
    if count < 2:
        raise ValueError("a codebook needs at least two codewords")
    return GaussianCodebook(normalize_power(rng.standard_normal((count, n))))


def quantize_codeword(x: np.ndarray) -> np.ndarray:
    """Map to +-1 by sign (zero goes to +1) and renormalize the batch."""
    return normalize_power(np.where(np.asarray(x) >= 0, 1.0, -1.0))


@dataclass
class DistanceHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    n_pairs: int
    mean: float
    std: float
    distances: np.ndarray = field(repr=False, default=None)

    def stats(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "mean": self.mean,
            "std": self.std,
            "min": float(self.distances.min()),
            "max": float(self.distances.max()),
            "distinct": int(np.unique(self.distances).size),
            "bins": int(self.counts.size),
        }


def pairwise_distances(sampler, n_pairs: int, rng: np.random.Generator, bins: int = 64) -> DistanceHistogram:
    """Euclidean distances of ``n_pairs`` sampled codeword pairs, binned over [min, max]."""
    if n_pairs < 1000:
        raise ValueError(f"n_pairs must be at least 1000, got {n_pairs}")
    a, b = sampler.pairs(n_pairs, rng)
    dist = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    lo, hi = float(dist.min()), float(dist.max())
    if hi <= 0.0:
        raise ValueError("degenerate sampler: every sampled pair coincides")
    if hi == lo:
        edges = np.array([lo, lo + 1.0]) if bins == 1 else np.linspace(lo, lo + 1.0, bins + 1)
    else:
        edges = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(dist, bins=edges)
    return DistanceHistogram(edges, counts, n_pairs, float(dist.mean()), float(dist.std()), dist)


# -- writers -----------------------------------------------------------------


def ber_csv(points: list[BerPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BER_HEADER)
    for p in points:
        w.writerow([repr(p.snr_db), p.bits_tested, p.bit_errors, p.blocks_tested, p.block_errors, repr(p.ber), repr(p.bler)])
    return buf.getvalue()


def ber_json(points: list[BerPoint], extra: dict | None = None) -> str:
    doc = {"points": [p.as_dict() for p in points]}
    doc.update(extra or {})
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def histogram_csv(hist: DistanceHistogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HIST_HEADER)
    for left, right, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
        w.writerow([repr(float(left)), repr(float(right)), int(count)])
    return buf.getvalue()


def histogram_json(hist: DistanceHistogram, extra: dict | None = None) -> str:
    doc = {"stats": hist.stats()}
    doc.update(extra or {})
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
