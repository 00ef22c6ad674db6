"""BPSK mapping and burst assembly: preamble followed by the coded payload."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# bit 0 -> +1, bit 1 -> -1; index i of a symbol PMF refers to ALPHABET[i]
ALPHABET = np.array([1.0 + 0.0j, -1.0 + 0.0j])
DEFAULT_PREAMBLE_SEED = 0x5EED


@dataclass(frozen=True)
class FrameConfig:
    n_preamble: int = 30
    n_data: int = 504
    bits_per_symbol: int = 1

    def __post_init__(self):
        if self.bits_per_symbol != 1:
            raise NotImplementedError("only BPSK (M=2) is implemented")
        if self.n_preamble < 0 or self.n_data < 0:
            raise ValueError("lengths must be non-negative")

    @property
    def alphabet_size(self) -> int:
        return 2**self.bits_per_symbol

    @property
    def length(self) -> int:
        return self.n_preamble + self.n_data

    @property
    def n_coded_bits(self) -> int:
        return self.n_data * self.bits_per_symbol


@dataclass(frozen=True, eq=False)
class Frame:
    symbols: np.ndarray
    preamble_mask: np.ndarray
    bits: np.ndarray

    @property
    def length(self) -> int:
        return self.symbols.size

    @property
    def n_preamble(self) -> int:
        return int(self.preamble_mask.sum())

    def symbol_indices(self) -> np.ndarray:
        """Alphabet index of every symbol (equal to the mapped bit for BPSK)."""
        return self.bits.astype(np.int64)


def modulate_bpsk(bits) -> np.ndarray:
    b = np.asarray(bits)
    if np.any((b != 0) & (b != 1)):
        raise ValueError("bits must be 0/1")
    return ALPHABET[b.astype(np.int64)]


def demap_bpsk(samples) -> np.ndarray:
    return (np.real(samples) < 0).astype(np.uint8)


def generate_preamble(seed: int = DEFAULT_PREAMBLE_SEED, n: int = 30) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=n, dtype=np.uint8)


def build_frame(preamble_bits, data_bits, cfg: FrameConfig) -> Frame:
    pre = np.asarray(preamble_bits, dtype=np.uint8).ravel()
    data = np.asarray(data_bits, dtype=np.uint8).ravel()
    if pre.size != cfg.n_preamble:
        raise ValueError(f"preamble has {pre.size} bits, config expects {cfg.n_preamble}")
    if data.size != cfg.n_coded_bits:
        raise ValueError(f"payload has {data.size} bits, config expects {cfg.n_coded_bits}")
    bits = np.concatenate([pre, data])
    mask = np.zeros(cfg.length, dtype=bool)
    mask[: cfg.n_preamble] = True
    return Frame(modulate_bpsk(bits), mask, bits)
