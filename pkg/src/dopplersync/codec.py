"""Binary LDPC code: alist I/O, systematic encoding and sum-product decoding.

Bit/LLR convention used throughout the package: ``llr = ln P(bit=0) / P(bit=1)``,
so a positive LLR favours bit 0 (BPSK symbol +1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels

LLR_CLIP = 38.0
DEFAULT_MAX_ITERS = 50

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_ALIST = os.path.join(_DATA_DIR, "peg_regular36_504x252.alist")


class AlistError(ValueError):
    """Malformed alist file. ``line`` is 1-based (0 when the file is truncated)."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Sparse GF(2) parity-check matrix stored as 0-based adjacency lists."""

    n_cols: int
    n_rows: int
    col_adj: tuple[tuple[int, ...], ...]
    row_adj: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.col_adj) != self.n_cols or len(self.row_adj) != self.n_rows:
            raise ValueError("adjacency list count does not match dimensions")
        for j, rows in enumerate(self.col_adj):
            if len(set(rows)) != len(rows):
                raise ValueError(f"duplicate edge in column {j}")
            if any(r < 0 or r >= self.n_rows for r in rows):
                raise ValueError(f"row index out of range in column {j}")
        for i, cols in enumerate(self.row_adj):
            if len(set(cols)) != len(cols):
                raise ValueError(f"duplicate edge in row {i}")
            if any(c < 0 or c >= self.n_cols for c in cols):
                raise ValueError(f"column index out of range in row {i}")
        from_cols = sorted((r, j) for j, rows in enumerate(self.col_adj) for r in rows)
        from_rows = sorted((i, c) for i, cols in enumerate(self.row_adj) for c in cols)
        if from_cols != from_rows:
            raise ValueError("column and row adjacency lists disagree")

    @classmethod
    def from_dense(cls, H) -> "ParityCheckMatrix":
        H = np.asarray(H) & 1
        m, n = H.shape
        col_adj = tuple(tuple(int(i) for i in np.flatnonzero(H[:, j])) for j in range(n))
        row_adj = tuple(tuple(int(j) for j in np.flatnonzero(H[i, :])) for i in range(m))
        return cls(n, m, col_adj, row_adj)

    def to_dense(self) -> np.ndarray:
        H = np.zeros((self.n_rows, self.n_cols), dtype=np.uint8)
        for i, cols in enumerate(self.row_adj):
            H[i, list(cols)] = 1
        return H

    @property
    def n_edges(self) -> int:
        return sum(len(r) for r in self.row_adj)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(row_ptr, edge_col): edges grouped by check, as used by the decoder kernels."""
        row_ptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        row_ptr[1:] = np.cumsum([len(r) for r in self.row_adj])
        edge_col = np.fromiter(
            (c for cols in self.row_adj for c in cols), dtype=np.int64, count=int(row_ptr[-1])
        )
        return row_ptr, edge_col

    @cached_property
    def encoder(self) -> "SystematicEncoder":
        return SystematicEncoder.from_matrix(self)

    @property
    def rank(self) -> int:
        return self.n_cols - self.encoder.k

    @property
    def k(self) -> int:
        return self.encoder.k

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64) & 1
        row_ptr, edge_col = self.csr
        return np.add.reduceat(bits[edge_col], row_ptr[:-1]) & 1 if self.n_rows else np.zeros(0, int)

    def is_codeword(self, bits) -> bool:
        return not np.any(self.syndrome(bits))


@dataclass(frozen=True, eq=False)
class SystematicEncoder:
    """Encoder from the reduced row-echelon form of H.

    ``parity = parity_map @ info (mod 2)``; the codeword carries the info bits at
    ``info_cols`` and the parity bits at ``parity_cols``.
    """

    n: int
    info_cols: np.ndarray
    parity_cols: np.ndarray
    parity_map: np.ndarray

    @property
    def k(self) -> int:
        return len(self.info_cols)

    @property
    def permutation(self) -> np.ndarray:
        return np.concatenate([self.parity_cols, self.info_cols])

    @classmethod
    def from_matrix(cls, H: ParityCheckMatrix) -> "SystematicEncoder":
        A = H.to_dense().astype(bool)
        m, n = A.shape
        pivots = []
        row = 0
        for col in range(n):
            if row == m:
                break
            hits = np.flatnonzero(A[row:, col])
            if hits.size == 0:
                continue
            p = row + hits[0]
            if p != row:
                A[[row, p]] = A[[p, row]]
            others = np.flatnonzero(A[:, col])
            others = others[others != row]
            A[others] ^= A[row]
            pivots.append(col)
            row += 1
        rank = len(pivots)
        parity_cols = np.asarray(pivots, dtype=np.int64)
        info_cols = np.setdiff1d(np.arange(n), parity_cols)
        parity_map = A[:rank][:, info_cols].astype(np.uint8)
        return cls(n, info_cols, parity_cols, parity_map)


@dataclass
class BitBeliefs:
    """Decoder output: posterior LLRs, extrinsic LLRs and convergence info."""

    llr: np.ndarray
    extrinsic: np.ndarray
    iterations: int
    converged: bool

    @property
    def hard(self) -> np.ndarray:
        return (self.llr < 0).astype(np.uint8)


def encode(info_bits, H: ParityCheckMatrix) -> np.ndarray:
    enc = H.encoder
    d = np.asarray(info_bits, dtype=np.int64)
    if d.shape != (enc.k,):
        raise ValueError(
            f"expected {enc.k} information bits (effective K = N_c - rank), got {d.size}"
        )
    if np.any((d != 0) & (d != 1)):
        raise ValueError("information bits must be 0/1")
    c = np.zeros(enc.n, dtype=np.uint8)
    c[enc.info_cols] = d
    c[enc.parity_cols] = (enc.parity_map.astype(np.int64) @ d) & 1
    return c


def extract_info(codeword, H: ParityCheckMatrix) -> np.ndarray:
    return np.asarray(codeword)[H.encoder.info_cols]


def decode(channel_llrs, H: ParityCheckMatrix, max_iters: int = DEFAULT_MAX_ITERS) -> BitBeliefs:
    """Flooding sum-product decoding with the tanh rule and early exit on a zero syndrome."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    llr = np.clip(np.asarray(channel_llrs, dtype=np.float64), -LLR_CLIP, LLR_CLIP)
    if llr.shape != (H.n_cols,):
        raise ValueError(f"expected {H.n_cols} LLRs, got shape {llr.shape}")
    if not np.all(np.isfinite(llr)):
        raise ValueError("channel LLRs must be finite")
    row_ptr, edge_col = H.csr
    post, iters, ok = kernels.bp_decode(llr, row_ptr, edge_col, int(max_iters), LLR_CLIP)
    return BitBeliefs(post, post - llr, int(iters), bool(ok))


# ---------------------------------------------------------------- alist I/O


def _ints(text: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise AlistError(f"non-integer token ({exc})", lineno) from None


def load_alist(path) -> ParityCheckMatrix:
    """Read a MacKay-layout alist file (1-based indices, zero padding allowed)."""
    with open(path) as fh:
        lines = [(i + 1, ln) for i, ln in enumerate(fh) if ln.strip()]
    pos = 0

    def take(what: str) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            raise AlistError(f"truncated file: missing {what}", 0)
        lineno, text = lines[pos]
        pos += 1
        return lineno, _ints(text, lineno)

    lineno, dims = take("dimensions")
    if len(dims) != 2 or min(dims) <= 0:
        raise AlistError("header must hold two positive integers N M", lineno)
    n, m = dims
    lineno, maxdeg = take("maximum degrees")
    if len(maxdeg) != 2 or min(maxdeg) <= 0:
        raise AlistError("second line must hold the maximum column and row degrees", lineno)
    max_col, max_row = maxdeg
    lineno, col_deg = take("column degrees")
    if len(col_deg) != n or any(d < 0 or d > max_col for d in col_deg):
        raise AlistError(f"expected {n} column degrees in [0, {max_col}]", lineno)
    lineno, row_deg = take("row degrees")
    if len(row_deg) != m or any(d < 0 or d > max_row for d in row_deg):
        raise AlistError(f"expected {m} row degrees in [0, {max_row}]", lineno)

    def read_lists(count, degrees, limit, what):
        out = []
        for idx in range(count):
            lineno, vals = take(f"{what} list {idx + 1}")
            d = degrees[idx]
            if len(vals) < d:
                raise AlistError(f"{what} {idx + 1} lists {len(vals)} entries, degree is {d}", lineno)
            used, pad = vals[:d], vals[d:]
            for v in used:
                if v < 1 or v > limit:
                    raise AlistError(f"{what} {idx + 1}: index {v} outside 1..{limit}", lineno)
            if any(v != 0 for v in pad):
                raise AlistError(f"{what} {idx + 1}: more entries than its degree {d}", lineno)
            if len(set(used)) != d:
                raise AlistError(f"{what} {idx + 1}: duplicate index", lineno)
            out.append(tuple(v - 1 for v in used))
        return tuple(out)

    col_adj = read_lists(n, col_deg, m, "column")
    row_adj = read_lists(m, row_deg, n, "row")
    try:
        return ParityCheckMatrix(n, m, col_adj, row_adj)
    except ValueError as exc:
        raise AlistError(str(exc), lines[-1][0]) from None


def write_alist(H: ParityCheckMatrix, path) -> None:
    col_deg = [len(c) for c in H.col_adj]
    row_deg = [len(r) for r in H.row_adj]
    mc, mr = max(col_deg), max(row_deg)
    out = [f"{H.n_cols} {H.n_rows}", f"{mc} {mr}", " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    for rows in H.col_adj:
        out.append(" ".join(str(r + 1) for r in rows) + " 0" * (mc - len(rows)))
    for cols in H.row_adj:
        out.append(" ".join(str(c + 1) for c in cols) + " 0" * (mr - len(cols)))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------- PEG construction


def peg_regular(n_cols: int, n_rows: int, var_degree: int, seed: int = 0) -> ParityCheckMatrix:
    """Progressive edge-growth construction of a (var_degree, check_degree)-regular code.

    Each new edge of a variable node goes to a check that is unreachable (or, failing
    that, reached last) in the current Tanner-graph tree of that node, among checks of
    minimum current degree that still have free sockets.
    """
    total = n_cols * var_degree
    if total % n_rows:
        raise ValueError("n_cols * var_degree must be divisible by n_rows for a regular code")
    check_cap = total // n_rows
    rng = np.random.default_rng(seed)
    col_adj: list[list[int]] = [[] for _ in range(n_cols)]
    row_adj: list[list[int]] = [[] for _ in range(n_rows)]
    deg = np.zeros(n_rows, dtype=np.int64)

    def pick(candidates: np.ndarray) -> int:
        d = deg[candidates]
        best = candidates[d == d.min()]
        return int(best[rng.integers(best.size)])

    for j in range(n_cols):
        for e in range(var_degree):
            open_checks = np.flatnonzero(deg < check_cap)
            open_checks = open_checks[~np.isin(open_checks, col_adj[j])]
            if e == 0:
                c = pick(open_checks)
            else:
                reached = np.zeros(n_rows, dtype=bool)
                frontier = list(col_adj[j])
                reached[frontier] = True
                seen_vars = {j}
                prev = reached.copy()
                while True:
                    nxt = []
                    for chk in frontier:
                        for v in row_adj[chk]:
                            if v in seen_vars:
                                continue
                            seen_vars.add(v)
                            for c2 in col_adj[v]:
                                if not reached[c2]:
                                    reached[c2] = True
                                    nxt.append(c2)
                    cand = open_checks[~reached[open_checks]]
                    if not nxt or cand.size == 0:
                        break
                    prev = reached.copy()
                    frontier = nxt
                cand = open_checks[~reached[open_checks]]
                if cand.size == 0:
                    # every open check is reachable: take those reached at the last level
                    cand = open_checks[~prev[open_checks]]
                    if cand.size == 0:
                        cand = open_checks
                c = pick(cand)
            col_adj[j].append(c)
            row_adj[c].append(j)
            deg[c] += 1
    return ParityCheckMatrix(
        n_cols,
        n_rows,
        tuple(tuple(sorted(c)) for c in col_adj),
        tuple(tuple(sorted(r)) for r in row_adj),
    )


def girth(H: ParityCheckMatrix) -> int:
    """Length of the shortest Tanner-graph cycle (0 if acyclic)."""
    best = 0
    n = H.n_cols
    for start in range(n):
        # BFS over a bipartite graph: variable nodes 0..n-1, checks n..n+m-1
        dist = {start: 0}
        parent = {start: -1}
        queue = [start]
        qi = 0
        while qi < len(queue):
            u = queue[qi]
            qi += 1
            nbrs: Sequence[int] = (
                [n + c for c in H.col_adj[u]] if u < n else list(H.row_adj[u - n])
            )
            for w in nbrs:
                if w == parent[u]:
                    continue
                if w in dist:
                    cyc = dist[u] + dist[w] + 1
                    if best == 0 or cyc < best:
                        best = cyc
                else:
                    dist[w] = dist[u] + 1
                    parent[w] = u
                    queue.append(w)
    return best


def load_code(path: str | None = None) -> tuple[ParityCheckMatrix, bool]:
    """Load the configured code; returns (H, substituted).

    ``substituted`` is True when the shipped PEG-synthesized regular (3,6) code is
    used in place of the reference PEGReg252x504 matrix.
    """
    if path:
        return load_alist(path), False
    return load_alist(DEFAULT_ALIST), True
