"""J and IS for every k-factor subset of a factor zoo.

Sufficient statistics are accumulated over T once. For a subset ``s`` with
``S_ff = S_FF[s, s]`` and ``S_rf = S_RF[:, s]``,

    beta = S_rf S_ff^{-1},   Q = S_ff / T,   Omega = (S_RR - S_rf S_ff^{-1} S_rf') / T.

With ``W = S_RR^{-1}`` and ``C = S_ff - S_rf' W S_rf`` the Woodbury identity gives

    R_bar' Omega^{-1} R_bar = T (r + h' C^{-1} h)
    beta'  Omega^{-1} R_bar = T C^{-1} h
    beta'  Omega^{-1} beta  = T S_ff^{-1} G C^{-1}

where ``r = R_bar' W R_bar``, ``h = S_rf' W R_bar`` and ``G = S_rf' W S_rf`` are
sub-blocks of matrices computed once. Each subset then costs O(k^3).

Subsets are enumerated in colexicographic order; a shard is a range of ranks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from premia._parallel import pmap
from premia.chi2 import chi2_sf_array
from premia.cue_rank import diagnostics
from premia.errors import InputError, PremiaError
from premia.first_pass import estimate_first_pass
from premia.panel_io import AlignedDataset, ZeroBetaMode, differencing_matrix

__all__ = ["MomentStore", "precompute_moments", "n_subsets", "unrank", "rank",
           "iter_subsets", "scan", "scan_all", "audit", "AuditReport", "shard_range",
           "ShardWriter", "write_shard", "read_shard", "ScanSummary", "summarize",
           "merge_summaries", "record_dtype", "FLAG_MISSPECIFIED", "FLAG_WEAK",
           "FLAG_DEGENERATE", "MAGIC", "FORMAT_VERSION"]

FLAG_MISSPECIFIED = 1
FLAG_WEAK = 2
FLAG_DEGENERATE = 4
MAGIC = b"ZSCN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")       # 16 bytes
DEGENERATE_TOL = 1e-12
LEVEL = 0.05


def record_dtype(k: int) -> np.dtype:
    return np.dtype([("subset", "<u4", (k,)), ("j", "<f8"), ("is_", "<f8"),
                     ("p_j", "<f8"), ("p_is", "<f8"), ("flags", "u1")])


@dataclass(frozen=True)
class MomentStore:
    """Read-only sufficient statistics of a (returns, factor zoo) panel."""

    T: int
    rbar: np.ndarray
    s_rf: np.ndarray
    s_ff: np.ndarray
    s_rr: np.ndarray
    zero_beta_mode: ZeroBetaMode
    factor_names: tuple[str, ...]
    w: np.ndarray = field(repr=False)      # S_RR^{-1}
    g: np.ndarray = field(repr=False)      # S_RF' W S_RF
    h: np.ndarray = field(repr=False)      # S_RF' W R_bar
    r: float = 0.0
    raw: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        """Assets entering the statistics (one fewer after differencing)."""
        return self.rbar.shape[0]

    @property
    def M(self) -> int:
        return self.s_ff.shape[0]

    def first_pass(self, subset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(beta, Omega, Q) of one subset, assembled from the store."""
        s = np.asarray(subset, dtype=int)
        sff = self.s_ff[np.ix_(s, s)]
        srf = self.s_rf[:, s]
        beta = np.linalg.solve(sff, srf.T).T
        omega = (self.s_rr - beta @ srf.T) / self.T
        return beta, 0.5 * (omega + omega.T), sff / self.T


def precompute_moments(returns, factors=None, zero_beta_mode="intercept_estimated",
                       factor_names=None) -> MomentStore:
    """Accumulate sums of cross-products once for all subsets.

    ``returns`` is a T x N array (or an :class:`AlignedDataset`, whose factors
    and zero-beta mode are then used) and ``factors`` the T x M zoo.
    """
    if isinstance(returns, AlignedDataset):
        ds = returns
        R0, F = ds.returns, ds.factors if factors is None else np.asarray(factors, float)
        mode = ds.zero_beta_mode if zero_beta_mode is None else ZeroBetaMode.parse(zero_beta_mode)
        factor_names = factor_names or (ds.factor_names if factors is None else None)
    else:
        R0 = np.asarray(returns, dtype=float)
        F = np.asarray(factors, dtype=float)
        mode = ZeroBetaMode.parse(zero_beta_mode)
    if F.ndim == 1:
        F = F[:, None]
    if R0.ndim != 2 or F.shape[0] != R0.shape[0]:
        raise InputError("returns and factors must be T x N and T x M with the same T")
    if not (np.all(np.isfinite(R0)) and np.all(np.isfinite(F))):
        raise InputError("non-finite values in returns or factors")
    T = R0.shape[0]
    M = F.shape[1]
    factor_names = tuple(factor_names) if factor_names else tuple(f"F{i + 1}" for i in range(M))
    R = R0 @ differencing_matrix(R0.shape[1]).T if mode is ZeroBetaMode.INTERCEPT_ESTIMATED else R0
    rbar = R.mean(axis=0)
    Rc = R - rbar
    Fc = F - F.mean(axis=0)
    s_rr = Rc.T @ Rc
    s_rr = 0.5 * (s_rr + s_rr.T)
    s_ff = Fc.T @ Fc
    s_ff = 0.5 * (s_ff + s_ff.T)
    s_rf = Rc.T @ Fc
    eig = np.linalg.eigvalsh(s_rr)
    if eig[0] <= eig[-1] * DEGENERATE_TOL:
        raise InputError("return cross-product matrix is singular: need T > N and non-redundant assets")
    w = np.linalg.inv(s_rr)
    w = 0.5 * (w + w.T)
    wr = w @ s_rf
    g = s_rf.T @ wr
    return MomentStore(T=T, rbar=rbar, s_rf=s_rf, s_ff=s_ff, s_rr=s_rr, zero_beta_mode=mode,
                       factor_names=factor_names, w=w, g=0.5 * (g + g.T), h=wr.T @ rbar,
                       r=float(rbar @ w @ rbar), raw=(R0, F))


# ---------------------------------------------------------------- enumeration


def n_subsets(M: int, k: int) -> int:
    return math.comb(M, k)


def _binom_table(M: int, k: int) -> np.ndarray:
    if n_subsets(M, k) >= 2 ** 63:
        raise InputError("subset count overflows 64-bit ranks")
    return np.array([[math.comb(c, i) for i in range(k + 1)] for c in range(M + 1)], dtype=np.int64)


def unrank(ranks, M: int, k: int) -> np.ndarray:
    """Subsets (rows, ascending) with the given colexicographic ranks."""
    ranks = np.atleast_1d(np.asarray(ranks, dtype=np.int64)).copy()
    if ranks.size and (ranks.min() < 0 or ranks.max() >= n_subsets(M, k)):
        raise InputError("rank out of range")
    table = _binom_table(M, k)
    out = np.empty((ranks.size, k), dtype=np.int64)
    for i in range(k, 0, -1):
        # largest c with C(c, i) <= rank
        c = np.searchsorted(table[:, i], ranks, side="right") - 1
        out[:, i - 1] = c
        ranks -= table[c, i]
    return out


def rank(subset) -> int:
    return sum(math.comb(int(c), i + 1) for i, c in enumerate(sorted(subset)))


def shard_range(count: int, shard: int, n_shards: int) -> tuple[int, int]:
    if not 0 <= shard < n_shards:
        raise InputError(f"shard index {shard} outside 0..{n_shards - 1}")
    return count * shard // n_shards, count * (shard + 1) // n_shards


def iter_subsets(M: int, k: int, start: int = 0, stop: int | None = None,
                 batch: int = 8192) -> Iterator[np.ndarray]:
    stop = n_subsets(M, k) if stop is None else stop
    for lo in range(start, stop, batch):
        yield unrank(np.arange(lo, min(lo + batch, stop)), M, k)


# ---------------------------------------------------------------- statistics


def _smallest_roots(Mx: np.ndarray, D: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(D)
    Li = np.linalg.inv(L)
    C = Li @ Mx @ np.swapaxes(Li, -1, -2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    return np.linalg.eigvalsh(C)[..., 0]


def _batch_stats(store: MomentStore, subsets: np.ndarray) -> tuple[np.ndarray, ...]:
    B, k = subsets.shape
    T = store.T
    ii = subsets[:, :, None]
    jj = subsets[:, None, :]
    sff = store.s_ff[ii, jj]
    G = store.g[ii, jj]
    h = store.h[subsets]
    C = sff - G
    # Omega is singular exactly when C is; compare C with S_ff (dimensionless)
    ev_ff = np.linalg.eigvalsh(sff)
    bad = ev_ff[:, 0] <= ev_ff[:, -1] * DEGENERATE_TOL
    safe_ff = np.where(bad[:, None, None], np.eye(k), sff)
    Lf = np.linalg.cholesky(safe_ff)
    Lfi = np.linalg.inv(Lf)
    rel = np.linalg.eigvalsh(Lfi @ C @ np.swapaxes(Lfi, 1, 2))
    bad |= rel[:, 0] <= DEGENERATE_TOL
    C = np.where(bad[:, None, None], np.eye(k), C)
    sff = safe_ff
    Ci_h = np.linalg.solve(C, h[:, :, None])[:, :, 0]
    m00 = store.r + np.einsum("bk,bk->b", h, Ci_h)
    m01 = Ci_h
    sff_inv = np.linalg.inv(sff)
    m11 = sff_inv @ G @ np.linalg.inv(C)
    m11 = 0.5 * (m11 + np.swapaxes(m11, 1, 2))
    Mx = np.empty((B, k + 1, k + 1))
    Mx[:, 0, 0] = m00
    Mx[:, 0, 1:] = m01
    Mx[:, 1:, 0] = m01
    Mx[:, 1:, 1:] = m11
    D = np.zeros_like(Mx)
    # M and D are both stored divided by T, which leaves the roots unchanged
    D[:, 0, 0] = 1.0 / T
    D[:, 1:, 1:] = 0.5 * (sff_inv + np.swapaxes(sff_inv, 1, 2))
    j = T * np.maximum(_smallest_roots(Mx, D), 0.0)
    is_ = T * np.maximum(_smallest_roots(Mx[:, 1:, 1:], D[:, 1:, 1:]), 0.0)
    j[bad] = np.nan
    is_[bad] = np.nan
    return j, is_, bad


def _records(store: MomentStore, subsets: np.ndarray) -> np.ndarray:
    k = subsets.shape[1]
    j, is_, bad = _batch_stats(store, subsets)
    df_j = store.N - k
    rec = np.zeros(len(subsets), dtype=record_dtype(k))
    rec["subset"] = subsets
    rec["j"] = j
    rec["is_"] = is_
    rec["p_j"] = chi2_sf_array(j, df_j)
    rec["p_is"] = chi2_sf_array(is_, df_j + 1)
    flags = np.zeros(len(subsets), dtype=np.uint8)
    flags[rec["p_j"] <= LEVEL] |= FLAG_MISSPECIFIED
    flags[rec["p_is"] > LEVEL] |= FLAG_WEAK
    flags[bad] = FLAG_DEGENERATE
    rec["flags"] = flags
    return rec


def _check_k(store: MomentStore, k: int) -> None:
    if not 1 <= k <= min(store.M, store.N - 1):
        raise InputError(f"k must lie in 1..{min(store.M, store.N - 1)} (M={store.M}, N={store.N})")


def scan(store: MomentStore, k: int, start: int = 0, stop: int | None = None,
         batch: int = 4096, workers: int | None = None) -> Iterator[np.ndarray]:
    """Stream record arrays for ranks ``[start, stop)`` in colexicographic order."""
    _check_k(store, k)
    stop = n_subsets(store.M, k) if stop is None else stop
    starts = list(range(start, stop, batch))
    group = max(1, workers or 1) * 4
    for g0 in range(0, len(starts), group):
        chunk = starts[g0:g0 + group]
        yield from pmap(lambda lo: _records(store, unrank(np.arange(lo, min(lo + batch, stop)),
                                                            store.M, k)), chunk, workers)


def scan_all(store: MomentStore, k: int, **kw) -> np.ndarray:
    parts = list(scan(store, k, **kw))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=record_dtype(k))


# ---------------------------------------------------------------- audit


@dataclass(frozen=True)
class AuditReport:
    n_audited: int
    max_abs_diff_j: float
    max_abs_diff_is: float
    n_degenerate_mismatch: int
    ranks: np.ndarray

    @property
    def max_abs_diff(self) -> float:
        return max(self.max_abs_diff_j, self.max_abs_diff_is)

    def to_dict(self) -> dict:
        return {"n_audited": self.n_audited, "max_abs_diff_j": self.max_abs_diff_j,
                "max_abs_diff_is": self.max_abs_diff_is,
                "n_degenerate_mismatch": self.n_degenerate_mismatch}


def audit(store: MomentStore, k: int, n: int = 1000, seed: int = 0,
          start: int = 0, stop: int | None = None) -> AuditReport:
    """Recompute random subsets from the raw panel through the one-model path."""
    if store.raw is None:
        raise InputError("audit needs the raw panels attached to the moment store")
    _check_k(store, k)
    stop = n_subsets(store.M, k) if stop is None else stop
    count = stop - start
    rng = np.random.default_rng(seed)
    n = min(n, count)
    ranks = np.sort(start + rng.choice(count, size=n, replace=False)) if n else np.zeros(0, int)
    subsets = unrank(ranks, store.M, k)
    rec = _records(store, subsets)
    R0, F = store.raw
    dj = dis = 0.0
    mismatch = 0
    for row, s in zip(rec, subsets):
        try:
            sliced = AlignedDataset.from_arrays(R0, F[:, s], zero_beta_mode=store.zero_beta_mode)
            d = diagnostics(estimate_first_pass(sliced))
        except PremiaError:
            mismatch += int(not row["flags"] & FLAG_DEGENERATE)
            continue
        if row["flags"] & FLAG_DEGENERATE:
            mismatch += 1
            continue
        dj = max(dj, abs(d.j_stat - row["j"]))
        dis = max(dis, abs(d.is_stat - row["is_"]))
    return AuditReport(n, dj, dis, mismatch, ranks)


# ---------------------------------------------------------------- shard files


class ShardWriter:
    """Append-only binary shard; the record count is written on close."""

    def __init__(self, path, k: int):
        self.path = Path(path)
        self.k = k
        self.count = 0
        self._f = open(self.path, "wb")
        self._f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, k, 0))

    def write(self, records: np.ndarray) -> None:
        if records.dtype != record_dtype(self.k):
            raise InputError("record layout does not match the shard's k")
        self._f.write(records.tobytes())
        self.count += len(records)

    def close(self) -> None:
        if self._f.closed:
            return
        self._f.seek(0)
        self._f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, self.k, self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_shard(path, records: Iterable[np.ndarray], k: int) -> int:
    with ShardWriter(path, k) as w:
        for r in records:
            w.write(r)
    return w.count


def read_shard(path) -> np.ndarray:
    """Memory-mapped records of a shard file (validated against its header)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"shard file not found: {path}")
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, k, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise InputError(f"{path}: not a zoo shard (bad magic)")
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported shard version {version}")
    dt = record_dtype(k)
    size = path.stat().st_size - _HEADER.size
    if size != count * dt.itemsize:
        raise InputError(f"{path}: header says {count} records but file holds {size / dt.itemsize:g}")
    if count == 0:
        return np.zeros(0, dtype=dt)
    return np.memmap(path, dtype=dt, mode="r", offset=_HEADER.size, shape=(count,))


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class ScanSummary:
    """Counts over a complete record set; percentages exclude degenerate subsets.

    The histogram uses the same edges on both axes so the J <= IS ordering
    shows up bin-wise (rows: J bins, columns: IS bins).
    """

    k: int
    n_models: int
    n_degenerate: int
    n_misspecified: int
    n_weak: int
    edges: np.ndarray
    hist2d: np.ndarray

    @property
    def n_valid(self) -> int:
        return self.n_models - self.n_degenerate

    @property
    def pct_misspecified(self) -> float:
        return 100.0 * self.n_misspecified / self.n_valid if self.n_valid else math.nan

    @property
    def pct_weak(self) -> float:
        return 100.0 * self.n_weak / self.n_valid if self.n_valid else math.nan

    def to_dict(self) -> dict:
        return {"k": self.k, "n_models": self.n_models, "n_degenerate": self.n_degenerate,
                "n_misspecified": self.n_misspecified, "n_weak": self.n_weak,
                "pct_misspecified": self.pct_misspecified, "pct_weak": self.pct_weak,
                "bins": len(self.edges) - 1, "hist_min": float(self.edges[0]),
                "hist_max": float(self.edges[-1]), "hist_mass": int(self.hist2d.sum())}

    def histogram_rows(self) -> list[dict]:
        e = self.edges
        rows = []
        for a in range(len(e) - 1):
            for b in range(len(e) - 1):
                if self.hist2d[a, b]:
                    rows.append({"j_lo": float(e[a]), "j_hi": float(e[a + 1]),
                                 "is_lo": float(e[b]), "is_hi": float(e[b + 1]),
                                 "count": int(self.hist2d[a, b])})
        return rows


def summarize(records: np.ndarray | Iterable[np.ndarray], k: int | None = None, bins: int = 60,
              hist_range: tuple[float, float] | None = None) -> ScanSummary:
    """Misspecification / weak-identification shares and the joint (J, IS) histogram."""
    if isinstance(records, np.ndarray):
        parts = [records]
    else:
        parts = [np.asarray(r) for r in records]
    parts = [p for p in parts if len(p)]
    if not parts:
        raise InputError("no scan records to summarize")
    k = parts[0]["subset"].shape[1] if k is None else k
    if hist_range is None:
        hi = 0.0
        for p in parts:
            ok = ~(p["flags"] & FLAG_DEGENERATE).astype(bool)
            if ok.any():
                hi = max(hi, float(np.nanmax(p["is_"][ok])), float(np.nanmax(p["j"][ok])))
        hist_range = (0.0, hi if hi > 0 else 1.0)
    edges = np.linspace(hist_range[0], hist_range[1], bins + 1)
    hist = np.zeros((bins, bins), dtype=np.int64)
    n = nd = nm = nw = 0
    for p in parts:
        if p["subset"].shape[1] != k:
            raise InputError("records with different k cannot be summarized together")
        flags = np.asarray(p["flags"])
        deg = (flags & FLAG_DEGENERATE).astype(bool)
        n += len(p)
        nd += int(deg.sum())
        nm += int(((flags & FLAG_MISSPECIFIED) > 0)[~deg].sum())
        nw += int(((flags & FLAG_WEAK) > 0)[~deg].sum())
        j = np.clip(np.asarray(p["j"])[~deg], edges[0], edges[-1])
        s = np.clip(np.asarray(p["is_"])[~deg], edges[0], edges[-1])
        h, _, _ = np.histogram2d(j, s, bins=[edges, edges])
        hist += h.astype(np.int64)
    return ScanSummary(k, n, nd, nm, nw, edges, hist)


def merge_summaries(a: ScanSummary, b: ScanSummary) -> ScanSummary:
    if a.k != b.k or not np.array_equal(a.edges, b.edges):
        raise InputError("summaries need the same k and histogram edges to merge")
    return ScanSummary(a.k, a.n_models + b.n_models, a.n_degenerate + b.n_degenerate,
                       a.n_misspecified + b.n_misspecified, a.n_weak + b.n_weak,
                       a.edges, a.hist2d + b.hist2d)
