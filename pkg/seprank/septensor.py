"""
Grid tensors, balanced-partition matricization and empirical separation-rank
lower bounds.

A grid tensor holds a function's values on every combination of Z template
inputs over N positions. The rank of its matricization w.r.t. a balanced
partition (P, Q) lower-bounds the separation rank w.r.t. that partition.
Positions are 0-based throughout the code.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from seprank.bounds import BoundInputs, bound_report
from seprank.config import COLUMN_NORM_BAND, GRID_CHUNK, GRID_RANK_TOL, grid_cap
from seprank.errors import CapabilityError, InputError
from seprank.model import (
    NetworkSpec,
    calibrate_network,
    low_rank_factor,
    network_forward,
    random_network,
)
from seprank.numerics import RankTolerance, equilibrate, numerical_rank

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    'swept_param', 'value', 'seed', 'L', 'd_x', 'r', 'H', 'd_a', 'N', 'Z',
    'empirical_rank', 'log_upper_bound', 'log_lower_bound',
]
SWEEPABLE = ('r', 'L', 'd_x', 'Z', 'N')
CALIBRATION_BATCH = 16


@dataclass(frozen=True, eq=False)
class TemplateSet:
    """
    Z template inputs stacked on axis 0: token indices (Z,) for vocabulary
    embeddings, patches (Z, k, d_input) for convolution embeddings, or raw
    values for injected functionals.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 0 or values.shape[0] < 2:
            raise InputError(f"need at least 2 templates, got shape {values.shape}")
        flat = values.reshape(values.shape[0], -1)
        if len({row.tobytes() for row in flat}) != values.shape[0]:
            raise InputError("templates must be pairwise distinct")
        object.__setattr__(self, 'values', values)

    @property
    def size(self):
        return self.values.shape[0]

    @classmethod
    def vocabulary(cls, Z):
        return cls(np.arange(Z, dtype=np.int64))

    @classmethod
    def patches(cls, Z, k, d_input, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((Z, k, d_input)))

    @classmethod
    def of(cls, values):
        return cls(np.asarray(values))

    def gather(self, grid_indices):
        """Map (B, N) template indices to the raw network inputs."""
        picked = self.values[grid_indices]
        if picked.ndim == 4:
            # conv patches (B, N, k, d_input) -> (B, N*k, d_input)
            b, n, k, d_in = picked.shape
            return picked.reshape(b, n * k, d_in)
        return picked


@dataclass(frozen=True)
class Partition:
    P: tuple
    Q: tuple

    def __post_init__(self):
        p, q = tuple(sorted(self.P)), tuple(sorted(self.Q))
        if set(p) & set(q):
            raise InputError(f"P and Q overlap: {sorted(set(p) & set(q))}")
        if len(p) != len(q):
            raise InputError(f"partition is not balanced: |P|={len(p)}, |Q|={len(q)}")
        if set(p) | set(q) != set(range(len(p) + len(q))):
            raise InputError("P and Q must cover every position 0..N-1")
        object.__setattr__(self, 'P', p)
        object.__setattr__(self, 'Q', q)

    @property
    def order(self):
        return len(self.P) + len(self.Q)

    @classmethod
    def interleaved(cls, N):
        """Odd 1-based positions vs even ones."""
        _require_even(N)
        return cls(tuple(range(0, N, 2)), tuple(range(1, N, 2)))

    @classmethod
    def halves(cls, N):
        _require_even(N)
        return cls(tuple(range(N // 2)), tuple(range(N // 2, N)))

    @classmethod
    def parse(cls, text, N):
        if text in (None, '', 'interleaved'):
            return cls.interleaved(N)
        if text == 'halves':
            return cls.halves(N)
        try:
            left, right = text.split('|')
            p = tuple(int(x) for x in left.split(',') if x.strip())
            q = tuple(int(x) for x in right.split(',') if x.strip())
        except ValueError:
            raise InputError(f"partition must look like '0,2|1,3', got: {text!r}")
        part = cls(p, q)
        if part.order != N:
            raise InputError(f"partition covers {part.order} positions, network has {N}")
        return part

    @classmethod
    def from_raw_inputs(cls, P, Q, kernel_width):
        """Lift a partition of M raw inputs to patch positions; no patch may be split."""
        owner = {}
        for side, indices in (('P', P), ('Q', Q)):
            for t in indices:
                patch = t // kernel_width
                if owner.setdefault(patch, side) != side:
                    raise InputError(f"partition splits patch {patch} between P and Q")
        p = tuple(sorted(k for k, v in owner.items() if v == 'P'))
        q = tuple(sorted(k for k, v in owner.items() if v == 'Q'))
        return cls(p, q)


def _require_even(N):
    if N % 2:
        raise InputError(f"balanced partitions need even N, got N={N}")


@dataclass(frozen=True, eq=False)
class GridTensor:
    values: np.ndarray
    templates: TemplateSet
    provenance: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.values.ndim

    @property
    def mode_dim(self):
        return self.values.shape[0]


def _check_cap(Z, N):
    cap = grid_cap()
    points = Z ** N
    if points > cap:
        # largest Z keeping Z^N within the cap, for the suggestion
        z_fit = int(math.floor(cap ** (1.0 / N) + 1e-9))
        raise CapabilityError(
            f"grid has Z^N = {Z}^{N} = {points} points, above the cap {cap}; "
            f"try Z <= {z_fit} at N={N}, a smaller N, or raise SEPRANK_GRID_CAP"
        )
    return points


def _evaluate_grid(fn, templates: TemplateSet, order, workers=1, chunk=GRID_CHUNK):
    Z = templates.size
    points = _check_cap(Z, order)
    out = np.empty(points)
    starts = list(range(0, points, chunk))

    def run(start):
        stop = min(start + chunk, points)
        flat = np.arange(start, stop)
        idx = np.stack(np.unravel_index(flat, (Z,) * order), axis=-1)
        out[start:stop] = fn(templates.gather(idx))
        logger.debug("evaluated grid points %d..%d of %d", start, stop, points)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    return out.reshape((Z,) * order)


def grid_tensor_from_function(fn: Callable, templates: TemplateSet, order, workers=1):
    """
    Grid tensor of an injected functional. ``fn`` maps a batch of template
    values shaped (B, order, ...) to B scalars.
    """
    values = _evaluate_grid(fn, templates, order, workers=workers)
    return GridTensor(values, templates, {'source': 'function', 'order': order})


def build_grid_tensor(n: NetworkSpec, t: TemplateSet, position=0, coordinate=0, workers=1):
    if not 0 <= position < n.seq_len:
        raise InputError(f"position must be in [0, {n.seq_len}), got: {position}")
    if not 0 <= coordinate < n.width:
        raise InputError(f"coordinate must be in [0, {n.width}), got: {coordinate}")

    def fn(raw):
        return network_forward(n, raw)[:, position, coordinate]

    values = _evaluate_grid(fn, t, n.seq_len, workers=workers)
    provenance = {
        'network': n.fingerprint(),
        'position': position,
        'coordinate': coordinate,
        'templates': t.size,
    }
    logger.info("built grid tensor Z=%d N=%d (%d points)", t.size, n.seq_len, values.size)
    return GridTensor(values, t, provenance)


def matricized_position(index, part: Partition, Z):
    """(row, col) of grid index (d_0..d_{N-1}) in the matricization; P/Q order is most significant first."""
    row = 0
    for pos in part.P:
        row = row * Z + index[pos]
    col = 0
    for pos in part.Q:
        col = col * Z + index[pos]
    return row, col


def matricize(g: GridTensor, part: Partition):
    if g.order % 2:
        raise InputError(f"balanced partitions need an even tensor order, got {g.order}")
    if part.order != g.order:
        raise InputError(f"partition covers {part.order} positions, tensor order is {g.order}")
    side = g.mode_dim ** (g.order // 2)
    return np.transpose(g.values, part.P + part.Q).reshape(side, side)


def empirical_sep_lower_bound(n: NetworkSpec, t: TemplateSet, part: Partition,
                              position=0, coordinate=0, tol=None, workers=1):
    """
    Numerical rank of the equilibrated matricization; row and column scaling
    keep the exact rank.
    """
    tol = RankTolerance.coerce(tol, default=GRID_RANK_TOL)
    grid = build_grid_tensor(n, t, position, coordinate, workers=workers)
    return numerical_rank(equilibrate(matricize(grid, part)), tol)


def sampled_sep_lower_bound(n: NetworkSpec, t: TemplateSet, part: Partition, rows, cols,
                            position=0, coordinate=0, tol=None, seed=0):
    """
    Rank of a random rows x cols sub-grid of the matricization.

    A submatrix rank is still a valid (weaker) lower bound; only rows * cols
    network evaluations are made instead of Z^N.
    """
    tol = RankTolerance.coerce(tol, default=GRID_RANK_TOL)
    Z, half = t.size, part.order // 2
    side = Z ** half
    rows, cols = min(rows, side), min(cols, side)
    rng = np.random.default_rng(seed)
    row_ids = np.sort(rng.choice(side, size=rows, replace=False))
    col_ids = np.sort(rng.choice(side, size=cols, replace=False))
    row_digits = np.stack(np.unravel_index(row_ids, (Z,) * half), axis=-1)
    col_digits = np.stack(np.unravel_index(col_ids, (Z,) * half), axis=-1)
    idx = np.empty((rows, cols, part.order), dtype=np.int64)
    idx[:, :, list(part.P)] = row_digits[:, None, :]
    idx[:, :, list(part.Q)] = col_digits[None, :, :]
    raw = t.gather(idx.reshape(rows * cols, part.order))
    values = network_forward(n, raw)[:, position, coordinate]
    return numerical_rank(equilibrate(values.reshape(rows, cols)), tol)


@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter over ``values``; the rest fixed at the base config."""
    param: str
    values: tuple
    seeds: tuple = (0,)
    L: int = 2
    d_x: int = 4
    r: int = 4
    H: int = 1
    d_a: int = 3
    N: int = 4
    Z: int = 4
    V: Optional[int] = None
    r_e: int = 0
    position: int = 0
    coordinate: int = 0
    partition: Optional[str] = None
    tol: float = GRID_RANK_TOL

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise InputError(f"swept parameter must be one of {SWEEPABLE}, got: {self.param!r}")
        if not self.values:
            raise InputError("sweep needs at least one value")
        if not self.seeds:
            raise InputError("sweep needs at least one seed")

    def point(self, value):
        return replace(self, **{self.param: value})


@dataclass(frozen=True)
class SweepRow:
    swept_param: str
    value: int
    seed: int
    L: int
    d_x: int
    r: int
    H: int
    d_a: int
    N: int
    Z: int
    empirical_rank: int
    log_upper_bound: float
    log_lower_bound: Optional[float]

    def as_csv_row(self):
        row = [getattr(self, name) for name in SWEEP_COLUMNS]
        row[-2] = repr(self.log_upper_bound)
        row[-1] = '' if self.log_lower_bound is None else repr(self.log_lower_bound)
        return row


def random_vocab_network(L, d_x, r, H, d_a, N, V, r_e=0, seed=0):
    """
    Rank-r factored vocabulary embedding under L Gaussian layers.

    Token columns have norms in COLUMN_NORM_BAND and every layer is calibrated
    to unit RMS output on random token sequences, so a depth-L stack of cubic
    layers keeps its grid values within a few orders of magnitude.
    """
    if r > min(d_x, V):
        raise InputError(f"r={r} exceeds min(d_x, V)={min(d_x, V)}")
    embedding = low_rank_factor(
        d_x, V, r, seed=seed, N=N, r_e=r_e, column_norms=COLUMN_NORM_BAND
    )
    network = random_network(L, H, d_x, d_a, embedding, seed=seed + 1000)
    reference = np.random.default_rng(seed + 2000).integers(0, V, size=(CALIBRATION_BATCH, N))
    return calibrate_network(network, reference)


def sweep_point(spec: SweepSpec, seed, workers=1):
    """(empirical rank, BoundReport) at one point; bounds use r_e >= 1."""
    V = spec.V or max(spec.Z, spec.d_x, spec.r)
    if spec.Z > V:
        raise InputError(f"Z={spec.Z} templates need V >= Z, got V={V}")
    network = random_vocab_network(
        spec.L, spec.d_x, spec.r, spec.H, spec.d_a, spec.N, V, r_e=spec.r_e, seed=seed
    )
    templates = TemplateSet.vocabulary(spec.Z)
    part = Partition.parse(spec.partition, spec.N)
    rank = empirical_sep_lower_bound(
        network, templates, part, spec.position, spec.coordinate, spec.tol, workers=workers
    )
    report = bound_report(BoundInputs(
        L=spec.L, d_x=spec.d_x, r=spec.r, r_e=max(spec.r_e, 1), H=spec.H, V=V, N=spec.N,
    ))
    return rank, report


def sweep_row(spec: SweepSpec, value, seed, rank, report):
    point = spec.point(value)
    return SweepRow(
        swept_param=spec.param, value=value, seed=seed,
        L=point.L, d_x=point.d_x, r=point.r, H=point.H, d_a=point.d_a,
        N=point.N, Z=point.Z, empirical_rank=rank,
        log_upper_bound=report.upper_log, log_lower_bound=report.lower_log,
    )


def rank_sweep(spec: SweepSpec, workers=1):
    """Empirical rank at every (value, seed); deterministic per seed."""
    # every point must fit before any work is done
    for value in spec.values:
        point = spec.point(value)
        _check_cap(point.Z, point.N)
        Partition.parse(point.partition, point.N)
    rows = []
    for value, seed in itertools.product(spec.values, spec.seeds):
        rank, report = sweep_point(spec.point(value), seed, workers=workers)
        rows.append(sweep_row(spec, value, seed, rank, report))
    logger.info("sweep over %s finished: %d rows", spec.param, len(rows))
    return rows


def write_sweep_csv(rows, path):
    """Write rows to ``path`` atomically (temp file in the same directory, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix='.sweep-', suffix='.csv', dir=directory)
    try:
        with os.fdopen(fd, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(SWEEP_COLUMNS)
            for row in rows:
                writer.writerow(row.as_csv_row())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path
