"""Oriented site percolation on L = {(y, n) : y + n even}.

Site (y, n), n >= 1, is open when w(y, n) = 1; W_{n+1} is the set of sites
y of row n + 1 that are open and have y - 1 or y + 1 in W_n.  Two field
families are provided: independent sites open with probability 1 - eps, and
a 1-dependent field w(y, n) = eta(y - 1, n) * eta(y + 1, n) with latent
eta i.i.d. Bernoulli(sqrt(1 - eps)).  Site values come from a hash of
(seed, y, n), so a field does not depend on its window.

Fields are stored as a dense (n_max + 1, width) uint8 array indexed by
``[n, y + half_width]``; row 0 and off-lattice entries are 0.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

from ._hashrng import TAG_ETA, TAG_SITE, stream_key, uniform
from .errors import ConfigError, ValidationError


class FieldMode(str, enum.Enum):
    INDEPENDENT = "independent"
    ONE_DEPENDENT = "one_dependent"


@dataclass(frozen=True)
class PercConfig:
    epsilon: float
    mode: FieldMode = FieldMode.INDEPENDENT
    n_max: int = 50
    seed: int = 0
    extent: int | None = None   # None: n_max, enough for the 2Z start

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ConfigError("epsilon", "must lie in [0, 1)")
        object.__setattr__(self, "mode", FieldMode(self.mode))
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ConfigError("n_max", "must be an integer >= 1")
        if self.extent is not None and self.extent < 0:
            raise ConfigError("extent", "must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")

    @property
    def half_width(self) -> int:
        extent = self.n_max if self.extent is None else self.extent
        return self.n_max + extent + 2

    @property
    def window(self) -> tuple[int, int]:
        return (-self.half_width, self.half_width)


@njit(cache=True)
def _field_kernel(seed, eps, one_dep, n_max, H):
    width = 2 * H + 1
    w = np.zeros((n_max + 1, width), np.uint8)
    eta = np.zeros((n_max + 1, width + 2), np.uint8)
    q = math.sqrt(1.0 - eps)
    for n in range(1, n_max + 1):
        if one_dep:
            # eta lives on the sublattice y + n odd, columns -H-1 .. H+1
            for j in range(width + 2):
                y = j - H - 1
                if (y + n) % 2 != 0:
                    u = uniform(stream_key(seed, TAG_ETA, y, n), 0)
                    eta[n, j] = 1 if u < q else 0
            for j in range(width):
                y = j - H
                if (y + n) % 2 == 0:
                    w[n, j] = eta[n, j] & eta[n, j + 2]
        else:
            for j in range(width):
                y = j - H
                if (y + n) % 2 == 0:
                    u = uniform(stream_key(seed, TAG_SITE, y, n), 0)
                    w[n, j] = 1 if u < 1.0 - eps else 0
    return w, eta


@njit(cache=True)
def _evolve_kernel(w, occ0):
    rows, width = w.shape
    occ = np.zeros((rows, width), np.uint8)
    occ[0] = occ0
    tau = -1
    for n in range(1, rows):
        alive = False
        for j in range(width):
            if w[n, j]:
                left = occ[n - 1, j - 1] if j > 0 else 0
                right = occ[n - 1, j + 1] if j + 1 < width else 0
                if left | right:
                    occ[n, j] = 1
                    alive = True
        if not alive:
            tau = n
            break
    return occ, tau


def _readonly(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PercField:
    config: PercConfig
    w: np.ndarray
    eta: np.ndarray | None = None

    @property
    def half_width(self) -> int:
        return self.config.half_width

    def is_open(self, y: int, n: int) -> bool:
        H = self.half_width
        if not (1 <= n <= self.config.n_max and -H <= y <= H):
            raise ValidationError(f"site ({y}, {n}) outside field window")
        return bool(self.w[n, y + H])

    @classmethod
    def from_array(cls, config: PercConfig, w) -> "PercField":
        """Explicit field; off-lattice entries and row 0 are cleared."""
        w = np.array(w, np.uint8)
        shape = (config.n_max + 1, 2 * config.half_width + 1)
        if w.shape != shape:
            raise ValidationError(f"field shape {w.shape} != {shape}")
        w = w & lattice_mask(config)
        return cls(config, _readonly(w))

    @classmethod
    def constant(cls, config: PercConfig, value: int) -> "PercField":
        shape = (config.n_max + 1, 2 * config.half_width + 1)
        return cls.from_array(config, np.full(shape, value, np.uint8))


def lattice_mask(config: PercConfig) -> np.ndarray:
    H = config.half_width
    n = np.arange(config.n_max + 1)[:, None]
    y = np.arange(-H, H + 1)[None, :]
    mask = ((y + n) % 2 == 0).astype(np.uint8)
    mask[0] = 0
    return mask


def gen_field(config: PercConfig) -> PercField:
    w, eta = _field_kernel(np.uint64(config.seed), float(config.epsilon),
                           config.mode is FieldMode.ONE_DEPENDENT,
                           int(config.n_max), int(config.half_width))
    if config.mode is FieldMode.INDEPENDENT:
        return PercField(config, _readonly(w))
    return PercField(config, _readonly(w), _readonly(eta))


@dataclass(frozen=True, eq=False)
class PercRun:
    start: tuple
    occ: np.ndarray            # (n_max + 1, width) occupancy, row 0 = start
    half_width: int
    tau: int | None            # first empty row, None if alive at n_max
    lefts: tuple = dc_field(default=())
    rights: tuple = dc_field(default=())

    @property
    def n_max(self) -> int:
        return self.occ.shape[0] - 1

    @property
    def survived(self) -> bool:
        return self.tau is None

    def level(self, n: int) -> np.ndarray:
        """Sorted occupied sites W_n."""
        if not 0 <= n <= self.n_max:
            raise ValidationError(f"row {n} outside [0, {self.n_max}]")
        return np.flatnonzero(self.occ[n]) - self.half_width

    def L(self, n: int) -> int | None:
        return self.lefts[n]

    def R(self, n: int) -> int | None:
        return self.rights[n]

    def alive_at(self, n: int) -> bool:
        return self.tau is None or n < self.tau

    def to_rows(self):
        for n in range(self.n_max + 1):
            yield (n, int(self.occ[n].sum()), self.lefts[n], self.rights[n])


def _extremes(occ, H):
    lefts, rights = [], []
    for row in occ:
        nz = np.flatnonzero(row)
        if nz.size:
            lefts.append(int(nz[0]) - H)
            rights.append(int(nz[-1]) - H)
        else:
            lefts.append(None)
            rights.append(None)
    return tuple(lefts), tuple(rights)


def two_z_start(config: PercConfig) -> tuple:
    """All even sites of the window: the finite stand-in for 2Z.

    Rows computed from it are exact on [-H + n, H - n] at row n.
    """
    H = config.half_width
    return tuple(range(-H + (H % 2), H + 1, 2))


def evolve_percolation(field: PercField, start, n_max: int | None = None
                       ) -> PercRun:
    cfg = field.config
    n_max = cfg.n_max if n_max is None else int(n_max)
    if not 1 <= n_max <= cfg.n_max:
        raise ValidationError(f"n_max must lie in [1, {cfg.n_max}]")
    start = tuple(sorted(set(int(y) for y in start)))
    if not start:
        raise ValidationError("start must be nonempty")
    H = cfg.half_width
    for y in start:
        if y % 2:
            raise ValidationError(f"start site {y} off the lattice (odd)")
        if not -H <= y <= H:
            raise ValidationError(f"start site {y} outside window")
    occ0 = np.zeros(2 * H + 1, np.uint8)
    occ0[np.array(start) + H] = 1
    occ, tau = _evolve_kernel(field.w[: n_max + 1], occ0)
    lefts, rights = _extremes(occ, H)
    return PercRun(start, _readonly(occ), H, None if tau < 0 else int(tau),
                   lefts, rights)


def origin_run(field: PercField) -> PercRun:
    return evolve_percolation(field, (0,))


def coupling_identity_check(field: PercField, n: int,
                            run0: PercRun | None = None,
                            run_full: PercRun | None = None) -> bool:
    """W_n^0 == W_n^{2Z} intersected with [L_n, R_n], on one field.

    Requires the origin run to survive to n_max (the stand-in for
    tau = infinity) and the window to keep the 2Z start exact on [-n, n].
    """
    cfg = field.config
    if not 0 <= n <= cfg.n_max:
        raise ValidationError(f"row {n} outside [0, {cfg.n_max}]")
    if cfg.half_width < 2 * n:
        raise ValidationError("window too narrow for the 2Z start at row n")
    run0 = run0 or origin_run(field)
    if not run0.survived:
        raise ValidationError("origin run does not survive to n_max")
    run_full = run_full or evolve_percolation(field, two_z_start(cfg))
    H = cfg.half_width
    lo, hi = run0.L(n) + H, run0.R(n) + H
    return bool(np.array_equal(run0.occ[n, lo:hi + 1],
                               run_full.occ[n, lo:hi + 1]))


def _check_row_sites(Y, n, run: PercRun):
    Y = np.unique(np.asarray(list(Y), np.int64))
    if Y.size == 0:
        raise ValidationError("Y must be nonempty")
    if np.any((Y + n) % 2):
        raise ValidationError(f"Y contains sites off X({n})")
    H = run.half_width
    if Y[0] < -H or Y[-1] > H:
        raise ValidationError("Y outside window")
    return Y


def row_sites(n: int, lo: float, hi: float) -> np.ndarray:
    """X(n) intersected with [lo, hi]."""
    a = math.ceil(lo)
    if (a + n) % 2:
        a += 1
    b = math.floor(hi)
    return np.arange(a, b + 1, 2) if a <= b else np.zeros(0, np.int64)


def occupied_count(run: PercRun, Y, n: int) -> int:
    Y = _check_row_sites(Y, n, run)
    return int(run.occ[n, Y + run.half_width].sum())


def density_deficit(run: PercRun, Y, rho: float, n: int,
                    variant: str = "origin") -> bool:
    """{#(Y intersect W_n) < rho |Y|}.

    ``variant="origin"`` also requires W_n nonempty (origin-start event);
    ``variant="full"`` is the plain event for the 2Z start, where Y must
    lie in the exact region [-H + n, H - n].
    """
    if not 0 < rho < 1:
        raise ValidationError("rho must lie in (0, 1)")
    Y = _check_row_sites(Y, n, run)
    if variant == "full":
        H = run.half_width
        if Y[0] < -H + n or Y[-1] > H - n:
            raise ValidationError("Y outside the exact region of the 2Z start")
    elif variant != "origin":
        raise ValidationError(f"unknown variant {variant!r}")
    count = int(run.occ[n, Y + run.half_width].sum())
    deficit = count < rho * Y.size
    if variant == "origin":
        return deficit and run.alive_at(n)
    return deficit


def scan_consecutive_runs(run0: PercRun, n: int, b: float, beta: float,
                          rho: float) -> bool:
    """Some floor(b n) consecutive points of X(n) in [-beta n, beta n] hold
    fewer than rho * floor(b n) occupied sites, and W_n^0 is nonempty."""
    if not 0 < beta < 1:
        raise ValidationError("beta must lie in (0, 1)")
    if not 0 < b <= beta:
        raise ValidationError("b must lie in (0, beta]")
    k = math.floor(b * n)
    if k < 1:
        raise ValidationError("floor(b n) must be >= 1")
    if not run0.alive_at(n):
        return False
    pts = row_sites(n, -beta * n, beta * n)
    if pts.size < k:
        return False
    vals = run0.occ[n, pts + run0.half_width].astype(np.int64)
    sums = np.convolve(vals, np.ones(k, np.int64), mode="valid")
    return bool(np.any(sums < rho * k))


def extinction_and_speed_events(run0: PercRun, n: int, beta: float
                                ) -> tuple[bool, bool]:
    """({n <= tau < n_max}, {W_n nonempty, [L_n, R_n] inside [-beta n, beta n]})."""
    if not 0 <= n <= run0.n_max:
        raise ValidationError(f"row {n} outside [0, {run0.n_max}]")
    tail = run0.tau is not None and n <= run0.tau < run0.n_max
    slow = False
    if run0.alive_at(n):
        slow = run0.L(n) >= -beta * n and run0.R(n) <= beta * n
    return tail, slow


def write_run_csv(path, runs) -> None:
    """Per-replica rows (replica, n, size, L_n, R_n, tau)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "n", "size", "L_n", "R_n", "tau"])
        for i, run in enumerate(runs):
            tau = "" if run.tau is None else run.tau
            for n, size, lo, hi in run.to_rows():
                w.writerow([i, n, size, "" if lo is None else lo,
                            "" if hi is None else hi, tau])
