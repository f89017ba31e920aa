"""Graphical representation of the contact process on Z_M.

An :class:`EventLog` is the realized set of Poisson death marks (rate 1 per
site) and arrows (rate ``mu`` per directed edge) inside a finite space-time
window, stored as one globally time-sorted schedule.  Views restrict the
arrows (half-line subgraph, thinning to a smaller rate) without touching the
parent log.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _kernels as K
from .errors import ConfigError


class EdgeMask(str, enum.Enum):
    FULL_GRAPH = "full_graph"
    HALF_LINE = "half_line"


def default_margin(mu: float, range_M: int, horizon: float) -> int:
    return int(math.ceil(3 * range_M * mu * horizon))


@dataclass(frozen=True)
class SimConfig:
    mu: float
    range_M: int
    x_min: int
    x_max: int
    horizon: float
    seed: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError("mu", "must be > 0")
        if int(self.range_M) != self.range_M or self.range_M < 1:
            raise ConfigError("range_M", "must be an integer >= 1")
        if not self.horizon > 0:
            raise ConfigError("horizon", "must be > 0")
        if not self.x_min < self.x_max:
            raise ConfigError("window", "x_min must be < x_max")
        if self.x_max - self.x_min + 1 < 2 * self.range_M + 1:
            raise ConfigError("window", "width must be >= 2*range_M + 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")

    @classmethod
    def with_default_window(cls, mu, range_M, horizon, seed=0):
        m = default_margin(mu, range_M, horizon)
        return cls(mu=mu, range_M=range_M, x_min=-m, x_max=m,
                   horizon=horizon, seed=seed)

    @property
    def window(self) -> tuple[int, int]:
        return (self.x_min, self.x_max)

    @property
    def n_sites(self) -> int:
        return self.x_max - self.x_min + 1

    def doubled(self) -> "SimConfig":
        """Same config on the window with both margins doubled."""
        return replace(self, x_min=min(2 * self.x_min, self.x_min - 1),
                       x_max=max(2 * self.x_max, self.x_max + 1))

    def n_edges(self) -> int:
        n = 0
        for d in range(1, self.range_M + 1):
            n += 2 * max(0, self.n_sites - d)
        return n


def _readonly(*arrays):
    for a in arrays:
        a.flags.writeable = False


class EventLog:
    """A realized graphical representation, possibly a restricted view.

    Attributes ``t``, ``kind``, ``src``, ``dst`` and ``idx`` are the sorted
    schedule (see ``_kernels``); they are read-only.  ``mask`` and ``rate``
    describe which arrows of the generating log this view retains.
    """

    def __init__(self, config: SimConfig, t, kind, src, dst, idx,
                 mask=EdgeMask.FULL_GRAPH, rate=None):
        self.config = config
        self.t = t
        self.kind = kind
        self.src = src
        self.dst = dst
        self.idx = idx
        self.mask = EdgeMask(mask)
        self.rate = config.mu if rate is None else rate
        _readonly(t, kind, src, dst, idx)

    # -- construction ---------------------------------------------------
    @classmethod
    def _from_unsorted(cls, config, t, kind, src, dst, idx):
        order = np.lexsort((dst, src, kind, t))
        return cls(config, t[order], kind[order], src[order], dst[order],
                   idx[order])

    @classmethod
    def from_events(cls, config: SimConfig, deaths=None, arrows=None):
        """Build a log from explicit event times (hand-made test logs).

        ``deaths`` maps site -> times, ``arrows`` maps (x, y) -> times.
        """
        deaths = deaths or {}
        arrows = arrows or {}
        M = config.range_M
        rows = []
        for x, times in deaths.items():
            _check_site(config, x)
            for j, s in enumerate(_check_times(config, times)):
                rows.append((s, K.DEATH, x, x, j))
        for (x, y), times in arrows.items():
            _check_site(config, x)
            _check_site(config, y)
            if not 1 <= abs(x - y) <= M:
                raise ConfigError("arrows", f"edge {x}>{y} outside range {M}")
            for j, s in enumerate(_check_times(config, times)):
                rows.append((s, K.ARROW, x, y, j))
        t = np.array([r[0] for r in rows], np.float64)
        kind = np.array([r[1] for r in rows], np.int8)
        src = np.array([r[2] for r in rows], np.int32)
        dst = np.array([r[3] for r in rows], np.int32)
        idx = np.array([r[4] for r in rows], np.int32)
        return cls._from_unsorted(config, t, kind, src, dst, idx)

    # -- accessors ------------------------------------------------------
    def __len__(self):
        return self.t.size

    @property
    def horizon(self) -> float:
        return self.config.horizon

    @property
    def x_min(self) -> int:
        return self.config.x_min

    @property
    def x_max(self) -> int:
        return self.config.x_max

    @property
    def range_M(self) -> int:
        return self.config.range_M

    @property
    def deaths(self) -> dict[int, np.ndarray]:
        sel = self.kind == K.DEATH
        return _group(self.src[sel], self.t[sel])

    @property
    def arrows(self) -> dict[tuple[int, int], np.ndarray]:
        sel = self.kind == K.ARROW
        keys = list(zip(self.src[sel].tolist(), self.dst[sel].tolist()))
        out: dict[tuple[int, int], list] = {}
        for k, s in zip(keys, self.t[sel].tolist()):
            out.setdefault(k, []).append(s)
        return {k: np.array(v) for k, v in out.items()}

    def n_arrows(self) -> int:
        return int(np.count_nonzero(self.kind == K.ARROW))

    def index_after(self, time: float) -> int:
        """Index of the first event strictly after ``time``."""
        return int(np.searchsorted(self.t, time, side="right"))

    def _select(self, keep, **changes):
        return EventLog(changes.pop("config", self.config), self.t[keep],
                        self.kind[keep], self.src[keep], self.dst[keep],
                        self.idx[keep], mask=changes.get("mask", self.mask),
                        rate=changes.get("rate", self.rate))

    def marks(self) -> np.ndarray:
        """Thinning mark in [0, 1) of every event (0 for deaths)."""
        out = np.zeros(self.t.size)
        sel = self.kind == K.ARROW
        out[sel] = K.arrow_marks(np.uint64(self.config.seed), self.src[sel],
                                 self.dst[sel], self.idx[sel])
        return out

    def to_json(self) -> str:
        cfg = asdict(self.config)
        cfg["mask"] = self.mask.value
        cfg["rate"] = repr(float(self.rate))
        deaths = {str(x): [_fmt(s) for s in ts]
                  for x, ts in sorted(self.deaths.items())}
        arrows = {f"{x}>{y}": [_fmt(s) for s in ts]
                  for (x, y), ts in sorted(self.arrows.items())}
        return json.dumps({"config": cfg, "deaths": deaths, "arrows": arrows},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EventLog":
        doc = json.loads(text)
        cfg = dict(doc["config"])
        mask = cfg.pop("mask", EdgeMask.FULL_GRAPH.value)
        rate = float(cfg.pop("rate", cfg["mu"]))
        config = SimConfig(**cfg)
        deaths = {int(x): [float(s) for s in ts]
                  for x, ts in doc["deaths"].items()}
        arrows = {}
        for key, ts in doc["arrows"].items():
            x, y = key.split(">")
            arrows[(int(x), int(y))] = [float(s) for s in ts]
        log = cls.from_events(config, deaths, arrows)
        log.mask = EdgeMask(mask)
        log.rate = rate
        return log


def _fmt(s: float) -> str:
    return format(float(s), ".17g")


def _group(keys, values):
    out: dict[int, list] = {}
    for k, v in zip(keys.tolist(), values.tolist()):
        out.setdefault(k, []).append(v)
    return {k: np.array(v) for k, v in out.items()}


def _check_site(config, x):
    if not config.x_min <= x <= config.x_max:
        raise ConfigError("window", f"site {x} outside window")


def _check_times(config, times):
    times = [float(s) for s in times]
    for a, b in zip(times, times[1:]):
        if not a < b:
            raise ConfigError("times", "stream times must be strictly increasing")
    for s in times:
        if not 0 < s <= config.horizon:
            raise ConfigError("times", f"time {s} outside (0, horizon]")
    return times


def build_event_log(config: SimConfig) -> EventLog:
    """Sample the graphical representation of ``config`` on its window.

    Each site's death stream and each directed edge's arrow stream is driven
    by its own counter-based generator keyed on (seed, stream id), so the log
    of a larger window restricted to a smaller one equals the smaller log.
    """
    expected = config.horizon * (config.n_sites + config.mu * config.n_edges())
    cap = int(expected + 10 * math.sqrt(expected) + 64)
    buf = 65536
    while True:
        n, *arrays = K.generate_schedule(
            np.uint64(config.seed), float(config.mu), int(config.range_M),
            int(config.x_min), int(config.x_max), float(config.horizon),
            cap, buf)
        if n >= 0:
            break
        if n == -1:
            cap *= 2
        else:
            buf *= 4
    return EventLog(config, *(a[:n] for a in arrays))


def masked_view(log: EventLog, mask: EdgeMask | str) -> EventLog:
    """View retaining the arrows allowed by ``mask``; deaths unchanged."""
    mask = EdgeMask(mask)
    if mask is EdgeMask.FULL_GRAPH:
        return log
    keep = (log.kind == K.DEATH) | ((log.src <= 0) & (log.dst <= 0))
    return log._select(keep, mask=EdgeMask.HALF_LINE)


def thinned_view(log: EventLog, mu: float) -> EventLog:
    """View at arrow rate ``mu`` <= the log's rate, by independent thinning.

    An arrow survives iff its mark is below ``mu / config.mu``; views at two
    rates are therefore nested arrow by arrow.
    """
    if not 0 < mu <= log.rate:
        raise ConfigError("mu", f"thinning rate must lie in (0, {log.rate}]")
    if mu == log.rate:
        return log
    keep = (log.kind == K.DEATH) | (log.marks() < mu / log.config.mu)
    return log._select(keep, rate=mu)
