"""Edge clocks and update sequences (the graphical representation).

Every edge carries an independent rate-``intensity`` Poisson clock whose
events and weights are a pure function of ``(seed, edge)``; see
:mod:`avgsad._kernels`.  Finite graphs get the full merged sequence; on any
graph :func:`explore_region` grows the first-passage cluster of a root and
returns only the events that can matter for it.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels as K
from .errors import ResourceError, SpecError, ValidationError
from .graphs import FiniteGraph, Graph

DEFAULT_REGION_CAP = 10_000_000
REGION_CAP_ENV = "AVGSAD_REGION_CAP"


def region_cap() -> int:
    raw = os.environ.get(REGION_CAP_ENV)
    if raw is None:
        return DEFAULT_REGION_CAP
    try:
        return int(float(raw))
    except ValueError:
        raise ValidationError(f"{REGION_CAP_ENV} must be a number, got {raw!r}") from None


def derive_seed(seed: int, *tags: int) -> int:
    """Deterministic 64-bit sub-seed; ``derive_seed(s, a, b) == derive_seed(derive_seed(s, a), b)``."""
    s = np.uint64(seed % 2**64)
    for t in tags:
        s = np.uint64(K.derive(s, np.uint64(t % 2**64)))
    return int(s)


# sub-stream tags under a replica seed
CLOCK_TAG = 1
INIT_TAG = 2


@dataclass(frozen=True)
class MuLaw:
    """Law of the averaging weight; support always inside (0, 1/2]."""

    kind: str = "half"  # half | fixed | uniform
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        if self.kind == "half":
            object.__setattr__(self, "a", 0.5)
            object.__setattr__(self, "b", 0.5)
        elif self.kind == "fixed":
            if not 0 < self.a <= 0.5:
                raise ValidationError(f"fixed mu must lie in (0, 1/2], got {self.a}")
            object.__setattr__(self, "b", self.a)
        elif self.kind == "uniform":
            if not (0 <= self.a < self.b <= 0.5):
                raise ValidationError(f"uniform mu needs 0 <= a < b <= 1/2, got ({self.a}, {self.b}]")
        else:
            raise ValidationError(f"unknown mu law {self.kind!r}")

    @classmethod
    def parse(cls, spec: str) -> "MuLaw":
        kind, _, body = spec.strip().partition(":")
        try:
            if kind == "half":
                return cls("half")
            if kind == "fixed":
                return cls("fixed", float(body))
            if kind == "uniform":
                a, b = (float(x) for x in body.split(","))
                return cls("uniform", a, b)
        except ValueError:
            raise SpecError(f"bad mu spec {spec!r}") from None
        raise SpecError(f"bad mu spec {spec!r}")

    def __str__(self) -> str:
        if self.kind == "half":
            return "half"
        if self.kind == "fixed":
            return f"fixed:{self.a!r}"
        return f"uniform:{self.a!r},{self.b!r}"

    @property
    def kernel_args(self):
        kind = K.MU_UNIFORM if self.kind == "uniform" else K.MU_FIXED
        return kind, float(self.a), float(self.b)


@dataclass(frozen=True)
class ClockConfig:
    intensity: float = 1.0
    mu_law: MuLaw = field(default_factory=MuLaw)
    seed: int = 0

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValidationError(f"intensity must be positive, got {self.intensity}")

    def with_seed(self, seed: int) -> "ClockConfig":
        return replace(self, seed=seed)

    @property
    def _useed(self) -> np.uint64:
        return np.uint64(self.seed % 2**64)


@dataclass(frozen=True)
class UpdateStep:
    u: int
    v: int
    mu: float
    time: float

    @property
    def edge(self) -> tuple[int, int]:
        return (self.u, self.v)


class UpdateSequence:
    """Chronological update steps backed by parallel arrays.

    ``raw_times`` are the clock times of the underlying realisation; a reversed
    sequence keeps them and reports ``horizon - raw`` so that reversing twice
    gives back exactly the original object.
    """

    def __init__(self, times, u, v, mu, horizon: float, seed: int = 0,
                 intensity: float = 1.0, reversed: bool = False, ties: int = 0):
        self.raw_times = np.asarray(times, dtype=float)
        self.u = np.asarray(u, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.int64)
        mu = np.asarray(mu)
        self.mu = mu if mu.dtype == object else mu.astype(float)
        self.horizon = float(horizon)
        self.seed = int(seed)
        self.intensity = float(intensity)
        self.reversed = bool(reversed)
        self.ties = int(ties)
        n = self.raw_times.shape[0]
        if not (self.u.shape[0] == self.v.shape[0] == self.mu.shape[0] == n):
            raise ValidationError("update sequence arrays differ in length")

    @classmethod
    def from_steps(cls, steps, horizon: float | None = None, **kw) -> "UpdateSequence":
        steps = list(steps)
        if horizon is None:
            horizon = max((s.time for s in steps), default=0.0)
        mus = [s.mu for s in steps]
        mu = np.array(mus, dtype=object if any(not isinstance(m, float) for m in mus) else float)
        seq = cls([s.time for s in steps], [s.u for s in steps], [s.v for s in steps],
                  mu, horizon, **kw)
        seq.validate()
        return seq

    @classmethod
    def from_edges(cls, edges, mus, horizon: float | None = None) -> "UpdateSequence":
        """Discrete-time sequence: step k happens at time k + 1."""
        edges = list(edges)
        steps = [UpdateStep(int(a), int(b), m, float(k + 1)) for k, ((a, b), m) in enumerate(zip(edges, mus))]
        return cls.from_steps(steps, horizon=float(len(steps)) if horizon is None else horizon)

    def __len__(self) -> int:
        return self.raw_times.shape[0]

    @property
    def times(self) -> np.ndarray:
        if self.reversed:
            return (self.horizon - self.raw_times)[::-1]
        return self.raw_times

    def _ordered(self, a: np.ndarray) -> np.ndarray:
        return a[::-1] if self.reversed else a

    @property
    def edges_u(self) -> np.ndarray:
        return self._ordered(self.u)

    @property
    def edges_v(self) -> np.ndarray:
        return self._ordered(self.v)

    @property
    def mus(self) -> np.ndarray:
        return self._ordered(self.mu)

    @property
    def steps(self) -> list[UpdateStep]:
        return list(iter(self))

    def __iter__(self) -> Iterator[UpdateStep]:
        for t, a, b, m in zip(self.times, self.edges_u, self.edges_v, self.mus):
            yield UpdateStep(int(a), int(b), float(m) if isinstance(m, np.floating) else m, float(t))

    def __eq__(self, other) -> bool:
        if not isinstance(other, UpdateSequence):
            return NotImplemented
        return (self.reversed == other.reversed and self.horizon == other.horizon
                and np.array_equal(self.raw_times, other.raw_times)
                and np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)
                and np.array_equal(self.mu, other.mu))

    def __repr__(self) -> str:
        flag = ", reversed" if self.reversed else ""
        return f"UpdateSequence(n={len(self)}, horizon={self.horizon}{flag})"

    def validate(self) -> None:
        t = self.times
        if len(t) and (t[0] < 0 or t[-1] > self.horizon):
            raise ValidationError("step time outside [0, horizon]")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("step times must be strictly increasing")
        if np.any(self.u == self.v):
            raise ValidationError("self-loop step")
        mu = self.mu.astype(float) if self.mu.dtype == object else self.mu
        if np.any(mu <= 0) or np.any(mu > 0.5):
            raise ValidationError("mu outside (0, 1/2]")

    def restrict(self, vertices) -> "UpdateSequence":
        """Steps whose edge touches ``vertices``."""
        keep = np.isin(self.u, list(vertices)) | np.isin(self.v, list(vertices))
        return UpdateSequence(self.raw_times[keep], self.u[keep], self.v[keep], self.mu[keep],
                              self.horizon, self.seed, self.intensity, self.reversed)

    def until(self, t: float) -> "UpdateSequence":
        """Forward prefix up to time ``t`` (a new horizon)."""
        if self.reversed:
            raise ValidationError("until() is defined on forward sequences")
        keep = self.raw_times <= t
        return UpdateSequence(self.raw_times[keep], self.u[keep], self.v[keep], self.mu[keep],
                              t, self.seed, self.intensity)

    # --- CSV trace --------------------------------------------------------

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        buf.write(f"# horizon={self.horizon!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "edge_u", "edge_v", "mu"])
        for t, a, b, m in zip(self.times, self.edges_u, self.edges_v, self.mus):
            w.writerow([repr(float(t)), int(a), int(b), repr(float(m))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "UpdateSequence":
        text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) or (
            isinstance(path_or_text, str) and "\n" not in path_or_text) else path_or_text
        horizon = None
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                if line.startswith("# horizon="):
                    horizon = float(line.split("=", 1)[1])
                continue
            if not line.strip() or line.startswith("time,"):
                continue
            rows.append(line.split(","))
        try:
            t = [float(r[0]) for r in rows]
            u = [int(r[1]) for r in rows]
            v = [int(r[2]) for r in rows]
            mu = [float(r[3]) for r in rows]
        except (ValueError, IndexError):
            raise ValidationError("malformed trace CSV") from None
        seq = cls(t, u, v, mu, horizon if horizon is not None else (t[-1] if t else 0.0))
        seq.validate()
        return seq


def reverse(seq: UpdateSequence) -> UpdateSequence:
    """Time reversal on [0, horizon]: order flipped, times mapped to horizon - t."""
    return UpdateSequence(seq.raw_times, seq.u, seq.v, seq.mu, seq.horizon, seq.seed,
                          seq.intensity, not seq.reversed, seq.ties)


def _edge_arrays(g: FiniteGraph, seed: int):
    a, b = g.edge_arrays()
    return a, b, K.edge_keys(np.uint64(seed % 2**64), a, b)


def sample_finite(g: FiniteGraph, cfg: ClockConfig, horizon: float) -> UpdateSequence:
    """All clock events of a finite graph on [0, horizon], merged in time order."""
    if not g.is_finite:
        raise ValidationError("sample_finite needs a finite graph")
    if horizon < 0:
        raise ValidationError(f"horizon must be >= 0, got {horizon}")
    a, b, keys = _edge_arrays(g, cfg.seed)
    ea = np.searchsorted(g.ids, a)
    eb = np.searchsorted(g.ids, b)
    mk, ma, mb = cfg.mu_law.kernel_args
    t, la, lb, mu, ties = K.finite_events(keys, ea, eb, float(cfg.intensity), mk, ma, mb,
                                          float(horizon), g.ids)
    return UpdateSequence(t, g.ids[la], g.ids[lb], mu, horizon, cfg.seed, cfg.intensity, ties=ties)


@dataclass
class ExploredRegion:
    root: int
    horizon: float
    vertices: set
    passage_times: dict
    backward: bool = True

    def __len__(self) -> int:
        return len(self.vertices)


class LocalRegion(NamedTuple):
    """Kernel-level exploration result in local indices (root is local 0)."""

    gid: np.ndarray
    in_region: np.ndarray
    passage: np.ndarray
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    ties: int


def explore_local(g: Graph, root: int, cfg: ClockConfig, horizon: float,
                  backward: bool = True, cap: int | None = None) -> LocalRegion:
    if horizon < 0:
        raise ValidationError(f"horizon must be >= 0, got {horizon}")
    cap = region_cap() if cap is None else cap
    kind, p0, p1, ids, indptr, indices = g.kernel_spec()
    mk, ma, mb = cfg.mu_law.kernel_args
    out = K.explore(kind, p0, p1, ids, indptr, indices, max(g.degree_bound, 1), root,
                    cfg._useed, float(cfg.intensity), mk, ma, mb, float(horizon),
                    backward, cap)
    gid, done, passage, t, a, b, mu, ties, status = out
    if status == K.STATUS_CAP:
        raise ResourceError(f"explored region exceeded the cap of {cap} vertices "
                            f"(raise {REGION_CAP_ENV} or lower the horizon)")
    if status == K.STATUS_OVERFLOW:
        raise ResourceError("exploration left the encodable vertex range")
    return LocalRegion(gid, done, passage, t, a, b, mu, int(ties))


def explore_region(g: Graph, root: int, cfg: ClockConfig, horizon: float,
                   backward: bool = True, cap: int | None = None):
    """First-passage cluster of ``root`` over the realised clocks.

    Returns the region (vertices reached by time ``horizon`` with their
    passage times) and every event in [0, horizon] on edges incident to it.
    With ``backward=True`` these events determine the value at ``root`` at
    time ``horizon`` exactly; with ``backward=False`` they determine the
    forward spread of mass started at ``root``.
    """
    loc = explore_local(g, root, cfg, horizon, backward, cap)
    members = np.flatnonzero(loc.in_region)
    region = ExploredRegion(
        root=root,
        horizon=float(horizon),
        vertices={int(loc.gid[i]) for i in members},
        passage_times={int(loc.gid[i]): float(loc.passage[i]) for i in members},
        backward=backward,
    )
    ga, gb = loc.gid[loc.a], loc.gid[loc.b]
    seq = UpdateSequence(loc.t, np.minimum(ga, gb), np.maximum(ga, gb), loc.mu, horizon,
                         cfg.seed, cfg.intensity, ties=loc.ties)
    return region, seq
