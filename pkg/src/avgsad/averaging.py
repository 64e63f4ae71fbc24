"""The averaging process: pairwise convex updates folded over a sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from . import _kernels as K
from .errors import SpecError, ValidationError
from .graphs import Graph
from .schedule import (CLOCK_TAG, INIT_TAG, ClockConfig, UpdateSequence, UpdateStep,
                       derive_seed, explore_local)


@dataclass
class Profile:
    """Sparse vertex -> value map.

    Unlisted vertices take ``sampler(v)`` when a sampler is attached (lazy
    i.i.d. initial profiles), otherwise ``default``.
    """

    values: dict = field(default_factory=dict)
    default: float = 0.0
    sampler: Callable[[int], float] | None = field(default=None, repr=False, compare=False)

    def __getitem__(self, v: int):
        if v in self.values:
            return self.values[v]
        if self.sampler is not None:
            return self.sampler(v)
        return self.default

    def __len__(self) -> int:
        return len(self.values)

    def copy(self) -> "Profile":
        return Profile(dict(self.values), self.default, self.sampler)

    def total(self):
        return sum(self.values.values())

    def energy(self):
        return sum(x * x for x in self.values.values())

    def max(self):
        return max(self.values.values())

    def min(self):
        return min(self.values.values())

    @classmethod
    def delta(cls, r: int) -> "Profile":
        return cls({r: 1.0})

    @classmethod
    def from_graph(cls, g, values) -> "Profile":
        """Profile over all vertices of a finite graph; ``values`` in vertex order or a mapping."""
        if isinstance(values, Mapping):
            return cls({v: values[v] for v in g.vertices})
        values = list(values)
        if len(values) != g.n_vertices:
            raise ValidationError(f"expected {g.n_vertices} values, got {len(values)}")
        return cls(dict(zip(g.vertices, values)))

    def to_exact(self) -> "Profile":
        return Profile({v: Fraction(x) for v, x in self.values.items()}, Fraction(self.default), None)


@dataclass(frozen=True)
class InitialLaw:
    """Law of the i.i.d. initial opinions (or a point mass at one vertex).

    ``gaussian`` is parameterised by (mean, variance); ``pareto`` by
    (alpha, scale) with alpha > 2 so that the second moment is finite.
    """

    kind: str
    p0: float = 0.0
    p1: float = 0.0
    r: int = 0
    seed: int = 0

    _KINDS = {"dirac": K.LAW_DIRAC, "bernoulli": K.LAW_BERNOULLI, "uniform": K.LAW_UNIFORM,
              "gaussian": K.LAW_GAUSSIAN, "pareto": K.LAW_PARETO, "delta": K.LAW_DELTA}

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown law {self.kind!r}")
        if self.kind == "bernoulli" and not 0 <= self.p0 <= 1:
            raise ValidationError(f"bernoulli p must lie in [0, 1], got {self.p0}")
        if self.kind == "uniform" and not self.p0 < self.p1:
            raise ValidationError(f"uniform needs a < b, got ({self.p0}, {self.p1})")
        if self.kind == "gaussian" and not self.p1 >= 0:
            raise ValidationError(f"gaussian variance must be >= 0, got {self.p1}")
        if self.kind == "pareto" and not (self.p0 > 2 and self.p1 > 0):
            raise ValidationError(f"pareto needs alpha > 2 and scale > 0, got ({self.p0}, {self.p1})")

    @classmethod
    def dirac(cls, c: float, seed: int = 0):
        return cls("dirac", c, seed=seed)

    @classmethod
    def bernoulli(cls, p: float, seed: int = 0):
        return cls("bernoulli", p, seed=seed)

    @classmethod
    def uniform(cls, a: float, b: float, seed: int = 0):
        return cls("uniform", a, b, seed=seed)

    @classmethod
    def gaussian(cls, mean: float, var: float, seed: int = 0):
        return cls("gaussian", mean, var, seed=seed)

    @classmethod
    def pareto(cls, alpha: float, scale: float = 1.0, seed: int = 0):
        return cls("pareto", alpha, scale, seed=seed)

    @classmethod
    def delta(cls, r: int):
        return cls("delta", r=r)

    @classmethod
    def parse(cls, spec: str, graph: Graph | None = None) -> "InitialLaw":
        kind, _, body = spec.strip().partition(":")
        if kind == "delta":
            if graph is not None:
                return cls.delta(graph.parse_vertex(body))
            return cls.delta(int(body))
        try:
            args = [float(x) for x in body.split(",")] if body else []
        except ValueError:
            raise SpecError(f"bad law spec {spec!r}") from None
        arity = {"dirac": 1, "bernoulli": 1, "uniform": 2, "gaussian": 2, "pareto": (1, 2)}
        if kind not in arity:
            raise SpecError(f"unknown law {kind!r}")
        want = arity[kind]
        if len(args) not in (want if isinstance(want, tuple) else (want,)):
            raise SpecError(f"law {kind!r}: wrong number of parameters in {spec!r}")
        return getattr(cls, kind)(*args)

    def __str__(self) -> str:
        if self.kind in ("dirac", "bernoulli"):
            return f"{self.kind}:{self.p0!r}"
        if self.kind == "delta":
            return f"delta:{self.r}"
        return f"{self.kind}:{self.p0!r},{self.p1!r}"

    def with_seed(self, seed: int) -> "InitialLaw":
        return replace(self, seed=seed)

    @property
    def m1(self) -> float:
        k, a, b = self.kind, self.p0, self.p1
        if k == "dirac":
            return a
        if k == "bernoulli":
            return a
        if k == "uniform":
            return (a + b) / 2
        if k == "gaussian":
            return a
        if k == "pareto":
            return a * b / (a - 1)
        raise ValidationError("a point mass at one vertex has no i.i.d. moments")

    @property
    def m2(self) -> float:
        k, a, b = self.kind, self.p0, self.p1
        if k == "dirac":
            return a * a
        if k == "bernoulli":
            return a
        if k == "uniform":
            return (a * a + a * b + b * b) / 3
        if k == "gaussian":
            return b + a * a
        if k == "pareto":
            return a * b * b / (a - 2)
        raise ValidationError("a point mass at one vertex has no i.i.d. moments")

    @property
    def variance(self) -> float:
        return self.m2 - self.m1 ** 2

    @property
    def _args(self):
        return self._KINDS[self.kind], float(self.p0), float(self.p1), int(self.r), np.uint64(self.seed % 2**64)

    def sample(self, v: int) -> float:
        kind, p0, p1, r, seed = self._args
        return float(K.draw_initial(kind, p0, p1, r, seed, v))

    def sample_many(self, ids) -> np.ndarray:
        kind, p0, p1, r, seed = self._args
        return K.draw_initial_many(kind, p0, p1, r, seed, np.asarray(ids, dtype=np.int64))

    def profile(self, g: Graph | None = None) -> Profile:
        """Initial profile: eager over a finite graph, lazy otherwise."""
        if g is not None and g.is_finite:
            return Profile(dict(zip(g.vertices, map(float, self.sample_many(g.ids)))))
        if self.kind == "delta":
            return Profile({self.r: 1.0})
        if self.kind == "dirac":
            return Profile({}, default=self.p0)
        return Profile({}, sampler=self.sample)


# ---------------------------------------------------------------------------


def _update(values: dict, default_of, u: int, w: int, mu) -> None:
    x = values[u] if u in values else default_of(u)
    y = values[w] if w in values else default_of(w)
    d = mu * (y - x)
    values[u] = x + d
    values[w] = y - d


def apply_step(p: Profile, step: UpdateStep) -> Profile:
    """One averaging update along ``step.edge`` with weight ``step.mu``."""
    out = p.copy()
    _update(out.values, out.__getitem__, step.u, step.v, step.mu)
    return out


def _is_float_path(init: Profile, seq: UpdateSequence) -> bool:
    if seq.mu.dtype == object:
        return False
    return all(type(x) is float or isinstance(x, np.floating) for x in init.values.values())


def _universe(g: Graph, init: Profile, seq: UpdateSequence) -> np.ndarray:
    parts = [seq.u, seq.v, np.fromiter(init.values.keys(), dtype=np.int64, count=len(init.values))]
    if g is not None and g.is_finite:
        parts.append(g.ids)
    return np.unique(np.concatenate(parts))


def _dense(init: Profile, ids: np.ndarray) -> np.ndarray:
    return np.array([float(init[int(v)]) for v in ids], dtype=float)


def run(g: Graph, init: Profile, seq: UpdateSequence, exact: bool = False) -> Profile:
    """Fold the averaging update over ``seq`` starting from ``init``.

    Float profiles go through the compiled kernel.  ``exact=True``, or
    rational weights in ``seq``, switch to a pure-Python fold over
    :class:`fractions.Fraction` so no rounding happens anywhere.
    """
    if exact or seq.mu.dtype == object:
        init = init.to_exact() if init.sampler is None else init
        steps = [UpdateStep(s.u, s.v, Fraction(s.mu), s.time) for s in seq]
    elif _is_float_path(init, seq):
        ids = _universe(g, init, seq)
        values = _dense(init, ids)
        K.apply_events(values, np.searchsorted(ids, seq.edges_u), np.searchsorted(ids, seq.edges_v),
                       np.ascontiguousarray(seq.mus, dtype=float), False)
        return Profile(dict(zip(map(int, ids), map(float, values))), init.default, init.sampler)
    else:
        steps = seq
    out = init.copy()
    if g is not None and g.is_finite:
        for v in g.vertices:
            out.values.setdefault(v, out[v])
    for s in steps:
        _update(out.values, out.__getitem__, s.u, s.v, s.mu)
    return out


def snapshots(g: Graph, init: Profile, seq: UpdateSequence,
              times: Iterable[float]) -> Iterator[tuple[float, Profile]]:
    """Yield ``(t, profile)`` for each observation time (steps with time <= t applied)."""
    times = sorted(times)
    current = init.copy()
    if g is not None and g.is_finite:
        for v in g.vertices:
            current.values.setdefault(v, current[v])
    steps = iter(seq)
    pending = next(steps, None)
    for t in times:
        while pending is not None and pending.time <= t:
            _update(current.values, current.__getitem__, pending.u, pending.v, pending.mu)
            pending = next(steps, None)
        yield t, current.copy()


def geometric_times(horizon: float) -> list[float]:
    """Observation grid 0, 1, 2, 4, ... up to and including ``horizon``."""
    out = [0.0]
    k = 0
    while 2.0 ** k < horizon:
        out.append(2.0 ** k)
        k += 1
    if horizon > 0:
        out.append(float(horizon))
    return out


def replica_configs(cfg: ClockConfig, law: InitialLaw, replica_seed: int):
    """Clock and law seeded from one replica seed via the documented sub-streams."""
    return (cfg.with_seed(derive_seed(replica_seed, CLOCK_TAG)),
            law.with_seed(derive_seed(replica_seed, INIT_TAG)))


def run_at_root(g: Graph, law: InitialLaw, cfg: ClockConfig, horizon: float, root: int,
                cap: int | None = None) -> float:
    """Exact sample of the value at ``root`` at time ``horizon`` on any graph.

    Only the backward first-passage cluster of ``root`` is generated; initial
    values are drawn per vertex from ``law.seed`` so the result matches an
    eager run on any finite graph containing that cluster.
    """
    loc = explore_local(g, root, cfg, horizon, backward=True, cap=cap)
    values = law.sample_many(loc.gid)
    K.apply_events(values, loc.a, loc.b, loc.mu, False)
    return float(values[0])


def summary(p: Profile, horizon: float, n_steps: int) -> dict:
    vals = list(p.values.values())
    return {
        "horizon": horizon,
        "n_steps": n_steps,
        "sum": math.fsum(vals),
        "energy": math.fsum(x * x for x in vals),
        "max": max(vals),
        "min": min(vals),
    }
