"""Executable versions of the bounds behind the convergence argument.

* :class:`PotentialFunction` -- f(S) = prod_{v in S} d(r,v) / (d(r,v) + 1).
* :func:`check_subset_inequality` -- sum_{v in S} xi(v) <= 1 - f(S) for SAD
  profiles started at r; the single-vertex case is the 1/(d+1) level bound.
* :class:`EnergyTracker` -- sum of squares and its per-step decrement
  2 mu (1 - mu) (x - y)^2.
* :class:`ExtremaTracker` -- sender/recipient maxima of contribution weights.
* :func:`max_sad_level` -- exhaustive search for the highest reachable SAD
  level, with mu fixed at 1/2 or swept over a grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels as K
from .averaging import InitialLaw, Profile, replica_configs, run
from .errors import ResourceError, ValidationError
from .graphs import FiniteGraph, Graph, bfs_all, graph_name
from .sad import SadProfile, dual_contributions
from .schedule import ClockConfig, UpdateSequence, derive_seed, explore_local, sample_finite

TOL = 1e-12


class PotentialFunction:
    def __init__(self, g: Graph, root: int):
        self.g = g
        self.root = root
        self._dist: dict[int, int] = {}

    def dist(self, v: int) -> int:
        if v not in self._dist:
            self._dist[v] = self.g.distance(self.root, v)
        return self._dist[v]

    def prefetch(self, vertices) -> None:
        missing = [v for v in vertices if v not in self._dist]
        self._dist.update(self.g.distances_from(self.root, missing))

    def ratio(self, v: int) -> float:
        d = self.dist(v)
        return d / (d + 1)

    def __call__(self, S) -> float:
        out = 1.0
        for v in S:
            out *= self.ratio(v)
        return out


def potential(f: PotentialFunction, S) -> float:
    return f(S)


def check_subset_inequality(profile, S, f: PotentialFunction) -> tuple[bool, float]:
    """(holds, slack) for sum_S xi <= 1 - f(S), with slack = 1 - f(S) - sum_S xi."""
    total = sum(profile[v] for v in S)
    slack = (1.0 - f(S)) - total
    return slack >= -TOL, slack


def key_step_holds(f: PotentialFunction, u: int, w: int) -> tuple[bool, float]:
    """f({u, w}) + 1 >= 2 f({u}) for neighbours u, w; returns (holds, margin)."""
    margin = f([u, w]) + 1.0 - 2.0 * f([u])
    return margin >= -TOL, margin


@dataclass
class SweepResult:
    checked: int = 0
    violations: int = 0
    worst_slack: float = np.inf
    witness: list | None = None
    exhaustive: bool = True

    def merge(self, other: "SweepResult") -> None:
        self.checked += other.checked
        self.violations += other.violations
        self.exhaustive = self.exhaustive and other.exhaustive
        if other.worst_slack < self.worst_slack:
            self.worst_slack = other.worst_slack
            self.witness = other.witness


def subset_sweep(profile, f: PotentialFunction, exhaustive_limit: int = 15,
                 n_random: int = 10_000, rng: np.random.Generator | None = None) -> SweepResult:
    """Check the subset inequality over subsets of the profile's support.

    Adding a vertex outside the support only lowers f(S), so support subsets
    are the binding ones.  Exhaustive up to ``exhaustive_limit`` support
    vertices, otherwise ``n_random`` random subsets.
    """
    support = [v for v, x in profile.values.items() if x > 0]
    f.prefetch(support)
    xi = np.array([float(profile[v]) for v in support])
    ratio = np.array([f.ratio(v) for v in support])
    k = len(support)
    res = SweepResult()
    if k == 0:
        return res
    # f(S) = exp(sum of log ratios), and 0 whenever S holds the source
    hits_zero = ratio == 0
    logr = np.log(np.where(hits_zero, 1.0, ratio))
    rows = max(1, 4_000_000 // k)
    if k <= exhaustive_limit:
        total = 2 ** k - 1
    else:
        rng = rng or np.random.default_rng(0)
        total = n_random
        res.exhaustive = False
    worst_member = None
    for start in range(0, total, rows):
        m = min(rows, total - start)
        if res.exhaustive:
            codes = np.arange(start + 1, start + m + 1, dtype=np.int64)
            member = ((codes[:, None] >> np.arange(k)) & 1).astype(bool)
        else:
            # each row keeps every vertex with its own uniform inclusion rate
            member = rng.random((m, k)) < rng.random(m)[:, None]
            member[np.arange(m), rng.integers(k, size=m)] = True
        mf = member.astype(float)
        fS = np.where(member[:, hits_zero].any(axis=1), 0.0, np.exp(mf @ logr))
        slack = (1.0 - fS) - mf @ xi
        res.checked += m
        res.violations += int(np.count_nonzero(slack < -TOL))
        i = int(np.argmin(slack))
        if slack[i] < res.worst_slack:
            res.worst_slack = float(slack[i])
            worst_member = member[i]
    res.witness = [support[j] for j in np.flatnonzero(worst_member)]
    return res


@dataclass
class BoundResult:
    checked: int = 0
    violations: int = 0
    worst_slack: float = np.inf
    witness: tuple | None = None

    def merge(self, other: "BoundResult") -> None:
        self.checked += other.checked
        self.violations += other.violations
        if other.worst_slack < self.worst_slack:
            self.worst_slack = other.worst_slack
            self.witness = other.witness


def level_bound_check(profile, g: Graph) -> BoundResult:
    """xi(v) <= 1/(d(source, v) + 1) + 1e-12 over the support of a SAD profile."""
    support = [v for v, x in profile.values.items() if x > 0]
    dist = g.distances_from(profile.source, support)
    res = BoundResult()
    for v in support:
        slack = 1.0 / (dist[v] + 1) - float(profile[v])
        res.checked += 1
        if slack < -TOL:
            res.violations += 1
        if slack < res.worst_slack:
            res.worst_slack = slack
            res.witness = (profile.source, v, dist[v], float(profile[v]))
    return res


# ---------------------------------------------------------------------------


@dataclass
class EnergyTracker:
    """Total energy W = sum eta^2 along a run, with a per-step decrement log.

    ``predicted`` is 2 mu (1 - mu) (x - y)^2; ``observed`` is the change of
    x^2 + y^2 across the step, which is the change of W.
    """

    current: float = 0.0
    initial: float = 0.0
    predicted: np.ndarray = field(default_factory=lambda: np.zeros(0))
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def track(cls, values: np.ndarray, a: np.ndarray, b: np.ndarray, mu: np.ndarray) -> "EnergyTracker":
        """Run the fold in place on ``values`` (local indices a, b)."""
        w0 = float(np.dot(values, values))
        pred, obs, scale = K.energy_ledger(values, a, b, np.ascontiguousarray(mu, dtype=float))
        return cls(float(np.dot(values, values)), w0, pred, obs, scale)

    @classmethod
    def track_sequence(cls, g: FiniteGraph, values, seq: UpdateSequence) -> "EnergyTracker":
        vals = np.array(values, dtype=float)
        return cls.track(vals, np.searchsorted(g.ids, seq.edges_u), np.searchsorted(g.ids, seq.edges_v), seq.mus)

    @property
    def max_rel_error(self) -> float:
        if self.predicted.size == 0:
            return 0.0
        err = np.abs(self.observed - self.predicted) / np.maximum(self.scale, np.finfo(float).tiny)
        return float(err.max())

    @property
    def increases(self) -> int:
        """Steps where W went up by more than rounding (1e-12 of the local energy)."""
        return int(np.count_nonzero(self.observed < -TOL * self.scale))

    @property
    def cumulative_gap(self) -> float:
        """|(W0 - W_t) - sum of observed decrements| relative to W0."""
        if self.initial == 0:
            return 0.0
        return abs((self.initial - self.current) - float(np.sum(self.observed))) / self.initial


@dataclass
class ExtremaTracker:
    """Sender maxima X_t(u) and recipient maxima Y_t(v) on an observation grid."""

    times: list = field(default_factory=list)
    sender: list = field(default_factory=list)
    recipient: list = field(default_factory=list)

    def record(self, t: float, sender_max: float | None = None, recipient_max: float | None = None):
        self.times.append(t)
        self.sender.append(sender_max)
        self.recipient.append(recipient_max)

    def sender_nonincreasing(self) -> bool:
        xs = [x for x in self.sender if x is not None]
        return all(b <= a for a, b in zip(xs, xs[1:]))

    def recipient_tail_sup(self) -> list[float]:
        """sup_{s >= t} Y_s(v) over the recorded grid (the running sup behind the vanishing of Y)."""
        out, best = [], -np.inf
        for y in reversed(self.recipient):
            best = max(best, y)
            out.append(best)
        return out[::-1]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridMu:
    resolution: float = 0.05

    @property
    def values(self) -> np.ndarray:
        k = int(round(0.5 / self.resolution))
        if not np.isclose(k * self.resolution, 0.5):
            raise ValidationError(f"grid resolution must divide 1/2, got {self.resolution}")
        return np.arange(1, k + 1) * (0.5 / k)


FIXED_HALF = "half"


def max_sad_levels(g: FiniteGraph, source: int, n: int, mode=FIXED_HALF,
                   budget: float = 5e7) -> dict[int, float]:
    """Highest level reachable at every vertex with at most ``n`` SAD updates.

    Exhaustive breadth-first search over (edge, mu) choices; identical
    profiles are merged at each depth.  Cost is O((|E| * |grid|)^n) before
    merging; ``budget`` caps states * branching per depth.
    """
    if not g.is_finite:
        raise ValidationError("max_sad_level needs a finite graph")
    mus = np.array([0.5]) if mode == FIXED_HALF else mode.values
    a_ids, b_ids = g.edge_arrays()
    ea = np.searchsorted(g.ids, a_ids)
    eb = np.searchsorted(g.ids, b_ids)
    states = np.zeros((1, g.n_vertices))
    states[0, g.index(source)] = 1.0
    best = states[0].copy()
    branching = len(ea) * len(mus)
    for depth in range(1, n + 1):
        if states.shape[0] * branching > budget:
            raise ResourceError(f"search budget {budget:g} exceeded at depth {depth}")
        last = depth == n
        children = []
        for a, b in zip(ea, eb):
            diff = states[:, b] - states[:, a]
            for mu in mus:
                d = mu * diff
                na = states[:, a] + d
                nb = states[:, b] - d
                best[a] = max(best[a], na.max())
                best[b] = max(best[b], nb.max())
                if not last:
                    child = states.copy()
                    child[:, a] = na
                    child[:, b] = nb
                    children.append(child)
        if last or not children:
            break
        states = np.unique(np.vstack(children), axis=0)
    return {int(v): float(x) for v, x in zip(g.ids, best)}


def max_sad_level(g: FiniteGraph, source: int, target: int, n: int, mode=FIXED_HALF,
                  budget: float = 5e7) -> float:
    if n == 0:
        return 1.0 if source == target else 0.0
    return max_sad_levels(g, source, n, mode, budget)[target]


def small_graphs(max_vertices: int = 4, max_edges: int = 5) -> list[FiniteGraph]:
    """Connected graphs up to isomorphism within the size limits (networkx atlas).

    SAD never leaves the component of its source, so disconnected graphs add
    nothing beyond their components.
    """
    import networkx as nx

    from .graphs import from_edges

    out = []
    for h in nx.graph_atlas_g():
        if h.number_of_nodes() == 0 or h.number_of_nodes() > max_vertices:
            continue
        if h.number_of_edges() > max_edges or not nx.is_connected(h):
            continue
        out.append(from_edges(h.number_of_nodes(), list(h.edges()),
                              name=f"atlas:n={h.number_of_nodes()},m={h.number_of_edges()}"))
    return out


@dataclass
class CheckResult:
    name: str
    passed: bool
    checked: int
    worst: float
    tolerance: float
    witness: object = None
    details: dict = field(default_factory=dict)


@dataclass
class DiagnosticReport:
    suite: str
    config: dict
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: CheckResult) -> None:
        self.checks.append(check)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "config": self.config, "passed": self.passed,
                "checks": [_jsonable(asdict(c)) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


# ---------------------------------------------------------------------------
# suites behind ``avgsad check``

BALL_BUDGET = 20_000


def duality_gap(g: Graph, init: Profile, seq: UpdateSequence, root: int, exact: bool = False):
    """eta_t(root) - sum_v xi_t(v, root) eta_0(v); exactly zero in rational mode."""
    eta = run(g, init, seq, exact=exact)[root]
    xi = dual_contributions(g, root, seq, exact=exact)
    if exact:
        return eta - sum(x * Fraction(init[v]) for v, x in xi.values.items())
    return eta - math.fsum(x * init[v] for v, x in xi.values.items())


def _ball_radius(g: Graph, root: int, budget: int) -> int:
    r = 1
    while len(bfs_all(g, root, r + 1)) <= budget:
        r += 1
    return r


def local_events(g: Graph, cfg: ClockConfig, horizon: float, root: int, backward: bool = False,
                 cap: int = BALL_BUDGET):
    """Events relevant to ``root`` as (host graph, gid, a, b, mu, mode).

    Finite graphs give their full sequence.  Infinite graphs are explored
    lazily up to ``cap`` vertices; past that the largest finite ball around
    ``root`` with at most BALL_BUDGET vertices is used instead, driven by the
    same clocks.
    ``a`` and ``b`` index into ``gid``.
    """
    if not g.is_finite:
        try:
            loc = explore_local(g, root, cfg, horizon, backward=backward, cap=cap)
            return g, loc.gid, loc.a, loc.b, loc.mu, "lazy"
        except ResourceError:
            g = g.ball(root, _ball_radius(g, root, BALL_BUDGET))
            mode = "ball"
    else:
        mode = "finite"
    seq = sample_finite(g, cfg, horizon)
    return (g, g.ids, np.searchsorted(g.ids, seq.edges_u), np.searchsorted(g.ids, seq.edges_v),
            np.ascontiguousarray(seq.mus, dtype=float), mode)


def _pick(g: Graph, root: int | None, rng: np.random.Generator) -> int:
    if root is not None:
        return root
    if g.is_finite:
        return int(g.ids[rng.integers(g.n_vertices)])
    from .experiments import default_root

    return default_root(g)


def _config(g, cfg, **extra) -> dict:
    out = {"graph": graph_name(g), "intensity": cfg.intensity, "mu": str(cfg.mu_law), "seed": cfg.seed}
    out.update(extra)
    return out


def duality_suite(g: Graph, law: InitialLaw, cfg: ClockConfig, trials: int, horizon: float,
                  root: int | None = None, n_updates: int | None = None, exact: bool = False,
                  tolerance: float = 1e-10) -> DiagnosticReport:
    """Forward value at a root against its dual SAD representation, per trial."""
    rep = DiagnosticReport("duality", _config(g, cfg, law=str(law), trials=trials, horizon=horizon,
                                              n_updates=n_updates, exact=exact))
    worst, witness = 0.0, None
    for k in range(trials):
        cfg_k, law_k = replica_configs(cfg, law, derive_seed(cfg.seed, k))
        r = _pick(g, root, np.random.default_rng(derive_seed(cfg.seed, k, 3)))
        if g.is_finite:
            seq = sample_finite(g, cfg_k, horizon)
        else:
            from .schedule import explore_region

            seq = explore_region(g, r, cfg_k, horizon)[1]
        if n_updates is not None:
            seq = UpdateSequence(seq.times[:n_updates], seq.edges_u[:n_updates], seq.edges_v[:n_updates],
                                 seq.mus[:n_updates], seq.horizon, seq.seed, seq.intensity)
        init = law_k.profile(g)
        gap = abs(duality_gap(g, init, seq, r, exact=exact))
        if gap > worst or witness is None:
            worst, witness = gap, {"trial": k, "root": g.label(r), "steps": len(seq)}
    tol = 0.0 if exact else tolerance
    rep.add(CheckResult("duality", bool(worst <= tol), trials, float(worst), tol, witness))
    return rep


def bounds_suite(g: Graph, cfg: ClockConfig, trials: int, horizon: float, root: int | None = None,
                 n_random: int = 10_000, exhaustive_limit: int = 15) -> DiagnosticReport:
    """Level bound 1/(d+1) and the subset inequality on forward SAD profiles."""
    rep = DiagnosticReport("bounds", _config(g, cfg, trials=trials, horizon=horizon,
                                             n_random=n_random))
    level, subsets = BoundResult(), SweepResult()
    modes = set()
    for k in range(trials):
        cfg_k = cfg.with_seed(derive_seed(cfg.seed, k))
        rng = np.random.default_rng(derive_seed(cfg.seed, k, 3))
        src = _pick(g, root, rng)
        host, gid, a, b, mu, mode = local_events(g, cfg_k, horizon, src, backward=False)
        modes.add(mode)
        water = np.zeros(gid.shape[0])
        water[int(np.flatnonzero(gid == src)[0])] = 1.0
        K.apply_events(water, a, b, mu, False)
        nz = np.flatnonzero(water)
        prof = SadProfile({int(gid[i]): float(water[i]) for i in nz}, src)
        level.merge(level_bound_check(prof, host))
        subsets.merge(subset_sweep(prof, PotentialFunction(host, src), exhaustive_limit, n_random, rng))
    rep.config["host"] = sorted(modes)
    rep.add(CheckResult("level_bound", level.violations == 0, level.checked, level.worst_slack, TOL,
                        level.witness, {"violations": level.violations}))
    rep.add(CheckResult("subset_inequality", subsets.violations == 0, subsets.checked,
                        subsets.worst_slack, TOL, subsets.witness,
                        {"violations": subsets.violations, "exhaustive": subsets.exhaustive}))
    return rep


def energy_suite(g: Graph, law: InitialLaw, cfg: ClockConfig, trials: int, horizon: float,
                 root: int | None = None) -> DiagnosticReport:
    """Per-step energy decrements and the max/min envelopes along trajectories."""
    rep = DiagnosticReport("energy", _config(g, cfg, law=str(law), trials=trials, horizon=horizon))
    steps, rel, inc, up, down, gap = 0, 0.0, 0, 0, 0, 0.0
    modes = set()
    for k in range(trials):
        cfg_k, law_k = replica_configs(cfg, law, derive_seed(cfg.seed, k))
        r = _pick(g, root, np.random.default_rng(derive_seed(cfg.seed, k, 3)))
        host, gid, a, b, mu, mode = local_events(g, cfg_k, horizon, r, backward=True)
        modes.add(mode)
        values = law_k.sample_many(gid)
        tr = EnergyTracker.track(values.copy(), a, b, mu)
        u, d = K.envelope_violations(values, a, b, mu)
        steps += a.shape[0]
        rel = max(rel, tr.max_rel_error)
        gap = max(gap, tr.cumulative_gap)
        inc += tr.increases
        up += int(u)
        down += int(d)
    rep.config["host"] = sorted(modes)
    rep.add(CheckResult("energy_decrement", rel <= TOL, steps, rel, TOL, None,
                        {"cumulative_gap": gap}))
    rep.add(CheckResult("energy_nonincreasing", inc == 0, steps, float(inc), 0.0))
    rep.add(CheckResult("max_envelope", up == 0, steps, float(up), 0.0))
    rep.add(CheckResult("min_envelope", down == 0, steps, float(down), 0.0))
    return rep


def simplif_suite(g: FiniteGraph, n_updates: int, resolution: float = 0.05, slack: float = TOL,
                  sources=None) -> DiagnosticReport:
    """Best reachable SAD levels: a mu grid never beats mu = 1/2 beyond ``slack``."""
    if not g.is_finite:
        raise ValidationError("check simplif needs a finite graph")
    grid = GridMu(resolution)
    rep = DiagnosticReport("simplif", {"graph": graph_name(g), "n_updates": n_updates,
                                       "resolution": resolution, "slack": slack})
    sources = g.vertices if sources is None else list(sources)
    worst, witness, checked = -np.inf, None, 0
    for s in sources:
        half = max_sad_levels(g, s, n_updates, FIXED_HALF)
        fine = max_sad_levels(g, s, n_updates, grid)
        for v in g.vertices:
            checked += 1
            excess = fine[v] - half[v]
            if excess > worst:
                worst, witness = excess, {"source": g.label(s), "target": g.label(v),
                                          "half": half[v], "grid": fine[v]}
    rep.add(CheckResult("grid_vs_half", bool(worst <= slack), checked, float(worst), slack, witness))
    return rep


SUITES = {"duality": duality_suite, "bounds": bounds_suite, "energy": energy_suite,
          "simplif": simplif_suite}


__all__ = ["PotentialFunction", "potential", "check_subset_inequality", "key_step_holds",
           "subset_sweep", "level_bound_check", "EnergyTracker", "ExtremaTracker", "GridMu",
           "FIXED_HALF", "max_sad_level", "max_sad_levels", "small_graphs", "DiagnosticReport",
           "CheckResult", "duality_gap", "local_events", "duality_suite",
           "bounds_suite", "energy_suite", "simplif_suite"]
