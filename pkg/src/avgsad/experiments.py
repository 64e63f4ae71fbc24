"""Monte Carlo experiments on the averaging process and its SAD dual.

Replica ``r`` of an experiment with master seed ``s`` uses the replica seed
``derive_seed(s, r)``; its clocks and initial values come from the CLOCK and
INIT sub-streams of that seed (:func:`avgsad.averaging.replica_configs`).
Replicas share nothing, so results are identical for any ``jobs`` value.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from . import _kernels as K
from .averaging import InitialLaw, Profile, replica_configs
from .diagnostics import _jsonable
from .errors import ValidationError
from .graphs import FiniteGraph, Graph, Lattice, RegularTree, graph_name
from .schedule import ClockConfig, _edge_arrays, derive_seed, explore_local


@dataclass
class Verdict:
    passed: bool | None  # None = inconclusive
    tolerance: str
    replicas: int
    statistics: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    name: str
    config: dict
    records: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed is not False for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return _jsonable({
            "name": self.name,
            "config": self.config,
            "passed": self.passed,
            "records": self.records,
            "verdicts": {k: asdict(v) for k, v in self.verdicts.items()},
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def series(self) -> list[str]:
        """Names of the time series stored in ``records`` (main one first)."""
        out = ["estimate"]
        for key in self.records[0] if self.records else []:
            if key.endswith("_stderr") and key != "stderr":
                out.append(key[: -len("_stderr")])
        return out

    def to_csv(self, series: str = "estimate") -> str:
        err = "stderr" if series == "estimate" else f"{series}_stderr"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "estimate", "stderr", "n"])
        for r in self.records:
            w.writerow([repr(float(r["t"])), repr(float(r[series])), repr(float(r[err])), r["n"]])
        return buf.getvalue()


def default_root(g: Graph) -> int:
    if isinstance(g, Lattice):
        return g.origin
    if isinstance(g, RegularTree):
        return 0
    return int(g.ids[0])


def map_replicas(fn, n: int, jobs: int = 1, chunk: int = 16) -> list:
    """[fn(0), ..., fn(n-1)], optionally across processes; order is by index."""
    if jobs <= 1 or n <= chunk:
        return [fn(r) for r in range(n)]
    blocks = [range(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = list(ex.map(partial(_run_block, fn), blocks))
    return [x for part in parts for x in part]


def _run_block(fn, block):
    return [fn(r) for r in block]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _base_config(g, cfg, **extra) -> dict:
    out = {"graph": graph_name(g), "intensity": cfg.intensity, "mu": str(cfg.mu_law), "seed": cfg.seed}
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# per-replica samplers (module level so they pickle)


def _root_sample(g, law, cfg, horizons, root, r):
    """For each horizon: (eta_t(root), max_u xi_t(u, root), sum_u xi_t(u, root) eta_0(u))."""
    seed_r = derive_seed(cfg.seed, r)
    cfg_r, law_r = replica_configs(cfg, law, seed_r)
    out = np.empty((len(horizons), 3))
    for k, t in enumerate(horizons):
        loc = explore_local(g, root, cfg_r, t, backward=True)
        eta0 = law_r.sample_many(loc.gid)
        values = eta0.copy()
        K.apply_events(values, loc.a, loc.b, loc.mu, False)
        water = np.zeros(loc.gid.shape[0])
        water[0] = 1.0
        K.apply_events(water, loc.a, loc.b, loc.mu, True)
        out[k] = values[0], water.max(), float(np.dot(water, eta0))
    return out


def _pair_sample(g, cfg, horizon, source, target, salt, r):
    """xi_t(source, target): level at ``source`` of the dual SAD from ``target``."""
    cfg_r = cfg.with_seed(derive_seed(cfg.seed, salt, r))
    loc = explore_local(g, target, cfg_r, horizon, backward=True)
    water = np.zeros(loc.gid.shape[0])
    water[0] = 1.0
    K.apply_events(water, loc.a, loc.b, loc.mu, True)
    hit = np.flatnonzero(loc.gid == source)
    return float(water[hit[0]]) if hit.size else 0.0


def _sender_trajectory(g, cfg, horizons, u, r):
    """X_t(u) on the grid from one forward SAD run (forward clusters are nested)."""
    cfg_r = cfg.with_seed(derive_seed(cfg.seed, r))
    loc = explore_local(g, u, cfg_r, max(horizons), backward=False)
    water = np.zeros(loc.gid.shape[0])
    water[0] = 1.0
    return K.forward_max_trajectory(water, loc.t, loc.a, loc.b, loc.mu, np.asarray(horizons, dtype=float))


def _decay_sample(g, cfg, horizons, u, v, ball, r):
    cfg_r = cfg.with_seed(derive_seed(cfg.seed, r))
    x = _sender_trajectory(g, cfg, horizons, u, r)
    y = np.empty(len(horizons))
    for k, t in enumerate(horizons):
        loc = explore_local(g, v, cfg_r, t, backward=True)
        water = np.zeros(loc.gid.shape[0])
        water[0] = 1.0
        K.apply_events(water, loc.a, loc.b, loc.mu, True)
        y[k] = water.max()
    if ball is None:
        return x, y, None
    ball_max = np.zeros(len(horizons))
    for w in ball:
        ball_max = np.maximum(ball_max, _sender_trajectory(g, cfg, horizons, w, r))
    return x, y, ball_max


# ---------------------------------------------------------------------------


def mean_preservation(g: Graph, law: InitialLaw, cfg: ClockConfig, horizons, replicas: int,
                      root: int | None = None, confidence: float = 0.99, jobs: int = 1) -> ExperimentReport:
    """E[eta_t(root)] against m1 at each horizon; passes if m1 is in every CI."""
    if replicas < 100:
        raise ValidationError("mean_preservation needs at least 100 replicas")
    root = default_root(g) if root is None else root
    horizons = [float(t) for t in horizons]
    samples = np.array(map_replicas(partial(_root_sample, g, law, cfg, horizons, root), replicas, jobs))
    z = stats.norm.ppf(0.5 + confidence / 2)
    m1 = law.m1
    rep = ExperimentReport("mean", _base_config(g, cfg, law=str(law), horizons=horizons,
                                                replicas=replicas, root=g.label(root),
                                                confidence=confidence))
    inside = []
    for k, t in enumerate(horizons):
        est, se = _mean_se(samples[:, k, 0])
        se = 0.0 if np.isnan(se) else se
        lo, hi = est - z * se, est + z * se
        inside.append(lo <= m1 <= hi)
        rep.records.append({"t": t, "estimate": est, "stderr": se, "n": replicas,
                            "ci_low": lo, "ci_high": hi, "m1": m1, "effect": est - m1})
    rep.verdicts["m1_in_ci"] = Verdict(
        all(inside), f"m1 inside the {confidence:.0%} normal CI at every horizon", replicas,
        {"m1": m1, "inside": inside, "worst_z": max((abs(r["effect"]) / r["stderr"] if r["stderr"] > 0 else 0.0)
                                                  for r in rep.records)})
    return rep


def l2_convergence(g: Graph, law: InitialLaw, cfg: ClockConfig, horizons, replicas: int,
                   root: int | None = None, n_se: float = 2.0, jobs: int = 1) -> ExperimentReport:
    """Centered second moment of eta_t(root) against var * E[max_u xi_t(u, root)].

    Both series come from the same replicas (common random numbers), so the
    comparisons use paired differences.  The bound uses the variance of the
    law, i.e. the second moment after centering, which is the sharper form.
    """
    root = default_root(g) if root is None else root
    horizons = [float(t) for t in horizons]
    samples = np.array(map_replicas(partial(_root_sample, g, law, cfg, horizons, root), replicas, jobs))
    m1, var = law.m1, law.variance
    sq = (samples[:, :, 0] - m1) ** 2
    ymax = samples[:, :, 1]
    rep = ExperimentReport("l2", _base_config(g, cfg, law=str(law), horizons=horizons, replicas=replicas,
                                              root=g.label(root), n_se=n_se, m1=m1, m2=law.m2,
                                              variance=var))
    dominated = []
    for k, t in enumerate(horizons):
        a, a_se = _mean_se(sq[:, k])
        bnd, b_se = _mean_se(var * ymax[:, k])
        d, d_se = _mean_se(sq[:, k] - var * ymax[:, k])
        dominated.append(bool(d <= n_se * d_se))
        rep.records.append({"t": t, "estimate": a, "stderr": a_se, "n": replicas,
                            "bound": bnd, "bound_stderr": b_se, "gap": d, "gap_stderr": d_se,
                            "duality_error": float(np.max(np.abs(samples[:, k, 0] - samples[:, k, 2])))})
    steps = []
    for k in range(len(horizons) - 1):
        e, e_se = _mean_se(sq[:, k + 1] - sq[:, k])
        steps.append({"from": horizons[k], "to": horizons[k + 1], "change": e, "stderr": e_se,
                      "ok": bool(e <= n_se * e_se)})
    rep.verdicts["nonincreasing"] = Verdict(
        all(s["ok"] for s in steps), f"paired change <= {n_se} SE between consecutive horizons",
        replicas, {"steps": steps})
    rep.verdicts["dominated_by_bound"] = Verdict(
        all(dominated), f"second moment <= variance * E[Y_t] + {n_se} SE (paired)", replicas,
        {"gaps": [r["gap"] for r in rep.records], "gap_stderr": [r["gap_stderr"] for r in rep.records]})
    return rep


def contribution_decay(g: Graph, cfg: ClockConfig, horizons, replicas: int, u: int | None = None,
                       v: int | None = None, eps: float | None = None, jobs: int = 1) -> ExperimentReport:
    """Trajectories of X_t(u) = max_w xi_t(u, w) and Y_t(v) = max_w xi_t(w, v).

    With ``eps`` set, also reports the a-priori cap
    max(eps, max over the ball of radius 1/eps around v of X_t(w)) on Y_t(v).
    """
    u = default_root(g) if u is None else u
    v = u if v is None else v
    horizons = sorted(float(t) for t in horizons)
    ball = None
    if eps is not None:
        from .graphs import bfs_all

        ball = sorted(bfs_all(g, v, int(np.floor(1.0 / eps))))
    res = map_replicas(partial(_decay_sample, g, cfg, horizons, u, v, ball), replicas, jobs)
    X = np.array([r[0] for r in res])
    Y = np.array([r[1] for r in res])
    tail = np.maximum.accumulate(Y[:, ::-1], axis=1)[:, ::-1]
    rep = ExperimentReport("decay", _base_config(g, cfg, horizons=horizons, replicas=replicas,
                                                 u=g.label(u), v=g.label(v), eps=eps))
    for k, t in enumerate(horizons):
        x_m, x_se = _mean_se(X[:, k])
        y_m, y_se = _mean_se(Y[:, k])
        rec = {"t": t, "estimate": float(np.median(Y[:, k])), "stderr": y_se, "n": replicas,
               "recipient_mean": y_m, "recipient_mean_stderr": y_se,
               "sender_median": float(np.median(X[:, k])), "sender_mean": x_m, "sender_mean_stderr": x_se,
               "tail_sup_median": float(np.median(tail[:, k]))}
        rep.records.append(rec)
    increases = int(np.count_nonzero(np.diff(X, axis=1) > 0))
    rep.verdicts["sender_pathwise_nonincreasing"] = Verdict(
        increases == 0, "exact: no increase of X_t(u) between observation times", replicas,
        {"increases": increases})
    xm = [r["sender_median"] for r in rep.records]
    ym = [r["estimate"] for r in rep.records]
    rep.verdicts["sender_median_decreasing"] = Verdict(
        all(b < a for a, b in zip(xm, xm[1:])), "strict decrease of the median across the grid",
        replicas, {"medians": xm})
    rep.verdicts["recipient_median_decreasing"] = Verdict(
        all(b < a for a, b in zip(ym, ym[1:])), "strict decrease of the median across the grid",
        replicas, {"medians": ym})
    if ball is not None:
        cap = np.maximum(eps, np.array([r[2] for r in res]))
        bad = int(np.count_nonzero(Y > cap + 1e-12))
        for k, rec in enumerate(rep.records):
            rec["cap_median"] = float(np.median(cap[:, k]))
        rep.verdicts["recipient_below_ball_cap"] = Verdict(
            bad == 0, "exact: Y_t(v) <= max(eps, max_{w in ball} X_t(w)) + 1e-12", replicas,
            {"violations": bad, "ball_size": len(ball)})
    return rep


def symmetry_test(g: Graph, cfg: ClockConfig, horizon: float, replicas: int, pairs,
                  alpha: float = 0.01, check_means: bool = False, jobs: int = 1) -> ExperimentReport:
    """Two-sample KS test of xi_t(u, v) against xi_t(v, u) for each pair.

    The two samples use independent seeds.  Significance is Bonferroni
    corrected across pairs.  With ``check_means`` the means must also agree
    within 2 standard errors.
    """
    if replicas < 1000:
        raise ValidationError("symmetry_test needs at least 1000 replicas")
    pairs = [(int(a), int(b)) for a, b in pairs]
    if any(a == b for a, b in pairs):
        raise ValidationError("symmetry_test needs u != v")
    level = alpha / len(pairs)
    rep = ExperimentReport("symmetry", _base_config(g, cfg, horizon=horizon, replicas=replicas,
                                                    pairs=[[g.label(a), g.label(b)] for a, b in pairs],
                                                    alpha=alpha))
    p_ok, m_ok, rows = [], [], []
    for k, (u, v) in enumerate(pairs):
        fwd = np.array(map_replicas(partial(_pair_sample, g, cfg, horizon, u, v, 2 * k + 1), replicas, jobs))
        bwd = np.array(map_replicas(partial(_pair_sample, g, cfg, horizon, v, u, 2 * k + 2), replicas, jobs))
        if np.array_equal(fwd, bwd) or (np.ptp(fwd) == 0 and np.ptp(bwd) == 0 and fwd[0] == bwd[0]):
            ks, p = 0.0, 1.0
        else:
            res = stats.ks_2samp(fwd, bwd)
            ks, p = float(res.statistic), float(res.pvalue)
        mf, sf = _mean_se(fwd)
        mb, sb = _mean_se(bwd)
        diff = mf - mb
        se = float(np.hypot(sf, sb))
        p_ok.append(p >= level)
        m_ok.append(bool(abs(diff) <= 2 * se) if se > 0 else diff == 0)
        row = {"u": g.label(u), "v": g.label(v), "ks": ks, "p": p, "mean_uv": mf, "mean_vu": mb,
               "mean_diff": diff, "mean_diff_stderr": se}
        rows.append(row)
        rep.records.append({"t": float(horizon), "estimate": mf, "stderr": sf, "n": replicas,
                            "reverse": mb, "reverse_stderr": sb, "pair": k})
    rep.verdicts["ks_equal_in_law"] = Verdict(
        all(p_ok), f"KS p >= {alpha} / {len(pairs)} (Bonferroni)", replicas, {"pairs": rows})
    if check_means:
        rep.verdicts["means_agree"] = Verdict(all(m_ok), "|mean difference| <= 2 SE", replicas,
                                              {"pairs": rows})
    return rep


def finite_consensus(g: FiniteGraph, init: Profile, cfg: ClockConfig, tolerance: float = 1e-6,
                     max_steps: int = 50_000_000, mean_tol: float = 1e-9) -> ExperimentReport:
    """Run until max - min < tolerance; compare the consensus with the initial average."""
    if not g.is_finite:
        raise ValidationError("finite_consensus needs a finite graph")
    values = np.array([float(init[v]) for v in g.vertices])
    initial_avg = float(np.mean(values))
    a, b, keys = _edge_arrays(g, cfg.seed)
    mk, ma, mb = cfg.mu_law.kernel_args
    check_every = max(1, g.n_vertices // 2)
    steps, now, spread = K.stream_until_consensus(
        np.searchsorted(g.ids, a), np.searchsorted(g.ids, b), keys, float(cfg.intensity),
        mk, ma, mb, values, float(tolerance), int(max_steps), check_every)
    consensus = float(np.mean(values))
    gap = abs(consensus - initial_avg)
    rep = ExperimentReport("consensus", _base_config(g, cfg, tolerance=tolerance, max_steps=max_steps,
                                                     mean_tol=mean_tol))
    rep.records.append({"t": float(now), "estimate": consensus, "stderr": float(spread), "n": int(steps),
                        "spread": float(spread), "initial_average": initial_avg, "gap": gap,
                        "max": float(values.max()), "min": float(values.min())})
    reached = spread < tolerance
    rep.verdicts["consensus"] = Verdict(
        bool(reached and gap <= mean_tol) if reached else None,
        f"spread < {tolerance} and |consensus - initial average| <= {mean_tol}", 1,
        {"steps": int(steps), "time": float(now), "spread": float(spread), "gap": gap,
         "budget_exhausted": not reached})
    rep.final_values = values
    return rep


EXPERIMENTS = {
    "mean": mean_preservation,
    "l2": l2_convergence,
    "decay": contribution_decay,
    "symmetry": symmetry_test,
    "consensus": finite_consensus,
}
