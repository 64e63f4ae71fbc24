"""Acceptance criteria, one test each, at the stated tolerances.

Seeds are fixed in advance: criterion k uses master seed k.  Each test
records a PASS/FAIL line that is repeated in the terminal summary.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from avgsad import _kernels as K
from avgsad import diagnostics as D
from avgsad.averaging import InitialLaw, Profile, replica_configs, run, run_at_root
from avgsad.experiments import finite_consensus, l2_convergence, mean_preservation, symmetry_test
from avgsad.graphs import Lattice, RegularTree, complete, cycle, from_edges, path, random_regular, star, torus
from avgsad.schedule import ClockConfig, MuLaw, derive_seed, explore_local, explore_region, sample_finite

from test_averaging import random_sequence

HALF = MuLaw("half")
UNIFORM = MuLaw("uniform", 0.0, 0.5)
Z2 = Lattice(2)


def random_connected_graph(n, rng):
    """Random spanning tree plus a few extra edges."""
    edges = {(int(rng.integers(i)), i) for i in range(1, n)}
    for _ in range(int(rng.integers(0, n + 1))):
        a, b = sorted(int(x) for x in rng.choice(n, size=2, replace=False)) if n > 1 else (0, 0)
        if a != b:
            edges.add((a, b))
    return from_edges(n, sorted(edges))


def test_01_duality(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    exact_bad, float_worst, triples = 0, 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 31))
        g = random_connected_graph(n, rng)
        n_steps = int(rng.integers(0, 501))
        root = int(rng.integers(n))
        seq = random_sequence(g, n_steps, rng, rational=True)
        init = Profile.from_graph(g, [Fraction(int(p), int(q)) for p, q in
                                      zip(rng.integers(-50, 51, size=n), rng.integers(1, 10, size=n))])
        exact_bad += D.duality_gap(g, init, seq, root, exact=True) != 0
        fseq = random_sequence(g, n_steps, rng)
        finit = Profile.from_graph(g, rng.normal(size=n))
        float_worst = max(float_worst, abs(D.duality_gap(g, finit, fseq, root)))
        triples += 1
    elapsed = time.perf_counter() - start
    ok = exact_bad == 0 and float_worst <= 1e-10 and elapsed < 60
    criterion(1, "duality", ok, f"{triples} triples, rational mismatches={exact_bad}, "
                                f"float max|err|={float_worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_02_level_bound(criterion):
    graphs = [(RegularTree(2, True), 3.0), (RegularTree(3), 2.0), (Z2, 3.0), (torus(2, 12), 3.0),
              (random_regular(40, 3, seed=2), 3.0), (random_regular(30, 4, seed=2), 2.0)]
    checked, violations, worst = 0, 0, np.inf
    for g, t in graphs:
        for mu in (HALF, UNIFORM):
            rep = D.bounds_suite(g, ClockConfig(mu_law=mu, seed=2), 400, t, n_random=50, exhaustive_limit=6)
            c = next(c for c in rep.checks if c.name == "level_bound")
            checked += c.checked
            violations += c.details["violations"]
            worst = min(worst, c.worst)
    ok = violations == 0 and checked >= 100_000
    criterion(2, "level bound 1/(d+1)", ok,
              f"{checked} (u,v,run) checks, violations={violations}, min slack={worst:.3e}")
    assert ok


def test_03_subset_inequality(criterion):
    # short horizons keep every support at 15 or fewer, so those runs are fully exhaustive
    cases = [(RegularTree(2, True), 0.5), (Z2, 0.4), (RegularTree(2, True), 1.5), (RegularTree(2, True), 4.0),
             (RegularTree(3), 2.0), (Z2, 1.0), (Z2, 4.0), (torus(2, 8), 3.0)]
    checked, violations, exhaustive_runs, random_runs = 0, 0, 0, 0
    for g, t in cases:
        for mu in (HALF, UNIFORM):
            rep = D.bounds_suite(g, ClockConfig(mu_law=mu, seed=3), 40, t, n_random=10_000,
                                 exhaustive_limit=15)
            c = next(c for c in rep.checks if c.name == "subset_inequality")
            checked += c.checked
            violations += c.details["violations"]
            if c.details["exhaustive"]:
                exhaustive_runs += 1
            else:
                random_runs += 1
    ok = violations == 0
    criterion(3, "subset inequality", ok,
              f"{checked} subsets ({exhaustive_runs} fully exhaustive configs, {random_runs} with random "
              f"10^4 sampling), violations={violations}")
    assert ok


def test_04_energy_ledger(criterion):
    steps, details, ok = 0, [], True
    for g, mu, trials, t in [(cycle(100), UNIFORM, 70, 100.0), (random_regular(50, 3, seed=4), HALF, 30, 150.0)]:
        rep = D.energy_suite(g, InitialLaw.gaussian(0, 1), ClockConfig(mu_law=mu, seed=4), trials, t)
        by = {c.name: c for c in rep.checks}
        steps += by["energy_decrement"].checked
        ok &= by["energy_decrement"].passed and by["energy_nonincreasing"].passed
        details.append(f"rel err {by['energy_decrement'].worst:.1e}, increases {int(by['energy_nonincreasing'].worst)}")
    ok &= steps >= 1_000_000
    criterion(4, "energy ledger", ok, f"{steps} steps; " + "; ".join(details))
    assert ok


def test_05_finite_consensus(criterion):
    details, ok = [], True
    for g in (cycle(100), complete(10)):
        cfg = ClockConfig(seed=5)
        _, law = replica_configs(cfg, InitialLaw.uniform(0, 1), 5)
        rep = finite_consensus(g, law.profile(g), cfg, tolerance=1e-6, mean_tol=1e-9)
        v = rep.verdicts["consensus"]
        ok &= v.passed is True
        details.append(f"{g.n_vertices} vertices: spread {v.statistics['spread']:.1e} after "
                       f"{v.statistics['steps']} steps, |gap| {v.statistics['gap']:.1e}")
    criterion(5, "finite consensus", ok, "; ".join(details))
    assert ok


def test_06_mean_preservation(criterion):
    start = time.perf_counter()
    details, ok = [], True
    for law in (InitialLaw.bernoulli(0.5), InitialLaw.gaussian(0, 1), InitialLaw.pareto(2.5, 1.0)):
        rep = mean_preservation(Z2, law, ClockConfig(seed=6), [0, 1, 2, 4, 8], 10_000, confidence=0.99)
        v = rep.verdicts["m1_in_ci"]
        ok &= bool(v.passed)
        details.append(f"{law}: worst |z|={v.statistics['worst_z']:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    criterion(6, "mean preservation", ok, "; ".join(details) + f"; {elapsed:.0f}s")
    assert ok


@pytest.mark.parametrize("g, intensity", [(Z2, 1.0), (RegularTree(2, True), 0.25)],
                         ids=["z2", "tree3"])
def test_07_l2_convergence(criterion, g, intensity):
    law = InitialLaw.gaussian(0, 1)  # m2 = variance, so the bound is the same in either reading
    rep = l2_convergence(g, law, ClockConfig(intensity=intensity, seed=7), [2.0 ** k for k in range(6)], 1000)
    ok = bool(rep.passed)
    first, last = rep.records[0], rep.records[-1]
    criterion(7, f"L2 convergence on {rep.config['graph']} (rate {intensity})", ok,
              f"E(eta-m1)^2 {first['estimate']:.3f} -> {last['estimate']:.3f}, "
              f"bound {first['bound']:.3f} -> {last['bound']:.3f}, "
              f"nonincreasing={rep.verdicts['nonincreasing'].passed}, "
              f"dominated={rep.verdicts['dominated_by_bound'].passed}")
    assert ok


def test_08_symmetry(criterion):
    s = star(6)
    rooted = RegularTree(2)
    plan = [
        (s, 2.0, [(s.parse_vertex("center"), s.parse_vertex("leaf0"))]),
        (Z2, 2.0, [(Z2.origin, Z2.vertex((1, 0))), (Z2.origin, Z2.vertex((2, 1)))]),
        (rooted, 2.0, [(0, rooted.neighbors(0)[0])]),
        (path(5), 3.0, [(0, 2)]),
    ]
    total = sum(len(p) for _, _, p in plan)
    ok, details = True, []
    for g, t, pairs in plan:
        # per-pair level 0.01 / total: Bonferroni over every pair of the criterion
        rep = symmetry_test(g, ClockConfig(mu_law=UNIFORM, seed=8), t, 1000, pairs,
                            alpha=0.01 * len(pairs) / total)
        ok &= bool(rep.passed)
        for row in rep.verdicts["ks_equal_in_law"].statistics["pairs"]:
            details.append(f"{row['u']}~{row['v']} p={row['p']:.3f}")
    criterion(8, "symmetry in law", ok, f"{total} pairs, level {0.01 / total:.4f}: " + ", ".join(details))
    assert ok and total >= 5


def test_09_mu_half_suffices(criterion):
    worst, checked, ok = -np.inf, 0, True
    graphs = D.small_graphs(4, 5)
    for g in graphs:
        rep = D.simplif_suite(g, 4, resolution=0.05, slack=1e-12)
        c = rep.checks[0]
        ok &= c.passed
        worst = max(worst, c.worst)
        checked += c.checked
    criterion(9, "grid mu never beats mu = 1/2", ok,
              f"{len(graphs)} graphs, {checked} (source, target) pairs, max excess {worst:.2e} (slack 1e-12)")
    assert ok


def test_10_lazy_exactness(criterion):
    law = InitialLaw.gaussian(0, 1)
    radius = 30
    ball = Z2.ball(Z2.origin, radius)
    mismatches, widest = 0, 0
    rng = np.random.default_rng(10)
    for k in range(100):
        t = float(rng.uniform(0.0, 4.0)) if k % 4 else 4.0
        cfg, law_k = replica_configs(ClockConfig(mu_law=UNIFORM), law, derive_seed(10, k))
        region, _ = explore_region(Z2, Z2.origin, cfg, t)
        widest = max(widest, max(Z2.distance(Z2.origin, v) for v in region.vertices))
        lazy = run_at_root(Z2, law_k, cfg, t, Z2.origin)
        eager = run(ball, law_k.profile(ball), sample_finite(ball, cfg, t))[Z2.origin]
        mismatches += lazy != eager
    ok = mismatches == 0 and widest < radius
    criterion(10, "lazy region exactness", ok,
              f"100 seeds, bitwise mismatches={mismatches}, region radius <= {widest} < ball radius {radius}")
    assert ok


def test_11_pathwise_monotonicity(criterion):
    rises, ups, downs, steps = 0, 0, 0, 0
    for k in range(1000):
        cfg = ClockConfig(mu_law=UNIFORM if k % 2 else HALF, seed=derive_seed(11, k))
        loc = explore_local(Z2, Z2.origin, cfg, 4.0, backward=False)
        water = np.zeros(loc.gid.shape[0])
        water[0] = 1.0
        x = K.forward_max_trajectory(water, loc.t, loc.a, loc.b, loc.mu, np.asarray(loc.t, dtype=float))
        rises += int(np.count_nonzero(np.diff(np.concatenate([[1.0], x])) > 0))
    g = random_regular(40, 3, seed=11)
    law = InitialLaw.pareto(2.5, 1.0)
    for k in range(1000):
        cfg, law_k = replica_configs(ClockConfig(mu_law=UNIFORM), law, derive_seed(11, k, 1))
        seq = sample_finite(g, cfg, 10.0)
        u, d = K.envelope_violations(law_k.sample_many(g.ids), np.searchsorted(g.ids, seq.edges_u),
                                     np.searchsorted(g.ids, seq.edges_v), np.asarray(seq.mus, dtype=float))
        ups, downs, steps = ups + int(u), downs + int(d), steps + len(seq)
    ok = rises == 0 and ups == 0 and downs == 0
    criterion(11, "pathwise monotonicity", ok,
              f"1000 sender trajectories (checked after every event): rises={rises}; "
              f"1000 trajectories / {steps} steps: max rises={ups}, min falls={downs}")
    assert ok
