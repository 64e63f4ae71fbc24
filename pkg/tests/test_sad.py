from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avgsad.averaging import InitialLaw, Profile, run
from avgsad.graphs import Lattice, RegularTree, bfs_all, cycle, path, random_regular, star
from avgsad.sad import (contribution_matrix, dual_at_root, dual_contributions, forward_sad_at_root,
                        run_sad)
from avgsad.schedule import (ClockConfig, MuLaw, UpdateSequence, UpdateStep, explore_region, reverse,
                             sample_finite)

from test_averaging import matrix_oracle, random_sequence

EMPTY = UpdateSequence([], [], [], [], 0.0)


def test_run_sad_examples():
    g = path(3)
    assert run_sad(g, 0, EMPTY).values == {0: 1.0}
    seq = UpdateSequence.from_edges([(0, 1), (1, 2)], [0.5, 0.5])
    assert run_sad(g, 0, seq).values == {0: 0.5, 1: 0.25, 2: 0.25}


def test_dual_examples():
    g = path(3)
    assert dual_contributions(g, 2, EMPTY).values == {2: 1.0}
    one = UpdateSequence.from_edges([(0, 1)], [0.3])
    assert dual_contributions(g, 0, one).values == {0: 0.7, 1: 0.3}


@given(st.integers(0, 2**32), st.integers(0, 400))
@settings(max_examples=40, deadline=None)
def test_sad_profile_invariants(seed, n_steps):
    rng = np.random.default_rng(seed)
    g = random_regular(16, 3, seed=seed % 5)
    seq = random_sequence(g, n_steps, rng)
    src = int(rng.integers(16))
    p = run_sad(g, src, seq)
    vals = np.array(list(p.values.values()))
    assert np.all(vals > 0) and np.all(vals <= 1)
    assert abs(vals.sum() - 1) <= 1e-12
    # support is connected to the source through applied edges
    used = {v: [] for v in p.values}
    for s in seq:
        if s.u in used and s.v in used:
            used[s.u].append(s.v)
            used[s.v].append(s.u)
    from avgsad.graphs import from_edges

    sub = from_edges(sorted(used), {tuple(sorted((a, b))) for a in used for b in used[a]}) if len(used) > 1 else None
    if sub is not None:
        assert set(bfs_all(sub, src)) == set(used)


@given(st.integers(0, 2**32), st.integers(0, 300))
@settings(max_examples=40, deadline=None)
def test_contributions_match_matrix_oracle(seed, n_steps):
    rng = np.random.default_rng(seed)
    g = random_regular(10, 4, seed=seed % 3)
    seq = random_sequence(g, n_steps, rng)
    m = np.column_stack([matrix_oracle(10, seq, np.eye(10)[u]) for u in range(10)])  # m[v, u] = xi(u, v)
    for v in (0, 3):
        dual = dual_contributions(g, v, seq)
        assert np.allclose([dual[u] for u in range(10)], m[v], atol=1e-13)
    fwd = run_sad(g, 4, seq)
    assert np.allclose([fwd[v] for v in range(10)], m[:, 4], atol=1e-13)


def test_duality_exact_with_integer_initial_values():
    rng = np.random.default_rng(1)
    for trial in range(60):
        n = int(rng.integers(2, 31))
        g = random_regular(n, 2, seed=trial) if n >= 3 else path(2)
        seq = random_sequence(g, int(rng.integers(0, 501)), rng, rational=True)
        init = Profile.from_graph(g, [Fraction(int(x)) for x in rng.integers(-20, 21, size=n)])
        r = int(rng.integers(n))
        eta = run(g, init, seq)[r]
        xi = dual_contributions(g, r, seq)
        assert eta == sum(x * init[u] for u, x in xi.values.items())


def test_dual_of_dual_is_forward():
    rng = np.random.default_rng(2)
    g = cycle(9)
    seq = random_sequence(g, 150, rng)
    for v in g.vertices:
        assert dual_contributions(g, v, reverse(seq)).values == run_sad(g, v, seq).values


def test_forward_and_dual_readings_agree():
    rng = np.random.default_rng(3)
    g = random_regular(14, 3, seed=3)
    seq = random_sequence(g, 200, rng, rational=True)
    for u, v in [(0, 5), (2, 2), (7, 13)]:
        assert run_sad(g, u, seq)[v] == dual_contributions(g, v, seq)[u]
    fseq = random_sequence(g, 200, rng)
    for u, v in [(0, 5), (2, 2), (7, 13)]:
        assert run_sad(g, u, fseq)[v] == pytest.approx(dual_contributions(g, v, fseq)[u], abs=1e-15)


def test_contribution_matrix():
    g = cycle(8)
    cm0 = contribution_matrix(g, range(8), range(8), EMPTY)
    assert all(cm0[(u, v)] == (1.0 if u == v else 0.0) for u in range(8) for v in range(8))
    seq = sample_finite(g, ClockConfig(mu_law=MuLaw("uniform", 0, 0.5), seed=2), 3.0)
    cm = contribution_matrix(g, range(8), range(8), seq)
    for k in range(8):
        assert abs(cm.row_sums[k] - 1) <= 1e-12 and abs(cm.col_sums[k] - 1) <= 1e-12
        assert abs(sum(cm[(k, v)] for v in range(8)) - 1) <= 1e-12
    for (u, v), x in cm.entries.items():
        assert x <= 1 / (g.distance(u, v) + 1) + 1e-12
    lines = cm.to_csv(g).splitlines()
    assert lines[0] == "source,target,distance,xi,bound"
    assert len(lines) == 65


def test_lazy_dual_matches_eager_dual():
    g = random_regular(30, 3, seed=5)
    for seed in range(20):
        cfg = ClockConfig(mu_law=MuLaw("uniform", 0, 0.5), seed=seed)
        eager = dual_contributions(g, 4, sample_finite(g, cfg, 2.5))
        lazy = dual_at_root(g, cfg, 2.5, 4)
        assert lazy.values == eager.values
        fwd_eager = run_sad(g, 4, sample_finite(g, cfg, 2.5))
        assert forward_sad_at_root(g, cfg, 2.5, 4).values == fwd_eager.values


@pytest.mark.parametrize("g, root", [(Lattice(2), Lattice(2).origin), (RegularTree(2, True), 0)])
def test_infinite_graph_duality(g, root):
    law = InitialLaw.gaussian(0, 1, seed=4)
    for seed in range(20):
        cfg = ClockConfig(mu_law=MuLaw("uniform", 0, 0.5), seed=seed)
        region, seq = explore_region(g, root, cfg, 3.0)
        eta = run(g, law.profile(g), seq)[root]
        xi = dual_at_root(g, cfg, 3.0, root)
        assert abs(eta - sum(x * law.sample(u) for u, x in xi.values.items())) <= 1e-12
        assert set(xi.values) <= region.vertices | set(seq.edges_u.tolist()) | set(seq.edges_v.tolist())


def test_star_center_leaf_contributions_are_bounded():
    g = star(6)
    c, leaf = g.parse_vertex("center"), g.parse_vertex("leaf0")
    for seed in range(50):
        seq = sample_finite(g, ClockConfig(seed=seed), 4.0)
        assert dual_contributions(g, leaf, seq)[c] <= 0.5 + 1e-12
        assert run_sad(g, c, seq)[leaf] <= 0.5 + 1e-12


def test_step_sequence_with_fractions_in_steps():
    steps = [UpdateStep(0, 1, Fraction(1, 3), 1.0), UpdateStep(1, 2, Fraction(1, 2), 2.0)]
    seq = UpdateSequence.from_steps(steps)
    p = run_sad(path(3), 0, seq)
    assert p.values == {0: Fraction(2, 3), 1: Fraction(1, 6), 2: Fraction(1, 6)}
