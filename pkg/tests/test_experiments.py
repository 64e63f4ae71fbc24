import csv
import io
import json

import numpy as np
import pytest

from avgsad.averaging import InitialLaw, Profile, replica_configs, run
from avgsad.errors import ValidationError
from avgsad.experiments import (contribution_decay, finite_consensus, l2_convergence, mean_preservation,
                                symmetry_test)
from avgsad.graphs import Lattice, complete, cycle, path, star
from avgsad.sad import dual_contributions
from avgsad.schedule import ClockConfig, MuLaw, derive_seed, sample_finite

Z2 = Lattice(2)


def test_mean_dirac_is_exact():
    rep = mean_preservation(Z2, InitialLaw.dirac(3.0), ClockConfig(seed=1), [0, 1, 4], 100)
    assert rep.passed
    assert all(r["estimate"] == 3.0 and r["stderr"] == 0.0 for r in rep.records)


def test_mean_needs_replicas():
    with pytest.raises(ValidationError):
        mean_preservation(Z2, InitialLaw.uniform(0, 1), ClockConfig(), [1], 99)


def test_mean_at_time_zero_is_the_sample_mean_of_fresh_draws():
    law, cfg = InitialLaw.gaussian(0, 1), ClockConfig(seed=6)
    rep = mean_preservation(Z2, law, cfg, [0], 200)
    draws = []
    for r in range(200):
        _, law_r = replica_configs(cfg, law, derive_seed(cfg.seed, r))
        draws.append(law_r.sample(Z2.origin))
    assert rep.records[0]["estimate"] == pytest.approx(np.mean(draws), abs=1e-15)
    assert rep.records[0]["stderr"] == pytest.approx(np.std(draws, ddof=1) / np.sqrt(200))


def test_mean_on_finite_graph_matches_eager_runs():
    g, law, cfg = cycle(12), InitialLaw.uniform(0, 1), ClockConfig(mu_law=MuLaw("uniform", 0, 0.5), seed=2)
    rep = mean_preservation(g, law, cfg, [2.0], 100, root=3)
    eager = []
    for r in range(100):
        cfg_r, law_r = replica_configs(cfg, law, derive_seed(cfg.seed, r))
        eager.append(run(g, law_r.profile(g), sample_finite(g, cfg_r, 2.0))[3])
    assert rep.records[0]["estimate"] == pytest.approx(np.mean(eager), abs=1e-14)


def test_l2_at_time_zero_is_the_variance():
    law = InitialLaw.uniform(0, 1)
    rep = l2_convergence(Z2, law, ClockConfig(seed=3), [0], 400)
    r = rep.records[0]
    assert r["bound"] == pytest.approx(1 / 12) and r["bound_stderr"] <= 1e-15
    assert abs(r["estimate"] - 1 / 12) <= 4 * r["stderr"]
    assert r["duality_error"] == 0


def test_l2_on_complete_graph_settles_at_variance_over_n():
    law = InitialLaw.gaussian(0, 1)
    rep = l2_convergence(complete(10), law, ClockConfig(seed=4), [0.5, 1, 2, 20], 400, root=0)
    assert rep.passed
    last = rep.records[-1]
    assert abs(last["estimate"] - 0.1) <= 4 * last["stderr"]
    assert last["bound"] == pytest.approx(0.1, abs=1e-6)
    assert max(r["duality_error"] for r in rep.records) <= 1e-12


def test_decay_at_time_zero_is_one():
    rep = contribution_decay(Z2, ClockConfig(seed=1), [0], 5)
    assert rep.records[0]["estimate"] == 1.0 and rep.records[0]["sender_median"] == 1.0


def test_decay_on_z2_medians_decrease():
    rep = contribution_decay(Z2, ClockConfig(seed=5), [2.0 ** k for k in range(6)], 15)
    assert rep.verdicts["sender_pathwise_nonincreasing"].passed
    assert rep.verdicts["recipient_median_decreasing"].passed
    assert rep.verdicts["sender_median_decreasing"].passed


def test_decay_ball_cap():
    rep = contribution_decay(Z2, ClockConfig(seed=5), [1, 2, 4, 8], 20, eps=0.5)
    v = rep.verdicts["recipient_below_ball_cap"]
    assert v.passed and v.statistics["ball_size"] == 13  # radius 2 in Z^2
    assert all(r["cap_median"] >= 0.5 for r in rep.records)


def test_decay_repeated_horizons_fail_strictness():
    rep = contribution_decay(Z2, ClockConfig(seed=5), [1, 1], 5)
    assert rep.verdicts["recipient_median_decreasing"].passed is False
    assert not rep.passed


def test_symmetry_at_time_zero_is_all_zero():
    rep = symmetry_test(Z2, ClockConfig(), 0.0, 1000, [(Z2.origin, Z2.vertex((1, 0)))])
    assert rep.passed and rep.records[0]["estimate"] == 0 and rep.records[0]["reverse"] == 0


def test_symmetry_samples_are_exact_duals():
    from avgsad.experiments import _pair_sample

    g = cycle(9)
    cfg = ClockConfig(mu_law=MuLaw("uniform", 0, 0.5), seed=3)
    for r in range(10):
        cfg_r = cfg.with_seed(derive_seed(cfg.seed, 1, r))
        want = dual_contributions(g, 4, sample_finite(g, cfg_r, 2.0))[1]
        assert _pair_sample(g, cfg, 2.0, 1, 4, 1, r) == want


def test_symmetry_star_center_leaf():
    g = star(6)
    c, leaf = g.parse_vertex("center"), g.parse_vertex("leaf0")
    rep = symmetry_test(g, ClockConfig(seed=1), 2.0, 2000, [(c, leaf)], check_means=True)
    assert rep.passed
    assert rep.verdicts["ks_equal_in_law"].statistics["pairs"][0]["p"] >= 0.01


def test_symmetry_rejects_bad_input():
    with pytest.raises(ValidationError):
        symmetry_test(Z2, ClockConfig(), 1.0, 999, [(0, 1)])
    with pytest.raises(ValidationError):
        symmetry_test(Z2, ClockConfig(), 1.0, 1000, [(Z2.origin, Z2.origin)])


def test_consensus_examples():
    rep = finite_consensus(path(2), Profile({0: 1.0, 1: 0.0}), ClockConfig(seed=1))
    assert rep.passed and rep.final_values.tolist() == [0.5, 0.5]
    g = cycle(100)
    rep = finite_consensus(g, InitialLaw.uniform(0, 1, seed=2).profile(g), ClockConfig(seed=2))
    assert rep.passed and rep.records[0]["gap"] <= 1e-9
    single = finite_consensus(path(1), Profile({0: 4.0}), ClockConfig())
    assert single.passed and single.records[0]["n"] == 0


def test_consensus_budget_is_inconclusive():
    g = cycle(100)
    rep = finite_consensus(g, InitialLaw.uniform(0, 1, seed=2).profile(g), ClockConfig(), max_steps=10)
    v = rep.verdicts["consensus"]
    assert v.passed is None and v.statistics["budget_exhausted"]
    assert rep.passed  # inconclusive is not a failure


def test_parallel_matches_serial():
    law, cfg = InitialLaw.pareto(2.5, 1.0), ClockConfig(seed=9)
    one = l2_convergence(Z2, law, cfg, [1, 2], 40, jobs=1)
    two = l2_convergence(Z2, law, cfg, [1, 2], 40, jobs=2)
    assert one.to_json() == two.to_json()


def test_report_serialisation():
    rep = contribution_decay(Z2, ClockConfig(seed=2), [1, 2, 4], 6)
    assert rep.series() == ["estimate", "recipient_mean", "sender_mean"]
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["t", "estimate", "stderr", "n"] and len(rows) == 4
    assert float(rows[2][0]) == 2.0 and rows[2][3] == "6"
    rows = list(csv.reader(io.StringIO(rep.to_csv("sender_mean"))))
    assert float(rows[1][1]) == rep.records[0]["sender_mean"]
    payload = json.loads(rep.to_json())
    assert payload["name"] == "decay" and set(payload["verdicts"]) >= {"sender_pathwise_nonincreasing"}
    assert payload["config"]["graph"] == "lattice:d=2"
