"""Smoke test for the ot_orch_py extension.

Install the extension first (needs maturin):

    pip install --no-build-isolation ./crates/python

then run ``python python/smoke_test.py``.
"""

import math
import tempfile
from pathlib import Path

import ot_orch_py as oo


def check_ot():
    assert oo.wasserstein_1d([0.0], [1.0]) == 1.0
    assert abs(oo.wasserstein_1d([0.0, 1.0], [0.0, 1.0], p=2)) < 1e-12
    zero_one = [[0.0, 1.0], [1.0, 0.0]]
    assert abs(oo.wasserstein_discrete([0.9, 0.1], [0.2, 0.8], zero_one) - 0.7) < 1e-12
    cost, plan = oo.optimal_plan([0.5, 0.5], [0.5, 0.5], zero_one)
    assert cost == 0.0 and plan == [[0.5, 0.0], [0.0, 0.5]]
    bary = oo.barycenter_1d([[0.0], [2.0]], grid=8)
    assert all(abs(x - 1.0) < 1e-12 for x in bary)
    tail, bound = oo.margin_bound(1.0, 0.5)
    assert 0.0 < tail <= bound


def check_policy_and_survival():
    pi = oo.softmax_policy([0.5, 0.5], [0.1, 0.9], 1.0, 5.0)
    assert abs(sum(pi) - 1.0) < 1e-12 and pi[0] > pi[1]
    assert abs(oo.survival_prob(1.0, math.log(2.0)) - 0.5) < 1e-12
    assert oo.frailty_reward(False, 0.3, 1.0) == 0.0


def check_episodes():
    cfg = oo.Config("[run]\nhorizon = 50\nseeds = [1, 2, 3]\n")
    assert cfg.horizon == 50 and cfg.environment == "iid_g"
    again = oo.Config(cfg.to_toml())
    assert again.to_toml() == cfg.to_toml()

    a = oo.run_episode("bot_orch", cfg, 7)
    b = oo.run_episode("bot_orch", cfg, 7)
    assert len(a) == 50 and a.chosen == b.chosen and a.to_csv() == b.to_csv()
    m = a.metrics()
    assert abs(m["cum_net_utility"] + cfg.lambda_ * m["cum_alignment_cost"] - m["cum_reward"]) < 1e-9

    zero = cfg.with_overrides(["lambda=0"])
    bot = oo.run_seeds("bot_orch", zero)
    no_ot = oo.run_seeds("no_ot", zero)
    assert [t.to_csv() for t in bot] == [t.to_csv() for t in no_ot]

    per_seed, agg = oo.evaluate("ucb1", cfg, parallel=2)
    assert len(per_seed) == 3 and agg["oracle_regret"][2] == 3

    triage = oo.Config("", ["env.kind=\"triage\"", "num_agents=2", "horizon=40", "seeds=[1, 2]"])
    rows = oo.lambda_sweep([0.0, 3.0], triage)
    assert len(rows) == 5
    no_ot_row = next(r for r in rows if r["label"] == "no_ot")
    assert rows[0]["aggregates"] == no_ot_row["aggregates"]
    assert "team_accuracy" in rows[0]["aggregates"]


def check_checks_and_data():
    results = oo.run_checks("ot")
    assert results and all(r["passed"] for r in results)
    mean, hw = oo.mean_ci([0.0, 1.0])
    assert mean == 0.5 and abs(hw - 6.353) < 1e-3
    with tempfile.TemporaryDirectory() as d:
        path = oo.gen_surrogate_dataset(40, 3, 1, Path(d) / "s.csv")
        assert len(Path(path).read_text().splitlines()) == 41
    try:
        oo.Config("", ["nonsense=1"])
    except ValueError:
        pass
    else:
        raise AssertionError("bad override accepted")


if __name__ == "__main__":
    check_ot()
    check_policy_and_survival()
    check_episodes()
    check_checks_and_data()
    print("smoke test passed")
