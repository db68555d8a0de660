"""Smoke test for the ets_causal extension module.

Build and install first, e.g. `pip install --no-build-isolation crates/python`.
"""

import ets_causal


def main():
    panel = ets_causal.Panel.simulate("did", seed=5, n_firms=1500)
    assert len(panel) == 1500 * len(panel.years())
    firms = panel.firms()
    assert any(t for _, _, t in firms) and not all(t for _, _, t in firms)

    estimates = ets_causal.estimate_att(panel, bootstrap_reps=19, seed=1)
    labels = {(e.period, e.estimator) for e in estimates}
    assert ("Phase II", "NN(1:1)") in labels and ("Phase II", "OLS w/R") in labels
    for e in estimates:
        assert e.se is not None and e.se > 0

    coef, se, ll = ets_causal.fit_probit([[0.0], [1.0], [2.0], [3.0], [1.5], [0.5]],
                                         [False, False, True, True, False, True])
    assert len(coef) == 2 and len(se) == 2 and ll < 0

    pairs = ets_causal.nn_match([0.2, 0.5, 0.1, 0.45, 0.9], [True, True, False, False, False], k=1)
    assert pairs == [(0, 2, 1.0), (1, 3, 1.0)], pairs

    sfa = ets_causal.Panel.simulate("sfa", seed=2, n_firms=300)
    effects = ets_causal.satt(sfa, k=[1, 5])
    assert {e.period for e in effects} >= {"Phase I", "Phase II", "2005"}

    assert abs(ets_causal.conditional_inefficiency(-0.3, 0.3, 1e-3, 0.15) - 0.3) < 1e-2
    assert ets_causal.period_label("phase2") == "Phase II"

    config = 'version = "ets-causal-config-v1"\nseed = 3\n[att]\nbootstrap_reps = 9\n[dgp]\nkind = "did"\nn_firms = 800\n'
    files = dict(ets_causal.run_stage(config, "att"))
    assert files["att.csv"].startswith("# ets-causal ")
    assert files == dict(ets_causal.run_stage(config, "att"))
    print("smoke test passed:", ets_causal.__version__)


if __name__ == "__main__":
    main()
