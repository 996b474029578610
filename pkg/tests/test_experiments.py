"""Properties of full-length runs (shared session fixtures with the acceptance suite)."""

import numpy as np

from aimlab.analysis import build_dictionary, compare_runs


def cooperation_bound(log, n=200):
    # full cooperation pays 10 on even labels and 8 on odd ones
    recs = log.records[-n:]
    return float(np.mean([10.0 if r.context_bit == 0 else 8.0 for r in recs]))


def test_trailing_mean_within_realized_bound(aim_runs, baseline_runs):
    for log in list(aim_runs.values()) + list(baseline_runs.values()):
        assert log.trailing_mean() <= cooperation_bound(log) + 1e-12


def test_converged_top_dictionary_entry_is_cooperative(aim_runs):
    for log in aim_runs.values():
        if log.convergence_episode() is not None:
            assert build_dictionary(log).ranked()[0][1].action == "C"


def test_compare_self_identical(aim_runs):
    a, b = compare_runs({"x": aim_runs[0], "y": aim_runs[0]})
    assert (a.convergence_episode, a.trailing_mean, a.top5_share) == (b.convergence_episode, b.trailing_mean, b.top5_share)


def test_pretrained_codes_spread(pretrained):
    assert pretrained.history[-1]["unique_codes"] >= 0.3 * 64
    assert pretrained.history[-1]["recon_loss"] < pretrained.history[0]["recon_loss"]
