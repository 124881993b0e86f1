import pytest

from rollupbench import calibrate as cal
from rollupbench.sequencer import FITTED_ALPHA, FITTED_BASE_RATE


def test_target_scoring():
    t = cal.Target("x", 2.5, 2.0, 3.0)
    assert t.met and t.normalized_error == 0
    edge = cal.Target("x", 3.0, 2.0, 3.0)
    assert edge.met and edge.normalized_error == pytest.approx(1.0)
    assert not cal.Target("x", 3.1, 2.0, 3.0).met


def test_frange():
    assert cal.frange(0, 1, 0.25) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cal.frange(100, 1000, 50)[-1] == 1000


def test_fitted_defaults_win_their_neighbourhood():
    bases = [FITTED_BASE_RATE - 50, FITTED_BASE_RATE, FITTED_BASE_RATE + 50]
    alphas = [max(FITTED_ALPHA - 0.05, 0.0), FITTED_ALPHA, FITTED_ALPHA + 0.05]
    fits = cal.grid_search(bases, sorted(set(alphas)))
    best = cal.best(fits)
    assert (best.base_service_rate, best.contention_alpha) == (FITTED_BASE_RATE, FITTED_ALPHA)
    keys = [f.key for f in fits]
    assert keys == sorted(keys)


def test_fit_misses_only_the_three_instance_row():
    fit = cal.evaluate(FITTED_BASE_RATE, FITTED_ALPHA)
    missed = [t.name for t in fit.targets if not t.met]
    assert missed == ["completion_3"]
    summary = cal.summarize(fit)
    assert summary["misses"] == 1
    assert summary["targets"]["final_tps"]["met"]
