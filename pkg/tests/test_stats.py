import math

import pytest

from ndisco.analysis.stats import (
    binomial_sigma,
    empirical_stats,
    median_completion,
    slowdown_ratio,
    stats_rows,
    wilson_interval,
    within_sigmas,
    write_stats_csv,
)
from ndisco.engine_sync import DiscoveryReport

Z95 = 1.959963984540054


def hand_wilson(k, n, z=Z95):
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


@pytest.mark.parametrize("k,n", [(0, 10), (7, 10), (450, 500), (500, 500), (1, 3)])
def test_wilson_matches_closed_form(k, n):
    lo, hi = wilson_interval(k, n)
    elo, ehi = hand_wilson(k, n)
    assert lo == pytest.approx(max(0.0, elo), abs=1e-12)
    assert hi == pytest.approx(min(1.0, ehi), abs=1e-12)


def test_wilson_width_shrinks_like_inverse_root_n():
    w = [(lambda ci: ci[1] - ci[0])(wilson_interval(n // 2, n)) for n in (100, 400, 1600)]
    assert w[0] / w[1] == pytest.approx(2, rel=0.02)
    assert w[1] / w[2] == pytest.approx(2, rel=0.01)


def test_wilson_rejects_no_trials():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_within_sigmas():
    assert binomial_sigma(0.25, 10_000) == pytest.approx(0.0043301, rel=1e-4)
    assert within_sigmas(0.26, 0.25, 10_000)
    assert not within_sigmas(0.27, 0.25, 10_000)


def rep(discovery, success=True, tpl=None):
    links = [(0, 1, None), (1, 0, None)][: len(discovery)]
    return DiscoveryReport("sync" if tpl is None else "async", links, discovery, discovery, 0,
                           max([d or 0 for d in discovery]), success, tpl)


def test_empirical_stats_and_medians():
    reps = [rep([3, 5]), rep([2, 9]), rep([1, None], success=False)]
    s = empirical_stats(reps, bound=6)
    assert s["trials"] == 3
    assert s["success_rate"] == pytest.approx(2 / 3)
    assert s["within_bound_rate"] == pytest.approx(1 / 3)
    assert s["completion_max"] == 9
    assert median_completion(reps) == 9
    assert slowdown_ratio([rep([10]), rep([20])], [rep([5]), rep([5])]) == 3
    with pytest.raises(ValueError):
        empirical_stats([])


def test_async_completion_in_frame_lengths():
    r = rep([1_080_000, 360_000], tpl=720_000)
    assert empirical_stats([r])["completion_max"] == 1.5


def test_stats_csv_golden(tmp_path):
    rows = stats_rows("demo", 0, 7, rep([3, 5]), 4.0)
    rows += stats_rows("demo", 1, 7, rep([2, None], success=False), 4.0)
    rows += stats_rows("demo", 2, 7, DiscoveryReport("async", [(0, 1, 2)], [360_000], [360_000], 0,
                                                     360_000, True, 720_000), None)
    path = tmp_path / "stats.csv"
    write_stats_csv(path, rows)
    assert path.read_text() == (
        "scenario_id,trial,seed,link_from,link_to,band,discovery_from_Ts,completion_from_Ts,success,within_bound\n"
        "demo,0,7,0,1,,3,5,1,0\n"
        "demo,0,7,1,0,,5,5,1,0\n"
        "demo,1,7,0,1,,2,,0,0\n"
        "demo,1,7,1,0,,,,0,0\n"
        "demo,2,7,0,1,2,0.5,0.5,1,\n"
    )
