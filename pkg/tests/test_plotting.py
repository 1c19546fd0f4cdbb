import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from routine_rl.errors import UsageError
from routine_rl.plotting import curve_series, group_label, plot_histograms, plot_learning_curves, read_metrics

HEADER = ["seed", "epoch", "env_steps", "mean_return", "mean_policy_queries"]


def write_csv(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        w.writerows(rows)
    return path


def rows_for(seeds, ret):
    return [[s, e, 100 * e, ret(s, e), 50.0] for s in seeds for e in (1, 2, 3)]


def test_constant_metric_has_zero_band():
    rows = [dict(zip(HEADER, map(float, r))) for r in rows_for([0, 1, 2], lambda s, e: 7.0)]
    s = curve_series(rows, "mean_return", "x")
    assert s.seeds == 3
    np.testing.assert_array_equal(s.std, 0.0)
    np.testing.assert_array_equal(s.mean, 7.0)


def test_band_is_population_std_over_seeds():
    rows = [dict(zip(HEADER, map(float, r))) for r in rows_for([0, 1], lambda s, e: float(s * 2 + e))]
    s = curve_series(rows, "mean_return", "x")
    np.testing.assert_allclose(s.mean, [2.0, 3.0, 4.0])
    np.testing.assert_allclose(s.std, [1.0, 1.0, 1.0])


def test_two_groups_give_two_labeled_series(tmp_path):
    a = write_csv(tmp_path / "routine" / "metrics.csv", rows_for([0, 1], lambda s, e: e))
    b = write_csv(tmp_path / "td3" / "metrics.csv", rows_for([0], lambda s, e: 2 * e))
    out = tmp_path / "fig.svg"
    plotted = plot_learning_curves([a, b], out)
    assert [s.label for s in plotted["mean_return"]] == ["routine", "td3"]
    assert [s.seeds for s in plotted["mean_return"]] == [2, 1]
    assert ET.parse(out).getroot().tag.endswith("svg")


def test_svg_output_is_reproducible(tmp_path):
    a = write_csv(tmp_path / "m.csv", rows_for([0], lambda s, e: e))
    plot_learning_curves([a], tmp_path / "one.svg")
    plot_learning_curves([a], tmp_path / "two.svg")
    assert (tmp_path / "one.svg").read_bytes() == (tmp_path / "two.svg").read_bytes()


def test_empty_inputs_raise(tmp_path):
    with pytest.raises(UsageError):
        plot_learning_curves([], tmp_path / "x.svg")
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(HEADER) + "\n")
    with pytest.raises(UsageError):
        read_metrics(empty)


def test_group_label():
    assert group_label("runs/base/metrics.csv") == "base"
    assert group_label("runs/metrics_seed0.csv") == "metrics_seed0"


def test_histogram_svg_parses(tmp_path):
    edges = np.linspace(0, 1, 5)
    path = plot_histograms(edges, {"action": np.array([1, 2, 0, 0]), "routine": np.array([0, 1, 1, 1])},
                           tmp_path / "h.svg")
    ET.parse(path)
