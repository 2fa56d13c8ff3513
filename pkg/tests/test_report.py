from __future__ import annotations

import io
import json

import numpy as np

from abnormalkit.report import PROFILE_COLUMNS, dumps, gnuplot_script, read_csv, write_csv
from abnormalkit.verify import a_ext, interval_midpoints, oracle_roots, run_criteria


def test_json_has_no_nan_and_plain_numbers():
    text = dumps({"a": float("nan"), "b": np.float64(1.5), "c": [np.int64(2), float("inf")]})
    assert json.loads(text) == {"a": None, "b": 1.5, "c": [2, None]}


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["s", "v"], [[np.float64(0.1), 3], [0.2, 4]])
    rows = read_csv(path)
    assert rows == [{"s": "0.1", "v": "3"}, {"s": "0.2", "v": "4"}]
    buf = io.StringIO()
    write_csv(buf, ["s"], [[1.0]])
    assert buf.getvalue().splitlines() == ["s", "1.0"]


def test_gnuplot_script_refers_to_profile_columns():
    text = gnuplot_script("/tmp/out/profile.csv", "fig.png")
    assert "'profile.csv' using 1:2" in text and "using 1:3" in text
    assert "using 1:4 with steps" in text and "using 1:6 with steps" in text
    assert PROFILE_COLUMNS[1:3] == ("aF", "aExt")


def test_scalar_oracle_roots():
    roots = oracle_roots(a_ext, 4 * np.pi)
    assert np.allclose(roots[0], 2 * np.pi) and np.allclose(roots[2], 4 * np.pi)
    u = roots[1] / 2
    assert abs(np.tan(u) - u) < 1e-9
    assert oracle_roots(np.sin, 1.0) == []


def test_interval_midpoints_separate_roots():
    mids = interval_midpoints()
    assert len(mids) == 9 and mids == sorted(mids)
    assert 6 * np.pi < mids[-1] < 7 * np.pi


def test_criterion_results_are_structured():
    (res,) = run_criteria(["6"])
    assert res.passed and res.key == "6"
    assert res.line().startswith("[PASS] criterion 6")
