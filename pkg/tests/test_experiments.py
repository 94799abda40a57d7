import json
import math

import numpy as np
import pytest

from uasep.errors import ParameterError
from uasep.experiments import (DESK, FIG9_SNRS, PRESETS, TABLE4_SNRS, ExperimentResult,
                               benchmark_case, fig9_gate, lfm_condition, lfm_sources, mean_std,
                               run_preset, sir_db_capped, summarize, table4_gate, write_result)


def _table4_summary(xi, psr, sir):
    return [{"snr_db": s, "xi_mean": a, "psr_mean": b, "sir_m_mean": c}
            for s, a, b, c in zip(TABLE4_SNRS, xi, psr, sir)]


def test_mean_std_with_infinity():
    assert mean_std([1.0, 3.0]) == (2.0, 1.0)
    m, s = mean_std([1.0, math.inf])
    assert m == math.inf and math.isnan(s)
    assert all(math.isnan(v) for v in mean_std([]))


def test_sir_db_capped():
    np.testing.assert_allclose(sir_db_capped([1.0, 100.0, math.inf, 1e20]), [0, 20, 120, 120])


def test_summarize_groups():
    rows = [{"a": 1, "x": 1.0}, {"a": 1, "x": 3.0}, {"a": 2, "x": 5.0}]
    out = summarize(rows, ["a"], ["x"])
    assert out == [{"a": 1, "n": 2, "x_mean": 2.0, "x_std": 1.0},
                   {"a": 2, "n": 1, "x_mean": 5.0, "x_std": 0.0}]


def test_table4_gate_pass_and_fail():
    good = _table4_summary([0.90, 0.93, 0.95, 0.96, 0.97, 0.98], [0.9] * 6,
                           [5.8, 30, 200, 900, 4000, 24000])
    ok, details = table4_gate(good)
    assert ok and details["largest_xi_drop"] == 0.0
    dip = _table4_summary([0.90, 0.95, 0.91, 0.96, 0.97, 0.98], [0.9] * 6,
                          [5.8, 30, 200, 900, 4000, 24000])
    assert not table4_gate(dip)[0]
    flat_sir = _table4_summary([0.95] * 6, [0.95] * 6, [10, 10, 10, 10, 10, 50])
    assert not table4_gate(flat_sir)[0]


def test_fig9_gate():
    assert fig9_gate(0.85, 0.6)
    assert not fig9_gate(0.79, 0.2)
    assert not fig9_gate(0.9, 0.8)


def test_lfm_sources_layout():
    src = lfm_sources()
    assert len(src) == 3
    fs = src[0].sample_rate
    # each chirp is silent outside its launch window
    for s, (t0, d) in zip(src, [(0.1, 0.3), (0.5, 0.2), (0.6, 0.3)]):
        x = s.samples
        assert np.all(x[:int(t0 * fs) - 1] == 0)
        assert np.all(x[int((t0 + d) * fs) + 1:] == 0)


def test_lfm_condition_deterministic():
    a, b = lfm_condition(10.0, 3), lfm_condition(10.0, 3)
    assert a.xi == b.xi and a.psr == b.psr


def test_benchmark_case_two_sensors():
    case = benchmark_case(DESK, 3, 20.0, 5, two_sensors=True)
    assert len(case.observations) == 2 and len(case.references) == 3
    assert len(set(case.families)) == 3
    again = benchmark_case(DESK, 3, 20.0, 5, two_sensors=True)
    np.testing.assert_array_equal(case.observations[1].samples, again.observations[1].samples)


def test_unknown_preset_rejected(tmp_path):
    with pytest.raises(ParameterError):
        run_preset("fig12", tmp_path)
    assert set(PRESETS) == {"table4", "table5", "table6", "fig9", "fig10", "fig11"}
    assert FIG9_SNRS[-1] == 40.0


def test_write_result_files(tmp_path):
    res = ExperimentResult("t", [{"snr_db": math.inf, "xi": 1.0}],
                           [{"snr_db": math.inf, "xi_mean": 1.0}], True, "g", {"v": math.inf})
    write_result(res, tmp_path)
    text = (tmp_path / "conditions.csv").read_text().splitlines()
    assert text[0] == "snr_db,xi" and text[1].startswith("inf,")
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["passed"] is True
    assert res.summary_for(snr_db=math.inf)["xi_mean"] == 1.0
