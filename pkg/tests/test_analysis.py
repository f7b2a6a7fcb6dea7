import csv
import math
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keybench import common
from keybench.analysis import (CATEGORY_COLORS, AnalysisError, BaselineModel, Category, FleetScenario,
                               UnmappedAlgorithmError, aggregate, chart_data, fit_baseline, fleet_savings,
                               level_table, load_fleet_scenario, load_levels, mwh_to_joules, net_rate,
                               read_all_results, write_outputs)
from keybench.clock import VirtualClock
from keybench.collector import SummaryRow, append_summary
from keybench.meter import SimProfile, SimulatedMeter
from tests.basetest import data_file

# published J/1,000 keygens, in level-table order
PUBLISHED_TABLE = [
    (1, "RSA-1024", "Classic", "218.64"),
    (2, "secp160r1", "EllipticCurve", "8.69"),
    (2, "RSA-1536", "Classic", "828.84"),
    (3, "secp224r1", "EllipticCurve", "10.16"),
    (3, "P-256", "EllipticCurve", "7.33"),
    (3, "ML-DSA-44", "PostQuantum", "8.36"),
    (3, "ML-KEM-512", "PostQuantum", "7.61"),
    (3, "RSA-2048", "Classic", "1093.08"),
    (4, "P-384", "EllipticCurve", "17.05"),
    (4, "ML-DSA-65", "PostQuantum", "8.97"),
    (4, "ML-KEM-768", "PostQuantum", "7.76"),
    (4, "RSA-3072", "Classic", "4014.84"),
    (5, "P-521", "EllipticCurve", "33.76"),
    (5, "ML-DSA-87", "PostQuantum", "9.82"),
    (5, "ML-KEM-1024", "PostQuantum", "7.89"),
    (5, "RSA-4096", "Classic", "11952.00"),
]

NO_BASELINE = BaselineModel.zero()


@pytest.fixture(scope='module')
def levels():
    return load_levels()


@pytest.fixture(scope='module')
def published_report(levels):
    return aggregate(data_file('published_all_results.csv'), level_map=levels)


# energy units

def test_mwh_to_joules():
    assert mwh_to_joules(0) == 0
    assert mwh_to_joules(100) == 360.0
    # 856.11 kWh is 856,110,000 mWh
    assert mwh_to_joules(856110000) == pytest.approx(3.082e9, rel=1e-3)


def test_negative_energy():
    with pytest.raises(AnalysisError):
        mwh_to_joules(-1)


@given(st.integers(min_value=1, max_value=10 ** 12))
def test_mwh_to_joules_ratio(mwh):
    assert mwh_to_joules(mwh) / mwh == pytest.approx(3.6, rel=1e-15)


# baseline

def test_baseline_single_run():
    assert fit_baseline([(360, 120)]).background_watts == 3.0


def test_baseline_duration_weighted():
    model = fit_baseline([(360, 120), (720, 240)])
    assert model.background_watts == 3.0
    assert model.source_runs == 2
    assert model.total_null_seconds == 360


@pytest.mark.parametrize("runs", [[], [(10, 0)], [(-1, 10)]])
def test_baseline_errors(runs):
    with pytest.raises(AnalysisError):
        fit_baseline(runs)


def test_baseline_from_jittered_simulator():
    profile = SimProfile.constant(3.0, sample_jitter=0.5, seed=11)
    runs = []
    for seconds in (60, 90, 120):
        clock = VirtualClock()
        with SimulatedMeter(profile, clock) as meter:
            first = meter.poll()
            clock.advance(seconds)
            last = meter.poll()
        runs.append((mwh_to_joules(last.energy_mwh - first.energy_mwh), last.t - first.t))
    model = fit_baseline(runs)
    # one quantum per run, spread over the total duration
    assert abs(model.background_watts - 3.0) <= 3.6 * len(runs) / model.total_null_seconds


# net rates

def test_pure_background():
    result = net_rate(300.0, 100.0, 1000, BaselineModel(3.0, 1, 100.0))
    assert result.net_joules == 0
    assert result.joules_per_1000_net == 0
    assert not result.clamped


def test_published_rates():
    assert net_rate(3805, 2000, 500000, NO_BASELINE).joules_per_1000_net == pytest.approx(7.61)
    assert net_rate(2390.4, 100, 200, NO_BASELINE).joules_per_1000_net == pytest.approx(11952.0)


def test_negative_net_is_clamped():
    result = net_rate(100.0, 100.0, 10, BaselineModel(3.0, 1, 100.0))
    assert result.net_joules == 0
    assert result.clamped


def test_net_rate_errors():
    with pytest.raises(AnalysisError):
        net_rate(10, 0, 10, NO_BASELINE)
    with pytest.raises(AnalysisError):
        net_rate(10, 1, 0, NO_BASELINE)


@given(st.floats(min_value=0, max_value=1e6), st.integers(min_value=1, max_value=10 ** 6),
       st.floats(min_value=0.1, max_value=100))
@settings(max_examples=200)
def test_rate_linearity(energy, iterations, k):
    base = net_rate(energy, 10.0, iterations, NO_BASELINE).joules_per_1000_net
    scaled = net_rate(k * energy, 10.0, iterations, NO_BASELINE).joules_per_1000_net
    assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-12)
    k_int = max(1, int(k))
    more = net_rate(energy, 10.0, iterations * k_int, NO_BASELINE).joules_per_1000_net
    assert more == pytest.approx(base / k_int, rel=1e-9, abs=1e-12)


def test_simulator_baseline_consistency():
    """A workload drawing exactly the NULL power nets out to nothing."""
    def session(seconds):
        clock = VirtualClock()
        with SimulatedMeter(SimProfile.constant(4.2), clock) as meter:
            first = meter.poll()
            clock.advance(seconds)
            last = meter.poll()
        return mwh_to_joules(last.energy_mwh - first.energy_mwh), last.t - first.t

    baseline = fit_baseline([session(600)])
    gross, wall = session(137)
    assert net_rate(gross, wall, 1000, baseline).net_joules <= 7.2


# security levels

def test_shipped_levels(levels):
    assert len(levels) == 16
    assert "prime256v1" in levels
    assert "Ed25519" not in levels
    rsa4096 = levels.lookup("RSA -pkeyopt rsa_keygen_bits:4096")
    assert rsa4096.nist_level == 5
    assert rsa4096.equiv_bits_text == "~140"
    assert rsa4096.note
    assert levels.lookup("P-256") is levels.lookup("EC -pkeyopt ec_paramgen_curve:P-256")
    assert levels.lookup("ML-KEM-768").category is Category.POST_QUANTUM


def test_unmapped_algorithm(levels):
    with pytest.raises(UnmappedAlgorithmError) as info:
        level_table([net_rate(1, 1, 1, NO_BASELINE, "Ed25519")], levels)
    assert "Ed25519" in str(info.value)


def test_single_result_table(levels):
    rows = level_table([net_rate(3805, 2000, 500000, NO_BASELINE, "ML-KEM-512")], levels)
    assert len(rows) == 1
    assert rows[0].protocol == "ML-KEM-512"
    assert rows[0].level == 3


def test_published_table(published_report):
    assert published_report.baseline.background_watts == 3.0
    assert published_report.baseline.source_runs == 2
    table = [(row.level, row.protocol, row.category.value, "%.2f" % row.joules_per_1000)
             for row in published_report.rows]
    assert table == PUBLISHED_TABLE


def test_table_ignores_row_order(published_report, levels):
    shuffled = list(published_report.results)
    random.Random(5).shuffle(shuffled)
    assert [row.protocol for row in level_table(shuffled, levels)] == [row[1] for row in PUBLISHED_TABLE]


def test_chart_data(published_report):
    chart = {row.protocol: row for row in chart_data(published_report.rows)}
    ratio = chart["RSA-4096"].joules_per_1000 / chart["ML-KEM-1024"].joules_per_1000
    assert abs(ratio - 1514.8) < 0.5
    assert chart["ML-KEM-512"].log10_joules_per_1000 == pytest.approx(math.log10(7.61))
    assert chart["RSA-2048"].color == CATEGORY_COLORS[Category.CLASSIC]
    assert chart["P-256"].color == CATEGORY_COLORS[Category.ELLIPTIC_CURVE]
    assert chart["ML-DSA-44"].color == CATEGORY_COLORS[Category.POST_QUANTUM]
    assert chart["P-256"].seconds_per_1000 == pytest.approx(4.0)


def test_only_null_rows(tmp_path, levels):
    path = str(tmp_path)
    append_summary(path, SummaryRow.build("1", "NULL", 1000, 30.0, 10.0))
    report = aggregate(os.path.join(path, "AllResults.csv"), level_map=levels)
    assert report.results == []
    assert report.rows == []
    assert report.baseline.background_watts == 3.0


def test_no_null_rows_is_uncorrected(tmp_path, levels):
    path = str(tmp_path)
    append_summary(path, SummaryRow.build("1", "ML-KEM-512", 1000, 30.0, 10.0))
    report = aggregate(os.path.join(path, "AllResults.csv"), level_map=levels)
    assert report.uncorrected
    assert report.results[0].net_joules == 30.0
    assert "uncorrected" in report.summary_lines()[0]


def test_flagged_rows_excluded(tmp_path, levels):
    path = str(tmp_path)
    append_summary(path, SummaryRow.build("1", "NULL", 1000, 30.0, 10.0))
    append_summary(path, SummaryRow.build("2", "ML-KEM-512", 1000, 60.0, 10.0))
    append_summary(path, SummaryRow.build("3", "ML-KEM-512", 1000, 600.0, 10.0, "truncated"))
    report = aggregate(os.path.join(path, "AllResults.csv"), level_map=levels)
    assert [r.timestamp for r in report.excluded] == ["3"]
    assert report.results[0].net_joules == 30.0


def test_zero_duration_rows_excluded(tmp_path, levels):
    path = str(tmp_path)
    append_summary(path, SummaryRow.build("1", "NULL", 1000, 30.0, 10.0))
    append_summary(path, SummaryRow.build("2", "NULL", 10, 0.0, 0.0))
    append_summary(path, SummaryRow.build("3", "ML-KEM-512", 1000, 60.0, 10.0))
    append_summary(path, SummaryRow.build("4", "ML-KEM-512", 10, 0.0, 0.0004))
    report = aggregate(os.path.join(path, "AllResults.csv"), level_map=levels)
    assert [r.timestamp for r in report.excluded] == ["2", "4"]
    assert report.baseline.background_watts == 3.0
    [result] = report.results
    assert result.runs == 1
    assert result.net_joules == 30.0
    assert "Excluded: line 3 2 NULL (zero duration)" in report.summary_lines()


def test_repeated_runs_are_pooled(tmp_path, levels):
    path = str(tmp_path)
    append_summary(path, SummaryRow.build("1", "ML-KEM-512", 1000, 10.0, 5.0))
    append_summary(path, SummaryRow.build("2", "ML-KEM-512", 3000, 50.0, 15.0))
    report = aggregate(os.path.join(path, "AllResults.csv"), level_map=levels)
    [result] = report.results
    assert result.runs == 2
    assert result.iterations == 4000
    assert result.joules_per_1000_net == pytest.approx(15.0)
    assert result.seconds_per_1000 == pytest.approx(5.0)


def test_summary_round_trip(tmp_path, levels):
    path = str(tmp_path)
    written = [SummaryRow.build("20250507133228", "ML-KEM-1024", 3200, 75.6, 12.5),
               SummaryRow.build("20250507133500", "NULL", 1000, 18.0, 6.0)]
    for row in written:
        append_summary(path, row)
    records = read_all_results(os.path.join(path, "AllResults.csv"))
    assert [(r.timestamp, r.algorithm_label, r.iterations, r.gross_joules, r.wall_seconds, r.status)
            for r in records] == \
        [(w.timestamp, w.algorithm_label, w.iterations, w.gross_joules, w.wall_seconds, w.status)
         for w in written]


def test_malformed_summary(tmp_path, levels):
    path = os.path.join(str(tmp_path), "AllResults.csv")
    with open(path, 'w') as f:
        f.write("timestamp,algorithm,iterations,gross_joules,wall_seconds\n1,NULL,many,1.0,1.0\n")
    with pytest.raises(common.ConfigurationError) as info:
        aggregate(path, level_map=levels)
    assert "line 2" in str(info.value)


# fleet

def test_fleet_published_figures():
    report = fleet_savings(FleetScenario(2.82e9, 1.093, 0.00761, 0.26))
    assert abs(report.annual_kwh_from - 856.11) <= 0.5
    assert abs(report.annual_cost_from - 222.59) <= 0.2
    assert report.multiplier == pytest.approx(143.6, abs=0.05)
    assert report.annual_kwh_to < report.annual_kwh_from


def test_fleet_needs_positive_target():
    with pytest.raises(AnalysisError):
        fleet_savings(FleetScenario(2.82e9, 1.093, 0.0, 0.26))


def test_fleet_file():
    scenario = load_fleet_scenario(data_file('fleet_published.txt'))
    assert scenario.keygens_per_year == 2.82e9
    assert scenario.from_label == "RSA-2048"
    assert scenario.currency == "GBP"
    assert "856.1" in fleet_savings(scenario).render()


def test_fleet_file_by_algorithm(published_report):
    scenario = load_fleet_scenario(data_file('fleet_by_algorithm.txt'), published_report.per_key_joules())
    assert scenario.from_joules_per_key == pytest.approx(1.09308)
    assert scenario.to_joules_per_key == pytest.approx(0.00761)
    assert fleet_savings(scenario).multiplier == pytest.approx(1093.08 / 7.61)


def test_fleet_file_unknown_algorithm():
    with pytest.raises(AnalysisError):
        load_fleet_scenario(data_file('fleet_by_algorithm.txt'), {})


def test_fleet_file_errors(tmp_path):
    path = os.path.join(str(tmp_path), 'fleet.txt')
    for text in ("keygens_per_year 5\n", "colour = blue\n", "keygens_per_year = lots\nprice_per_kwh = 1\n"
                 "from_joules_per_key = 1\nto_joules_per_key = 1\n"):
        with open(path, 'w') as f:
            f.write(text)
        with pytest.raises(common.ConfigurationError):
            load_fleet_scenario(path)


# outputs

def test_outputs(published_report, tmp_path):
    out_dir = str(tmp_path)
    fleet = fleet_savings(FleetScenario(2.82e9, 1.093, 0.00761, 0.26))
    written = write_outputs(published_report, out_dir, fleet)
    assert sorted(os.path.basename(p) for p in written) == \
        ["chart_data.csv", "chart_energy.svg", "chart_time.svg", "fleet_report.txt", "level_table.csv"]
    with open(os.path.join(out_dir, "level_table.csv"), newline='') as f:
        table = list(csv.reader(f))
    assert table[0] == ["level", "protocol", "category", "equiv_bits", "joules_per_1000", "seconds_per_1000"]
    assert [(int(r[0]), r[1], r[2], r[4]) for r in table[1:]] == \
        [(level, name, category, "%.2f" % float(rate)) for level, name, category, rate in PUBLISHED_TABLE]
    with open(os.path.join(out_dir, "chart_energy.svg")) as f:
        svg = f.read()
    assert "<svg" in svg
    assert "11952.00" in svg


def test_summary_lines(published_report):
    lines = published_report.summary_lines()
    assert lines[0].startswith("Baseline: 3.0000 W from 2 NULL runs")
    assert "0.15%" in lines[-1]
    assert "3.6 J" in lines[-1]
