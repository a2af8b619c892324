import numpy as np
import pytest

from epiwarn.panel import (
    AlignedPanel,
    AlignmentError,
    DuplicateWeekError,
    MissingDataError,
    ParseError,
    Series,
    SyntheticPanelSpec,
    WeekAxis,
    generate_synthetic,
    index_to_week,
    load_panel,
    load_panel_from_manifest,
    read_manifest,
    week_to_index,
    write_panel,
    write_series_csv,
)


def _write_csv(path, start_label, values):
    start = week_to_index(start_label)
    lines = ["week,value"]
    for i, v in enumerate(values):
        lines.append(f"{index_to_week(start + i)},{v}")
    path.write_text("\n".join(lines) + "\n")


def test_week_label_round_trip():
    for label in ["2010-W01", "2015-W53", "2009-W27", "2016-W52"]:
        assert index_to_week(week_to_index(label)) == label


def test_week_indices_consecutive_across_year_boundary():
    # 2015 is a 53-week ISO year
    assert week_to_index("2016-W01") == week_to_index("2015-W53") + 1
    assert week_to_index("2015-W53") == week_to_index("2015-W52") + 1


def test_bad_week_labels_rejected():
    with pytest.raises(ParseError):
        week_to_index("2010-13")
    with pytest.raises(ParseError):
        week_to_index("2010-W54")


def test_load_panel_trims_to_intersection(tmp_path):
    # gold weeks 1..100 of 2010-W01, candidate starting 4 weeks later and
    # running longer: the panel covers the 96-week overlap
    _write_csv(tmp_path / "gold.csv", "2010-W01", [1.0] * 100)
    _write_csv(tmp_path / "cand.csv", "2010-W05", [2.0] * 116)
    panel = load_panel(tmp_path / "gold.csv", [tmp_path / "cand.csv"])
    assert panel.axis.start == "2010-W05"
    assert panel.axis.length == 96
    assert panel.gold.name == "gold"
    assert panel.candidate_names() == ("cand",)


def test_load_panel_intersection_matches_interval_oracle(tmp_path):
    rng = np.random.default_rng(3)
    base = week_to_index("2011-W01")
    for trial in range(20):
        starts = rng.integers(0, 30, size=4)
        lengths = rng.integers(10, 80, size=4)
        files = []
        for i, (s, L) in enumerate(zip(starts, lengths)):
            p = tmp_path / f"t{trial}_s{i}.csv"
            _write_csv(p, index_to_week(base + int(s)), list(rng.normal(size=int(L))))
            files.append(p)
        lo = max(base + int(s) for s in starts)
        hi = min(base + int(s) + int(L) - 1 for s, L in zip(starts, lengths))
        if hi - lo + 1 < 3:
            with pytest.raises(AlignmentError):
                load_panel(files[0], files[1:])
        else:
            panel = load_panel(files[0], files[1:])
            assert week_to_index(panel.axis.start) == lo
            assert panel.axis.length == hi - lo + 1


def test_load_panel_rejects_duplicate_names(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _write_csv(tmp_path / "gold.csv", "2010-W01", [1.0] * 10)
    _write_csv(a / "same.csv", "2010-W01", [1.0] * 10)
    _write_csv(b / "same.csv", "2010-W01", [2.0] * 10)
    with pytest.raises(ValueError, match="duplicate series name"):
        load_panel(tmp_path / "gold.csv", [a / "same.csv", b / "same.csv"])


def test_load_panel_gap_is_missing_data_error(tmp_path):
    # weeks 2010-W01..W29 then W31..: W30 missing
    start = week_to_index("2010-W01")
    lines = ["week,value"]
    for i in range(40):
        if index_to_week(start + i) == "2010-W30":
            continue
        lines.append(f"{index_to_week(start + i)},1.0")
    p = tmp_path / "gappy.csv"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(MissingDataError, match="2010-W30"):
        _ = load_panel(p, [p])


def test_load_panel_duplicate_week(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("week,value\n2010-W01,1.0\n2010-W02,1.0\n2010-W02,2.0\n2010-W03,1.0\n")
    with pytest.raises(DuplicateWeekError, match="2010-W02"):
        load_panel(p, [p])


def test_load_panel_missing_value_and_bad_row(tmp_path):
    p = tmp_path / "noval.csv"
    p.write_text("week,value\n2010-W01,1.0\n2010-W02,\n")
    with pytest.raises(MissingDataError, match="2010-W02"):
        load_panel(p, [p])
    q = tmp_path / "badrow.csv"
    q.write_text("week,value\n2010-W01,1.0\n2010-W02,1.0,extra\n")
    with pytest.raises(ParseError, match="line 3"):
        load_panel(q, [q])


def test_load_panel_nonoverlapping_ranges(tmp_path):
    _write_csv(tmp_path / "gold.csv", "2010-W01", [1.0] * 10)
    _write_csv(tmp_path / "late.csv", "2012-W01", [1.0] * 10)
    with pytest.raises(AlignmentError):
        load_panel(tmp_path / "gold.csv", [tmp_path / "late.csv"])


def test_panel_round_trip_is_exact(tmp_path, synth_panel):
    manifest = write_panel(synth_panel, tmp_path / "panel")
    reloaded = load_panel_from_manifest(manifest)
    assert reloaded.axis == synth_panel.axis
    assert np.array_equal(reloaded.gold.values, synth_panel.gold.values)
    for name in synth_panel.candidate_names():
        assert np.array_equal(
            reloaded.candidate(name).values, synth_panel.candidate(name).values
        )


def test_manifest_reader_orders_candidates(tmp_path, synth_panel):
    manifest = write_panel(synth_panel, tmp_path / "p")
    gold, candidates = read_manifest(manifest)
    assert gold.stem == "gold"
    assert tuple(c.stem for c in candidates) == synth_panel.candidate_names()


def test_synthetic_deterministic(synth_spec):
    a = generate_synthetic(synth_spec)
    b = generate_synthetic(synth_spec)
    assert np.array_equal(a.gold.values, b.gold.values)
    for name in a.candidate_names():
        assert np.array_equal(a.candidate(name).values, b.candidate(name).values)


def test_synthetic_degenerate_noiseless_predictors_equal_gold():
    spec = SyntheticPanelSpec(
        seasons=3, weeks_per_season=40, noise_scale=0.0, peak_week_jitter=0,
        predictor_count=3, predictor_lead=0, rng_seed=5,
    )
    panel = generate_synthetic(spec)
    for name in panel.candidate_names():
        assert np.array_equal(panel.candidate(name).values, panel.gold.values)


def _upward_crossings(values, threshold):
    above = values >= threshold
    return [t for t in range(1, len(values)) if above[t] and not above[t - 1]]


def test_synthetic_lead_shifts_crossings_by_lead_weeks():
    spec = SyntheticPanelSpec(
        seasons=4, weeks_per_season=52, noise_scale=0.0, peak_week_jitter=0,
        predictor_count=1, predictor_lead=3, rng_seed=2,
    )
    panel = generate_synthetic(spec)
    threshold = 1.25
    gold_crossings = _upward_crossings(panel.gold.values, threshold)
    pred_crossings = _upward_crossings(panel.candidates[0].values, threshold)
    assert len(gold_crossings) == spec.seasons
    assert pred_crossings == [c - 3 for c in gold_crossings]


def test_synthetic_noiseless_single_crossing_per_season():
    spec = SyntheticPanelSpec(
        seasons=5, weeks_per_season=52, baseline_level=0.8, peak_height=4.0,
        peak_week_jitter=2, noise_scale=0.0, predictor_count=1, rng_seed=9,
    )
    panel = generate_synthetic(spec)
    for threshold in [0.81, 1.25, 2.0, 3.5, 4.75]:
        assert len(_upward_crossings(panel.gold.values, threshold)) == spec.seasons


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticPanelSpec(peak_height=0.0)
    with pytest.raises(ValueError):
        SyntheticPanelSpec(seasons=0)
    with pytest.raises(ValueError):
        SyntheticPanelSpec(peak_week_jitter=40)


def test_panel_validation():
    axis = WeekAxis(start="2010-W01", length=3)
    gold = Series(name="gold", values=np.ones(3))
    with pytest.raises(ValueError, match="non-finite"):
        Series(name="bad", values=np.array([1.0, np.nan, 2.0]))
    with pytest.raises(ValueError, match="axis length"):
        AlignedPanel(axis, gold, (Series(name="c", values=np.ones(4)),))


def test_write_series_uses_repr_round_trip(tmp_path):
    axis = WeekAxis(start="2010-W01", length=3)
    values = np.array([0.1 + 0.2, 1 / 3, 1e-17])
    write_series_csv(Series(name="x", values=values), axis, tmp_path / "x.csv")
    text = (tmp_path / "x.csv").read_text().splitlines()
    parsed = [float(line.split(",")[1]) for line in text[1:]]
    assert parsed == list(values)
