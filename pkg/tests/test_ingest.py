import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hankelwave.errors import FormatError, ScenarioError, TimingError
from hankelwave.ingest import (
    BRAKING_STATES, IMU_CHANNELS, POSTURE_CLASSES, LabeledTrace, SignalTrace, gesture_label,
    load_trace, parse_scenario, save_trace, synthesize_braking_trace, synthesize_posture_trace)
from hankelwave.signal_fusion import accel_to_angles_array


def write_rows(path, rows, header=None):
    lines = ([",".join(header)] if header else []) + [",".join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def label_runs(labels):
    return [k for k, _ in itertools.groupby(labels.tolist())]


# --------------------------------------------------------------------------
# CSV loading

def test_three_row_file(tmp_path):
    rows = [[i * 0.05, 0, 0, 9.81, 0, 0, 0] for i in range(3)]
    trace = load_trace(write_rows(tmp_path / "a.csv", rows), fs=20.0)
    assert len(trace) == 3
    assert trace.fs == 20.0
    assert trace.channel_names == IMU_CHANNELS
    assert trace.accel[:, 2] == pytest.approx([9.81] * 3)


def test_gap_is_timing_error(tmp_path):
    times = [0.0, 0.05, 0.10, 0.30, 0.35]
    rows = [[t, 0, 0, 9.81, 0, 0, 0] for t in times]
    with pytest.raises(TimingError) as info:
        load_trace(write_rows(tmp_path / "gap.csv", rows), fs=20.0)
    assert info.value.worst_gap == pytest.approx(0.2)


def test_empty_file_is_format_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(FormatError):
        load_trace(path, fs=20.0)


def test_bad_cell_reports_row(tmp_path):
    rows = [[0.0, 0, 0, 9.81, 0, 0, 0], [0.05, 0, "x", 9.81, 0, 0, 0]]
    with pytest.raises(FormatError) as info:
        load_trace(write_rows(tmp_path / "bad.csv", rows), fs=20.0)
    assert info.value.row == 2


def test_wrong_column_count(tmp_path):
    with pytest.raises(FormatError):
        load_trace(write_rows(tmp_path / "short.csv", [[0.0, 1, 2, 3]]), fs=20.0)


def test_labeled_round_trip(tmp_path):
    lt = synthesize_braking_trace([("cruise", 2), ("sudden", 2)], seed=5)
    save_trace(lt, tmp_path / "lt.csv")
    back = load_trace(tmp_path / "lt.csv", fs=20.0, labeled=True)
    assert isinstance(back, LabeledTrace)
    assert np.array_equal(back.labels, lt.labels)
    assert np.array_equal(back.trace.data, lt.trace.data)
    assert back.class_names == BRAKING_STATES


def test_posture_round_trip_keeps_channels(tmp_path):
    lt = synthesize_posture_trace([0, 3, 0], seed=1)
    save_trace(lt, tmp_path / "p.csv")
    back = load_trace(tmp_path / "p.csv", fs=20.0, labeled=True)
    assert back.trace.channel_names == lt.trace.channel_names
    assert back.class_names == POSTURE_CLASSES
    assert np.array_equal(back.trace.data, lt.trace.data)


def test_trace_rejects_non_finite():
    with pytest.raises(FormatError):
        SignalTrace(np.arange(3) / 20.0, np.array([[0, 0, 9.8, 0, 0, np.nan]] * 3), 20.0)


# --------------------------------------------------------------------------
# braking synthesis

def test_single_cruise_segment():
    lt = synthesize_braking_trace([("cruise", 10)], seed=7, fs=20.0)
    assert len(lt) == 200
    assert np.all(lt.labels == 0)


def test_same_seed_same_trace():
    a = synthesize_braking_trace([("cruise", 10)], seed=7)
    b = synthesize_braking_trace([("cruise", 10)], seed=7)
    assert np.array_equal(a.trace.data, b.trace.data)


def test_sudden_pitch_rate_dominates_cruise():
    lt = synthesize_braking_trace([("cruise", 5), ("sudden", 2), ("cruise", 5)], seed=1)
    rate = np.abs(lt.trace.gyro[:, 1])
    assert rate[lt.labels == 2].max() > 2.0 * rate[lt.labels == 0].max()


def test_sudden_swing_exceeds_normal():
    _, tr = synthesize_braking_trace([("cruise", 3), ("normal", 4), ("cruise", 3),
                                      ("sudden", 2.5), ("cruise", 3)], seed=2, noise=False,
                                     return_truth=True)
    lt = synthesize_braking_trace([("cruise", 3), ("normal", 4), ("cruise", 3),
                                   ("sudden", 2.5), ("cruise", 3)], seed=2, noise=False)
    base = np.median(tr["pitch"][lt.labels == 0])
    swing = {s: np.abs(tr["pitch"][lt.labels == s] - base).max() for s in (1, 2)}
    assert swing[2] >= 2.0 * swing[1]


@pytest.mark.parametrize("scenario", [[("reverse", 2)], [(3, 1.0)], [("cruise", 0)], []])
def test_scenario_errors(scenario):
    with pytest.raises(ScenarioError):
        synthesize_braking_trace(scenario, seed=0)


def test_json_scenario_form():
    assert parse_scenario([{"state": "sudden", "duration_s": 2}, {"state": 0, "duration_s": 1}]) \
        == [(2, 2.0), (0, 1.0)]


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(BRAKING_STATES), st.floats(1.0, 4.0)),
                min_size=1, max_size=4), st.integers(0, 1000))
def test_braking_synthesis_is_pure(scenario, seed):
    a = synthesize_braking_trace(scenario, seed=seed)
    b = synthesize_braking_trace(scenario, seed=seed)
    assert a.trace.data.tobytes() == b.trace.data.tobytes()
    assert set(np.unique(a.labels)) <= {BRAKING_STATES.index(s) for s, _ in scenario}


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_quiet_samples_recover_scripted_angles(seed):
    lt, tr = synthesize_braking_trace([("cruise", 3), ("normal", 3), ("cruise", 3)],
                                      seed=seed, return_truth=True)
    quiet = np.abs(tr["motion_accel"][:, 0]) == 0.0
    roll, pitch = accel_to_angles_array(tr["clean_accel"][quiet])
    assert np.max(np.abs(np.degrees(pitch - tr["pitch"][quiet]))) <= 0.5
    assert np.max(np.abs(np.degrees(roll - tr["roll"][quiet]))) <= 0.5


# --------------------------------------------------------------------------
# posture synthesis

def test_single_posture():
    lt = synthesize_posture_trace([0], seed=0)
    assert np.all(lt.labels == 0)


def test_one_transition():
    lt = synthesize_posture_trace([0, 1], seed=0)
    assert label_runs(lt.labels) == [0, gesture_label(0, 1), 1]


def test_six_changes_give_six_gestures():
    rng = np.random.default_rng(3)
    script = [int(rng.integers(5))]
    while len(script) < 7:
        nxt = int(rng.integers(5))
        if nxt != script[-1]:
            script.append(nxt)
    runs = label_runs(synthesize_posture_trace(script, seed=3).labels)
    assert sum(r >= 5 for r in runs) == 6


def test_repeated_posture_rejected():
    with pytest.raises(ScenarioError):
        synthesize_posture_trace([0, 2, 2], seed=0)


def test_gesture_table_covers_eight_classes():
    ids = {gesture_label(a, b) for a in range(5) for b in range(5) if a != b}
    assert ids == set(range(5, 13))
    assert gesture_label(2, 4) == gesture_label(0, 4)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=8).filter(
    lambda s: all(a != b for a, b in zip(s, s[1:]))), st.integers(0, 1000))
def test_gestures_sit_between_distinct_postures(script, seed):
    lt = synthesize_posture_trace(script, seed=seed)
    again = synthesize_posture_trace(script, seed=seed)
    assert lt.trace.data.tobytes() == again.trace.data.tobytes()
    runs = label_runs(lt.labels)
    assert [r for r in runs if r < 5] == script
    for i, r in enumerate(runs):
        if r >= 5:
            assert 0 < i < len(runs) - 1
            assert runs[i - 1] < 5 and runs[i + 1] < 5
            assert r == gesture_label(runs[i - 1], runs[i + 1])
