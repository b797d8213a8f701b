import math

import numpy as np
import pytest
from scipy import stats

from ipsense.channel import ChannelParams, pull_attenuation
from ipsense.changepoint import DetectorConfig, detect_changes
from ipsense.errors import InvalidArgument, ScheduleError
from ipsense.simulator import (LiveLink, StressEvent, StressSchedule, channel_trajectory,
                               recovery_fraction, simulate)

MIN = 60.0


def window(samples, start, end, attr):
    return np.array([getattr(s, attr) for s in samples
                     if start * 1000 <= s.timestamp_ms < end * 1000
                     and getattr(s, attr) is not None])


def test_recovery_fraction_examples():
    assert recovery_fraction(0) == 0.0
    assert recovery_fraction(900) == pytest.approx(0.9932620530009145, abs=1e-12)
    assert recovery_fraction(420) == pytest.approx(0.9030280321355949, abs=1e-12)
    assert recovery_fraction(900) >= 0.99
    with pytest.raises(InvalidArgument):
        recovery_fraction(-1)


def test_schedules_match_captions(schedules):
    assert set(schedules) == {"bend_sweep", "load_sweep", "duration_sweep", "rest_sweep"}

    bend = schedules["bend_sweep"]
    assert [(e.kind, e.magnitude, e.duration) for e in bend.events] == [
        ("bend", r, 2 * MIN) for r in (3.0, 2.0, 1.0, 0.5)]

    load = schedules["load_sweep"].events
    assert [e.magnitude for e in load] == [float(m) for m in range(50, 141, 10)]
    assert all(e.kind == "pull" and e.duration == 5 * MIN for e in load)
    assert all(b.onset - a.end == 15 * MIN for a, b in zip(load, load[1:]))

    dur = schedules["duration_sweep"].events
    assert [e.duration for e in dur] == [10.0, 20.0, 30.0, 40.0, 50.0]
    assert all(e.magnitude == 100.0 for e in dur)
    assert all(b.onset - a.end == 15 * MIN for a, b in zip(dur, dur[1:]))

    rest = schedules["rest_sweep"].events
    assert all(e.magnitude == 100.0 and e.duration == 15 * MIN for e in rest)
    assert [b.onset - a.end for a, b in zip(rest, rest[1:])] == [m * MIN for m in range(1, 11)]

    for s in schedules.values():
        assert s.sample_rate == 1.0
        assert s.events[0].onset > 0


def test_determinism(schedules):
    s = schedules["bend_sweep"]
    assert simulate(s, seed=4) == simulate(s, seed=4)
    assert simulate(s, seed=4) != simulate(s, seed=5)


def test_empty_schedule_quiet(params):
    sched = StressSchedule((), total_duration=3000.0)
    samples = simulate(sched, params, seed=1)
    oss = np.array([s.oss for s in samples])
    assert np.all(np.abs(oss - params.baseline_oss) <= 5 * params.oss_noise_std)
    assert np.mean(np.abs(oss - params.baseline_oss) <= 3 * params.oss_noise_std) > 0.99
    for field, cfg in (("oss", DetectorConfig(bandwidth=0.1, threshold=0.5)),
                       ("ber", DetectorConfig(bandwidth=20.0, threshold=0.5))):
        assert detect_changes(samples, field, cfg) == []


def test_half_centimetre_bend_loses_signal(schedules):
    s = schedules["bend_sweep"]
    ev = s.events[-1]
    samples = simulate(s, seed=0)
    inside = [x for x in samples if ev.onset * 1000 <= x.timestamp_ms < ev.end * 1000]
    assert len(inside) == 120
    assert all(x.loss_of_signal and x.ber is None and x.oss is None for x in inside)
    assert not any(x.loss_of_signal for x in samples if x not in inside)


def test_ten_second_pull_undetectable(params):
    sched = StressSchedule((StressEvent("pull", 100.0, 100.0, 10.0),), 300.0)
    traj = channel_trajectory(sched, params)
    on = (traj["t"] >= 100) & (traj["t"] < 110)
    assert params.baseline_oss - traj["oss_mean"][on].mean() < params.oss_noise_std
    oss = window(simulate(sched, params, seed=3), 100, 110, "oss")
    assert abs(oss.mean() - params.baseline_oss) < params.oss_noise_std


def test_stress_never_raises_oss(schedules, params):
    samples = simulate(schedules["load_sweep"], params, seed=2)
    for ev in schedules["load_sweep"].events:
        under = window(samples, ev.onset, ev.end, "oss")
        assert under.size >= 100
        assert under.mean() <= params.baseline_oss
        assert under.mean() <= params.baseline_oss + 3 * params.oss_noise_std


def quiet_ber(schedule, samples, settle=10.0):
    ts = np.array([x.timestamp_ms / 1000.0 for x in samples])
    keep = np.ones(ts.size, dtype=bool)
    for e in schedule.events:
        keep &= ~((ts >= e.onset) & (ts < e.end + settle))
    return np.array([x.ber for x, k in zip(samples, keep) if k and x.ber is not None])


def test_one_centimetre_bend_two_orders(schedules):
    s = schedules["bend_sweep"]
    for seed in range(5):
        samples = simulate(s, seed=seed)
        one_cm = window(samples, s.events[2].onset, s.events[2].end, "ber")
        assert 50 <= one_cm.mean() / quiet_ber(s, samples).mean() <= 200


def test_gentle_bends_match_quiescent_ber(schedules):
    # 3 cm and 2 cm leave BER untouched, so a 1%-level test should reject
    # at roughly its nominal rate across seeds.
    s = schedules["bend_sweep"]
    rejections = 0
    for seed in range(100):
        samples = simulate(s, seed=seed)
        quiet = quiet_ber(s, samples)
        for e in s.events[:2]:
            p = stats.mannwhitneyu(window(samples, e.onset, e.end, "ber"), quiet).pvalue
            rejections += p <= 0.01
    assert rejections / 200 <= 0.04


def test_load_drop_increases_with_load(schedules, params):
    sched = schedules["load_sweep"]
    samples = simulate(sched, params, seed=0)
    drops = [params.baseline_oss - window(samples, e.onset, e.end, "oss").mean()
             for e in sched.events]
    assert all(b > a for a, b in zip(drops, drops[1:]))
    bers = [window(samples, e.onset, e.end, "ber") for e in sched.events]
    assert stats.kruskal(*bers).pvalue > 0.01


def test_hysteresis_on_rest_sweep(schedules, params):
    sched = schedules["rest_sweep"]
    traj = channel_trajectory(sched, params)
    samples = simulate(sched, params, seed=0)
    for prev, nxt in zip(sched.events, sched.events[1:]):
        rest = nxt.onset - prev.end
        idx = int(nxt.onset) - 1
        assert traj["residual"][idx] > 0
        if rest < 7 * MIN:
            assert traj["oss_mean"][idx] < params.baseline_oss
            pre = window(samples, nxt.onset - 30, nxt.onset, "oss")
            assert pre.mean() < params.baseline_oss
    pre = [traj["residual"][int(e.onset) - 1] for e in sched.events[1:]]
    assert all(b < a for a, b in zip(pre, pre[1:]))


def test_steady_pull_reaches_target(params):
    sched = StressSchedule((StressEvent("pull", 100.0, 10.0, 3600.0),), 3700.0)
    traj = channel_trajectory(sched, params)
    assert traj["residual"][3600] == pytest.approx(pull_attenuation(100.0, params), rel=1e-6)


@pytest.mark.parametrize("events,bad", [
    ((StressEvent("pull", 50, 0, 100), StressEvent("pull", 60, 50, 100)), [1]),
    ((StressEvent("twist", 1, 0, 10),), [0]),
    ((StressEvent("bend", -1, 0, 10),), [0]),
    ((StressEvent("bend", 1, 0, 0),), [0]),
    ((StressEvent("bend", 1, 590, 20),), [0]),
    ((StressEvent("bend", 1, 100, 10), StressEvent("bend", 1, 10, 10)), [1]),
])
def test_schedule_validation_lists_offenders(events, bad):
    with pytest.raises(ScheduleError) as info:
        StressSchedule(events, 600.0).validate()
    assert info.value.offending == bad
    assert f"event {bad[0]}" in str(info.value)


def test_sample_rate_bounds():
    with pytest.raises(ScheduleError):
        StressSchedule((), 10.0, sample_rate=25.0).validate()
    s = StressSchedule((), 10.0, sample_rate=20.0)
    assert len(simulate(s)) == 200
    ts = [x.timestamp_ms for x in simulate(s)]
    assert ts[1] - ts[0] == 50


def test_live_link_holds_last_tick(schedules):
    link = LiveLink(schedules["bend_sweep"], seed=1, link_id="lab")
    assert link.sample_at(0.4) == link.samples[0]
    assert link.sample_at(10.9).timestamp_ms == 10_000
    assert link.sample_at(1e9) == link.samples[-1]
    assert link.corrected_bits_at(5) <= link.corrected_bits_at(60)
    assert link.sample_at(0).link_id == "lab"


def test_custom_params_shift_baseline():
    p = ChannelParams(baseline_oss=-3.0, oss_noise_std=0.0)
    samples = simulate(StressSchedule((), 20.0), p)
    assert all(s.oss == -3.0 for s in samples)
    assert math.isfinite(samples[0].ber)
