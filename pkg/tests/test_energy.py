"""Energy accounting: integration, idle adjustment, attribution, extrapolation.

The oracle at the top re-derives covered-interval integration from the written
contract (hold last value for up to two missed ticks, else drop coverage) with
its own arithmetic — fsum over per-interval joules — so agreement is meaningful
rather than self-referential.
"""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from joulemetre.energy import (
    GAP_HOLD_LIMIT,
    EnergyReport,
    IdleBaseline,
    aggregate_power,
    attribute_epochs,
    build_report,
    cumulative_epoch_points,
    extract_epoch_spans,
    fit_extrapolation,
    idle_adjusted_energy,
    integrate_detailed,
    integrate_energy,
    measure_idle,
    predict_total,
)
from joulemetre.errors import (
    ChannelMismatch,
    DegenerateInput,
    EmptyTrace,
    MalformedMarkers,
    OutOfRange,
    OutOfSpan,
    WorkloadDetected,
)
from joulemetre.markers import MarkerEvent, MarkerKind
from joulemetre.telemetry import Channel
from joulemetre.telemetry.samples import PowerSample
from joulemetre.trace import PowerTrace

from conftest import DT, DT_NS, build_trace


# --- independent oracle ---


def oracle_channel_energy(samples, delta_t: float) -> float:
    """Covered-interval integration, written directly from the file-format
    contract: each sample covers the rounded number of nominal intervals to
    the next sample (at least one), capped at one when the gap reaches the
    hold limit; the final sample covers exactly one."""
    dt_ns = round(delta_t * 1e9)
    terms = []
    for i, s in enumerate(samples):
        if i == len(samples) - 1:
            covered = 1
        else:
            gap = samples[i + 1].t_ns - s.t_ns
            if gap >= GAP_HOLD_LIMIT * dt_ns:
                covered = 1
            else:
                covered = max(1, round(gap / dt_ns))
        terms.append(s.watts * covered * delta_t)
    return math.fsum(terms)


def oracle_gross(trace: PowerTrace) -> dict[Channel, float]:
    return {
        c: oracle_channel_energy(trace.channels[c], trace.delta_t)
        for c in trace.present_channels()
    }


def irregular_trace(rng: random.Random, n: int, delta_t: float) -> PowerTrace:
    """A multi-channel trace with jittered spacing, occasional short gaps and
    occasional dropouts past the hold limit."""
    dt_ns = round(delta_t * 1e9)
    samples = []
    for channel in (Channel.CPU, Channel.GPU, Channel.DRAM):
        if rng.random() < 0.15 and channel is Channel.DRAM:
            continue  # sometimes a machine has no DRAM channel
        t = rng.randrange(0, dt_ns)
        for _ in range(n):
            samples.append(PowerSample(t, channel, rng.uniform(0.0, 500.0)))
            r = rng.random()
            if r < 0.05:
                t += rng.randrange(GAP_HOLD_LIMIT * dt_ns, 10 * dt_ns)  # dropout
            elif r < 0.25:
                t += rng.randrange(dt_ns, GAP_HOLD_LIMIT * dt_ns)  # short gap
            else:
                t += dt_ns + rng.randrange(-dt_ns // 10, dt_ns // 10 + 1)  # jitter
    return PowerTrace.from_samples(samples, delta_t=delta_t)


# --- gross integration ---


def test_integrate_constant_power():
    # 120 W for 60 samples at 1 s spacing
    trace = build_trace({"CPU": [120.0] * 60}, delta_t=1.0)
    assert integrate_energy(trace)[Channel.CPU] == pytest.approx(7200.0, rel=1e-12)


def test_integrate_step_change():
    trace = build_trace({"GPU": [50.0] * 5 + [150.0] * 5}, delta_t=1.0)
    assert integrate_energy(trace)[Channel.GPU] == pytest.approx(1000.0, rel=1e-12)


def test_integrate_single_sample_covers_one_interval():
    trace = build_trace({"CPU": [10.0]}, delta_t=0.1)
    assert integrate_energy(trace)[Channel.CPU] == pytest.approx(1.0, rel=1e-12)


def test_integrate_empty_trace_raises():
    with pytest.raises(EmptyTrace):
        integrate_energy(PowerTrace.from_samples([], delta_t=DT))


def test_short_gap_holds_last_value():
    # samples at 0 and 2 intervals: first covers 2 intervals
    samples = [
        PowerSample(0, Channel.CPU, 10.0),
        PowerSample(2 * DT_NS, Channel.CPU, 20.0),
    ]
    trace = PowerTrace.from_samples(samples, delta_t=DT)
    detail = integrate_detailed(trace)[Channel.CPU]
    assert detail.gross_j == pytest.approx(0.1 * (10.0 * 2 + 20.0), rel=1e-12)
    assert detail.interval_count == 3
    assert not detail.degraded


def test_long_gap_drops_coverage_and_degrades():
    samples = [
        PowerSample(0, Channel.CPU, 10.0),
        PowerSample(5 * DT_NS, Channel.CPU, 20.0),  # >= 3 intervals away
    ]
    trace = PowerTrace.from_samples(samples, delta_t=DT)
    detail = integrate_detailed(trace)[Channel.CPU]
    assert detail.gross_j == pytest.approx(0.1 * (10.0 + 20.0), rel=1e-12)
    assert detail.interval_count == 2
    assert detail.degraded


def test_integration_matches_oracle_on_randomised_traces():
    rng = random.Random(0xE46)
    for trial in range(50):
        delta_t = rng.choice([0.01, 0.1, 1.0])
        n = rng.choice([1, 3, 17, 100, 1000])
        trace = irregular_trace(rng, n, delta_t)
        expect = oracle_gross(trace)
        got = integrate_energy(trace)
        assert got.keys() == expect.keys()
        for channel, joules in expect.items():
            assert got[channel] == pytest.approx(joules, rel=1e-9), (
                f"trial {trial} channel {channel}"
            )


def test_integration_additive_over_split():
    rng = random.Random(7)
    trace = irregular_trace(rng, 200, 0.1)
    for channel, samples in trace.channels.items():
        mid = samples[len(samples) // 2].t_ns
        left = PowerTrace.from_samples(
            [s for s in samples if s.t_ns < mid], delta_t=0.1
        )
        right = PowerTrace.from_samples(
            [s for s in samples if s.t_ns >= mid], delta_t=0.1
        )
        whole = oracle_channel_energy(samples, 0.1)
        # splitting can only change coverage at the seam (one interval)
        parts = integrate_energy(left)[channel] + integrate_energy(right)[channel]
        assert parts == pytest.approx(whole, abs=500.0 * 0.1 * (GAP_HOLD_LIMIT - 1) + 1e-9)


@given(
    watts=st.lists(
        st.one_of(st.just(0.0), st.floats(min_value=1e-9, max_value=1000)),
        min_size=1,
        max_size=60,
    ),
    factor_pow=st.integers(min_value=-3, max_value=3),
)
def test_integration_scales_exactly_by_powers_of_two(watts, factor_pow):
    factor = 2.0**factor_pow
    base = build_trace({"CPU": watts})
    scaled = build_trace({"CPU": [w * factor for w in watts]})
    assert integrate_energy(scaled)[Channel.CPU] == factor * integrate_energy(base)[Channel.CPU]


def test_trapezoid_rule_is_optional_and_distinct():
    trace = build_trace({"CPU": [0.0, 100.0]}, delta_t=1.0)
    left = integrate_energy(trace, rule="left")[Channel.CPU]
    trap = integrate_energy(trace, rule="trapezoid")[Channel.CPU]
    assert left == pytest.approx(100.0)  # 0*1 + 100*1
    assert trap == pytest.approx(50.0)  # mean of endpoints over 1 s
    with pytest.raises(ValueError):
        integrate_energy(trace, rule="simpson")


# --- instantaneous aggregate power ---


def test_aggregate_power_sums_channels():
    trace = build_trace({"CPU": [30.0, 30.0], "GPU": [200.0, 210.0]})
    assert aggregate_power(trace, 0).watts == pytest.approx(230.0)
    assert aggregate_power(trace, DT_NS).watts == pytest.approx(240.0)
    # half-open end: last interval extends delta_t past the final sample
    assert aggregate_power(trace, 2 * DT_NS - 1).watts == pytest.approx(240.0)


def test_aggregate_power_lists_uncovered_channels():
    samples = [
        PowerSample(0, Channel.CPU, 30.0),
        PowerSample(10 * DT_NS, Channel.CPU, 30.0),
        PowerSample(0, Channel.GPU, 100.0),
        PowerSample(10 * DT_NS, Channel.GPU, 100.0),
    ]
    # CPU: add midpoints so CPU covers the middle; GPU has a dropout there
    samples += [PowerSample(i * DT_NS, Channel.CPU, 25.0) for i in range(1, 10)]
    trace = PowerTrace.from_samples(sorted(samples, key=lambda s: s.t_ns), delta_t=DT)
    mid = aggregate_power(trace, 5 * DT_NS)
    assert mid.watts == pytest.approx(25.0)
    assert mid.missing_channels == ("GPU",)


def test_aggregate_power_out_of_span():
    trace = build_trace({"CPU": [30.0]})
    with pytest.raises(OutOfSpan):
        aggregate_power(trace, -1)
    with pytest.raises(OutOfSpan):
        aggregate_power(trace, DT_NS)  # span is [0, DT_NS)


# --- idle baseline and adjustment ---


def test_idle_adjustment_example():
    trace = build_trace({"CPU": [120.0] * 60}, delta_t=1.0)
    baseline = IdleBaseline(
        means_w={Channel.CPU: 20.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 60}
    )
    report = idle_adjusted_energy(trace, baseline)
    assert report.total_gross_j == pytest.approx(7200.0)
    assert report.total_adjusted_j == pytest.approx(6000.0, rel=1e-12)


def test_measure_idle_rejects_short_window():
    trace = build_trace({"CPU": [20.0] * 50})  # 5 s at 0.1 s
    with pytest.raises(OutOfRange):
        measure_idle(trace, min_duration_s=30.0)


def test_measure_idle_accepts_via_one_interval_slack():
    # 300 samples at 0.1 s: span 29.9 s, covered 30.0 s
    trace = build_trace({"CPU": [20.0] * 300})
    baseline = measure_idle(trace, min_duration_s=30.0)
    assert baseline.means_w[Channel.CPU] == pytest.approx(20.0)
    assert baseline.idle_duration_s == pytest.approx(30.0)


def test_measure_idle_refuses_during_workload():
    trace = build_trace({"CPU": [20.0] * 600})
    with pytest.raises(WorkloadDetected):
        measure_idle(trace, workload_active=True)


def test_baseline_round_trip():
    trace = build_trace({"CPU": [20.0] * 600, "GPU": [52.5] * 600})
    baseline = measure_idle(trace, min_duration_s=30.0, config_hash="abcd")
    back = IdleBaseline.from_dict(baseline.to_dict())
    assert back == baseline


def test_baseline_rejects_negative_mean():
    with pytest.raises(OutOfRange):
        IdleBaseline(
            means_w={Channel.CPU: -1.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 10}
        )


def test_adjustment_with_disjoint_channels_raises():
    trace = build_trace({"GPU": [100.0] * 10})
    baseline = IdleBaseline(
        means_w={Channel.CPU: 20.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 10}
    )
    with pytest.raises(ChannelMismatch):
        idle_adjusted_energy(trace, baseline)


def test_channel_without_baseline_stays_gross_with_warning():
    trace = build_trace({"CPU": [100.0] * 10, "GPU": [200.0] * 10})
    baseline = IdleBaseline(
        means_w={Channel.CPU: 20.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 10}
    )
    report = idle_adjusted_energy(trace, baseline)
    assert report.adjusted_j["GPU"] == report.gross_j["GPU"]
    assert any("GPU" in w and "gross" in w for w in report.warnings)


def test_negative_adjusted_energy_reported_not_clamped():
    trace = build_trace({"CPU": [10.0] * 10})
    baseline = IdleBaseline(
        means_w={Channel.CPU: 25.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 10}
    )
    report = idle_adjusted_energy(trace, baseline)
    assert report.total_adjusted_j == pytest.approx(-15.0, rel=1e-12)
    assert any("negative" in w for w in report.warnings)


@settings(max_examples=150)
@given(
    watts_lists=st.lists(
        st.lists(
            st.floats(min_value=0, max_value=1000, allow_nan=False),
            min_size=1,
            max_size=50,
        ),
        min_size=1,
        max_size=3,
    )
)
def test_self_subtraction_is_zero(watts_lists):
    channels = dict(zip(("CPU", "GPU", "DRAM"), watts_lists))
    trace = build_trace(channels)
    baseline = IdleBaseline.from_trace(trace)
    report = idle_adjusted_energy(trace, baseline)
    scale = max(report.total_gross_j, 1.0)
    assert abs(report.total_adjusted_j) <= 1e-9 * scale
    for channel in channels:
        assert abs(report.adjusted_j[channel]) <= 1e-9 * scale


def test_self_subtraction_on_gapless_constant_trace_is_exact():
    trace = build_trace({"CPU": [100.0] * 100, "GPU": [200.0] * 100})
    report = idle_adjusted_energy(trace, IdleBaseline.from_trace(trace))
    assert report.total_adjusted_j == 0.0


# --- epoch extraction and attribution ---


def spans_of(*pairs, run=(0, None)):
    events = []
    if run is not None:
        events.append(MarkerEvent(run[0], MarkerKind.RUN_START))
    for i, (a, b) in enumerate(pairs):
        events.append(MarkerEvent(a, MarkerKind.EPOCH_START, index=i))
        events.append(MarkerEvent(b, MarkerKind.EPOCH_END, index=i))
    if run is not None:
        end = run[1] if run[1] is not None else max(b for _, b in pairs)
        events.append(MarkerEvent(end, MarkerKind.RUN_END))
    return events


def test_extract_epoch_spans_happy_path():
    run, spans = extract_epoch_spans(spans_of((0, 10), (10, 25), run=(0, 30)))
    assert run == (0, 30)
    assert [(s.index, s.start_ns, s.end_ns) for s in spans] == [(0, 0, 10), (1, 10, 25)]


def test_extract_epoch_spans_ignores_transport_kinds():
    events = [
        MarkerEvent(0, MarkerKind.CLOCK_SYNC),
        MarkerEvent(1, MarkerKind.RUN_START),
        MarkerEvent(2, MarkerKind.EPOCH_START, index=0),
        MarkerEvent(3, MarkerKind.BATCH_DONE, index=0),
        MarkerEvent(4, MarkerKind.EPOCH_END, index=0),
        MarkerEvent(5, MarkerKind.PHASE, phase="training"),
        MarkerEvent(6, MarkerKind.RUN_END),
    ]
    run, spans = extract_epoch_spans(events)
    assert run == (1, 6)
    assert len(spans) == 1


@pytest.mark.parametrize(
    "events",
    [
        # unbalanced: epoch never closed
        [
            MarkerEvent(0, MarkerKind.RUN_START),
            MarkerEvent(1, MarkerKind.EPOCH_START, index=0),
            MarkerEvent(9, MarkerKind.RUN_END),
        ],
        # end without start
        [MarkerEvent(1, MarkerKind.EPOCH_END, index=0)],
        # nested epochs
        [
            MarkerEvent(0, MarkerKind.EPOCH_START, index=0),
            MarkerEvent(1, MarkerKind.EPOCH_START, index=1),
        ],
        # non-increasing index
        [
            MarkerEvent(0, MarkerKind.EPOCH_START, index=1),
            MarkerEvent(1, MarkerKind.EPOCH_END, index=1),
            MarkerEvent(2, MarkerKind.EPOCH_START, index=1),
            MarkerEvent(3, MarkerKind.EPOCH_END, index=1),
        ],
        # time goes backwards
        [
            MarkerEvent(5, MarkerKind.EPOCH_START, index=0),
            MarkerEvent(2, MarkerKind.EPOCH_END, index=0),
        ],
        # run_end precedes run_start
        [
            MarkerEvent(9, MarkerKind.RUN_START),
            MarkerEvent(1, MarkerKind.RUN_END),
        ],
    ],
)
def test_extract_epoch_spans_rejects_malformed(events):
    with pytest.raises(MalformedMarkers):
        extract_epoch_spans(events)


def test_attribute_two_equal_epochs():
    # 100 W for 10 s at 1 s spacing, two 5 s epochs
    trace = build_trace({"CPU": [100.0] * 10}, delta_t=1.0)
    markers = spans_of((0, 5_000_000_000), (5_000_000_000, 10_000_000_000), run=None)
    att = attribute_epochs(trace, markers)
    assert att.per_epoch_j == pytest.approx((500.0, 500.0), rel=1e-12)
    assert att.overhead_j == pytest.approx(0.0, abs=1e-12)


def test_attribute_partial_coverage_pools_overhead():
    # markers cover 8 of 10 seconds at 100 W: 200 J of overhead
    trace = build_trace({"CPU": [100.0] * 10}, delta_t=1.0)
    markers = spans_of((1_000_000_000, 9_000_000_000), run=None)
    att = attribute_epochs(trace, markers)
    assert att.per_epoch_j == pytest.approx((800.0,), rel=1e-12)
    assert att.overhead_j == pytest.approx(200.0, rel=1e-12)


def test_attribution_partitions_total_exactly():
    rng = random.Random(21)
    trace = irregular_trace(rng, 300, 0.1)
    span = trace.end_ns - trace.start_ns
    t0 = trace.start_ns
    markers = spans_of(
        (t0 + span // 10, t0 + span // 3),
        (t0 + span // 3, t0 + 2 * span // 3),
        (t0 + 2 * span // 3, t0 + span - span // 7),
        run=None,
    )
    baseline = IdleBaseline(
        means_w={c: 5.0 for c in trace.present_channels()},
        idle_duration_s=60.0,
        sample_counts={c: 100 for c in trace.present_channels()},
    )
    report = idle_adjusted_energy(trace, baseline, markers)
    parts = math.fsum(report.per_epoch_j) + report.overhead_j
    assert parts == pytest.approx(report.total_adjusted_j, rel=1e-12, abs=1e-9)


def test_build_report_clips_to_run_span():
    # 20 s of trace but the run occupies only the middle 10 s
    trace = build_trace({"CPU": [100.0] * 20}, delta_t=1.0)
    markers = [
        MarkerEvent(5_000_000_000, MarkerKind.RUN_START),
        MarkerEvent(15_000_000_000, MarkerKind.RUN_END),
    ]
    baseline = IdleBaseline(
        means_w={Channel.CPU: 0.0}, idle_duration_s=60.0, sample_counts={Channel.CPU: 10}
    )
    report = build_report(trace, baseline, markers)
    # samples at 5..15 s inclusive -> 11 intervals of 100 J
    assert report.total_adjusted_j == pytest.approx(1100.0, rel=1e-12)


def test_report_round_trip_and_canonical_json():
    trace = build_trace({"CPU": [100.0] * 10, "GPU": [200.0] * 10})
    baseline = IdleBaseline(
        means_w={Channel.CPU: 20.0, Channel.GPU: 50.0},
        idle_duration_s=60.0,
        sample_counts={Channel.CPU: 600, Channel.GPU: 600},
    )
    report = idle_adjusted_energy(trace, baseline)
    back = EnergyReport.from_dict(report.to_dict())
    assert back == report
    assert back.canonical_json() == report.canonical_json()


# --- extrapolation ---


def test_fit_exact_line():
    points = [(1.0, 500.0), (2.0, 1000.0), (3.0, 1500.0)]
    model = fit_extrapolation(points, unit="epoch")
    assert model.slope == pytest.approx(500.0, rel=1e-12)
    assert model.intercept == pytest.approx(0.0, abs=1e-9)
    assert model.fit_r == pytest.approx(1.0)
    assert not model.flagged
    assert predict_total(model, 100.0) == pytest.approx(50_000.0, rel=1e-9)


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        fit_extrapolation([(1.0, 2.0)])
    with pytest.raises(DegenerateInput):
        fit_extrapolation([(1.0, 2.0), (1.0, 3.0)])


def test_fit_flat_data_has_perfect_fit():
    model = fit_extrapolation([(1.0, 5.0), (2.0, 5.0), (3.0, 5.0)])
    assert model.slope == 0.0
    assert model.fit_r == 1.0
    assert not model.flagged


def test_fit_flags_nonlinear_data():
    points = [(float(x), float(x * x * x)) for x in range(1, 8)]
    points += [(float(x) + 0.5, 0.0) for x in range(1, 8)]
    model = fit_extrapolation(points)
    assert model.flagged


def test_fit_r_stays_in_bounds_and_prediction_rejects_negative():
    model = fit_extrapolation([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])
    assert -1.0 <= model.fit_r <= 1.0
    with pytest.raises(OutOfRange):
        model.predict(-1.0)


def test_one_epoch_profile_extrapolates_through_origin():
    points = cumulative_epoch_points([730.0])
    assert points == [(0.0, 0.0), (1.0, 730.0)]
    model = fit_extrapolation(points)
    assert model.predict(10.0) == pytest.approx(7300.0, rel=1e-9)


def test_cumulative_points_accumulate():
    assert cumulative_epoch_points([10.0, 20.0, 5.0]) == [
        (0.0, 0.0),
        (1.0, 10.0),
        (2.0, 30.0),
        (3.0, 35.0),
    ]


@given(
    slope=st.floats(min_value=1e-3, max_value=1e6),
    intercept=st.floats(min_value=0, max_value=1e6),
    n=st.integers(min_value=2, max_value=40),
)
def test_fit_recovers_exact_lines(slope, intercept, n):
    points = [(float(x), slope * x + intercept) for x in range(n)]
    model = fit_extrapolation(points)
    assert model.slope == pytest.approx(slope, rel=1e-9)
    assert model.intercept == pytest.approx(intercept, rel=1e-6, abs=1e-6)
    assert model.fit_r == pytest.approx(1.0, abs=1e-9)
