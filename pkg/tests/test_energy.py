"""Linear power model and step-function energy integration."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adacloud.energy import PowerSample, energy_by_machine, integrate, power
from adacloud.model import PhysicalMachine, ResourceVector


def machine(idle=100.0, peak=250.0, powered_on=True):
    return PhysicalMachine("m1", ResourceVector(8, 16384, 200), idle, peak,
                           powered_on=powered_on)


class TestPower:
    def test_powered_off_draws_nothing(self):
        assert power(machine(powered_on=False), 0.7) == 0.0

    def test_idle_draw_at_zero_utilization(self):
        assert power(machine(), 0.0) == 100.0

    def test_full_draw_at_full_utilization(self):
        assert power(machine(), 1.0) == 250.0

    def test_linear_midpoint(self):
        assert power(machine(), 0.5) == pytest.approx(175.0)

    def test_utilization_out_of_range_is_fatal(self):
        with pytest.raises(ValueError):
            power(machine(), 1.2)
        with pytest.raises(ValueError):
            power(machine(), -0.1)

    @given(u1=st.floats(min_value=0, max_value=1),
           u2=st.floats(min_value=0, max_value=1))
    def test_power_is_monotone_in_utilization(self, u1, u2):
        lo, hi = sorted((u1, u2))
        assert power(machine(), lo) <= power(machine(), hi)


class TestIntegrate:
    def test_constant_draw(self):
        samples = [PowerSample(0, "m1", 100.0)]
        assert integrate(samples, 10_000) == pytest.approx(1000.0)

    def test_no_samples_means_no_energy(self):
        assert integrate([], 10_000) == 0.0

    def test_step_down_to_zero(self):
        samples = [PowerSample(0, "m1", 100.0), PowerSample(5000, "m1", 0.0)]
        assert integrate(samples, 10_000) == pytest.approx(500.0)

    def test_sample_after_horizon_contributes_nothing(self):
        samples = [PowerSample(0, "m1", 100.0), PowerSample(20_000, "m1", 999.0)]
        assert integrate(samples, 10_000) == pytest.approx(1000.0)

    def test_out_of_order_samples_are_fatal(self):
        samples = [PowerSample(5000, "m1", 100.0), PowerSample(0, "m1", 50.0)]
        with pytest.raises(ValueError):
            integrate(samples, 10_000)

    def test_same_instant_resample_keeps_the_newer_value(self):
        # a zero-width step contributes nothing; the replacement value holds
        samples = [PowerSample(0, "m1", 100.0),
                   PowerSample(1000, "m1", 50.0),
                   PowerSample(1000, "m1", 200.0)]
        assert integrate(samples, 2000) == pytest.approx(100.0 + 200.0)

    @given(split=st.integers(min_value=0, max_value=10_000))
    def test_integration_splits_at_any_interior_point(self, split):
        samples = [PowerSample(0, "m1", 130.0), PowerSample(4000, "m1", 20.0)]
        whole = integrate(samples, 10_000)
        # re-sampling the held value at `split` must not change the total
        resampled = sorted(samples + [PowerSample(split, "m1",
                                                  130.0 if split < 4000 else 20.0)],
                           key=lambda s: s.time_ms)
        assert integrate(resampled, 10_000) == pytest.approx(whole)


class TestEnergyByMachine:
    def test_streams_split_per_machine(self):
        samples = [
            PowerSample(0, "m1", 100.0),
            PowerSample(0, "m2", 40.0),
            PowerSample(5000, "m1", 0.0),
        ]
        totals = energy_by_machine(samples, 10_000)
        assert totals["m1"] == pytest.approx(500.0)
        assert totals["m2"] == pytest.approx(400.0)

    def test_empty_stream_gives_empty_map(self):
        assert energy_by_machine([], 10_000) == {}
