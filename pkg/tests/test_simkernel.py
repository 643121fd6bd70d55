import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_ivus.simkernel import (
    TWO_PI,
    ArrayGeometry,
    Scene,
    SceneSampler,
    WireTarget,
    advance_scene,
    check_scene,
    simulate_clean_rf,
    simulate_rf,
    time_of_flight,
)


class TestGeometry:
    def test_defaults(self, geom):
        assert geom.num_measurements == 160
        assert geom.element_positions.shape == (32, 2)
        np.testing.assert_allclose(np.linalg.norm(geom.element_positions, axis=1), 0.5)

    @pytest.mark.parametrize("kwargs", [
        {"sub_aperture": 4},
        {"sub_aperture": 0},
        {"num_elements": 3, "sub_aperture": 3},
        {"num_elements": 8, "sub_aperture": 9},
        {"array_radius": -1.0},
        {"speed_of_sound": 0.0},
        {"num_fast_time_samples": 0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            ArrayGeometry(**kwargs)

    def test_pairs_match_centred_aperture(self, geom):
        tx, rx = geom.pairs()
        assert (tx[0], rx[0]) == (0, 30)
        centre = np.arange(32) * 5 + 2
        np.testing.assert_array_equal(tx[centre], rx[centre])

    def test_pulse_bandwidth_is_six_db_width(self):
        # measure the -6 dB width of the sampled pulse spectrum directly
        g = ArrayGeometry()
        fs = 2000.0
        t = np.arange(-4.0, 4.0, 1.0 / fs)
        spec = np.abs(np.fft.rfft(g.pulse(t), n=1 << 20))
        f = np.fft.rfftfreq(1 << 20, 1.0 / fs)
        above = f[spec >= spec.max() / 2.0]
        width = above.max() - above.min()
        assert width == pytest.approx(g.pulse_bandwidth_frac * g.pulse_center_freq, rel=2e-3)

    def test_pulse_peaks_at_zero(self, geom):
        assert geom.pulse(np.array([0.0]))[0] == 1.0


class TestScene:
    def test_needs_a_target(self):
        with pytest.raises(ValueError):
            Scene(())

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            Scene((WireTarget(0.0, 3.0),), noise_std=-0.1)

    def test_advance_identity(self):
        s = Scene((WireTarget(1.0, 3.0, 0.0),))
        s2 = advance_scene(s)
        assert s2.targets == s.targets
        assert s2.frame_index == 1

    def test_advance_period(self):
        s = Scene((WireTarget(0.4, 3.0, TWO_PI / 10),))
        for _ in range(10):
            s = advance_scene(s)
        d = (s.targets[0].angle - 0.4 + math.pi) % TWO_PI - math.pi
        assert abs(d) < 1e-9

    def test_advance_wraps(self):
        s = advance_scene(Scene((WireTarget(6.0, 3.0, 1.0),)))
        assert s.targets[0].angle == pytest.approx(7.0 - TWO_PI)
        assert s.targets[0].angle == pytest.approx(0.7168, abs=1e-4)
        assert s.targets[0].radial_distance == 3.0

    def test_rejects_target_inside_array(self, geom):
        with pytest.raises(ValueError, match="inside"):
            Scene.create([WireTarget(0.0, 0.4)], geom)

    def test_rejects_target_past_record(self, small_geom):
        with pytest.raises(ValueError, match="record"):
            Scene.create([WireTarget(0.0, 6.0)], small_geom)

    def test_rejects_target_past_max_depth(self, geom):
        with pytest.raises(ValueError, match="max_depth"):
            Scene.create([WireTarget(0.0, 7.0)], geom, max_depth=5.0)

    def test_simulate_checks_scene(self, small_geom):
        with pytest.raises(ValueError):
            simulate_rf(Scene((WireTarget(0.0, 6.0),)), small_geom)


class TestSampler:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_draws_within_ranges(self, seed):
        g = ArrayGeometry()
        sc = SceneSampler(num_targets=3).sample(np.random.default_rng(seed), g, 8.0)
        assert len(sc.targets) == 3
        for t in sc.targets:
            assert 0 <= t.angle < TWO_PI
            assert 2.0 <= t.radial_distance <= 7.0
            assert -0.3 <= t.angular_velocity <= 0.3
        check_scene(sc, g, 8.0)

    def test_same_rng_same_scene(self, geom):
        a = SceneSampler().sample(np.random.default_rng(5), geom)
        b = SceneSampler().sample(np.random.default_rng(5), geom)
        assert a == b


class TestSimulate:
    def test_zero_case(self, small_geom):
        sc = Scene((WireTarget(0.3, 2.0, reflectivity=0.0),), noise_std=0.0)
        rf = simulate_rf(sc, small_geom)
        assert rf.shape == (24, 192)
        assert not rf.any()

    @pytest.mark.parametrize("i,d", [(0, 2.0), (5, 3.7), (17, 6.5), (31, 4.2)])
    def test_monostatic_peak_at_analytic_sample(self, geom, i, d):
        sc = Scene((WireTarget(TWO_PI * i / 32, d),), noise_std=0.0)
        rf = simulate_rf(sc, geom)
        n = i * 5 + 2  # tx = rx = i
        from scipy.signal import hilbert
        peak = np.argmax(np.abs(hilbert(rf[n])))
        expected = round(geom.sampling_freq * 2 * (d - geom.array_radius) / geom.speed_of_sound)
        assert abs(peak - expected) <= 1

    def test_tof_is_path_length_over_c(self, geom):
        sc = Scene((WireTarget(1.0, 3.0),))
        tof = time_of_flight(sc, geom)
        tx, rx = geom.pairs()
        p = sc.targets[0].position
        pos = geom.element_positions
        n = 77
        want = (np.linalg.norm(pos[tx[n]] - p) + np.linalg.norm(pos[rx[n]] - p)) / geom.speed_of_sound
        assert tof[n, 0] == pytest.approx(want, rel=1e-14)

    def test_deterministic(self, geom):
        sc = Scene((WireTarget(1.0, 3.0),), noise_std=0.1, rng_seed=9, frame_index=3)
        np.testing.assert_array_equal(simulate_rf(sc, geom), simulate_rf(sc, geom))

    def test_noise_differs_per_frame(self, geom):
        sc = Scene((WireTarget(1.0, 3.0),), noise_std=0.1, rng_seed=9)
        a = simulate_rf(sc, geom)
        b = simulate_rf(advance_scene(sc), geom)
        assert not np.array_equal(a, b)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, TWO_PI, exclude_max=True), st.floats(1.0, 3.0),
           st.floats(0, TWO_PI, exclude_max=True), st.floats(1.0, 3.0))
    def test_linearity(self, a1, d1, a2, d2):
        g = ArrayGeometry(num_elements=8, sub_aperture=3, num_fast_time_samples=192)
        t1, t2 = WireTarget(a1, d1), WireTarget(a2, d2)
        both = simulate_rf(Scene((t1, t2), noise_std=0.0), g)
        one = simulate_rf(Scene((t1,), noise_std=0.0), g)
        two = simulate_rf(Scene((t2,), noise_std=0.0), g)
        np.testing.assert_allclose(both, one + two, atol=1e-9, rtol=0)

    def test_reciprocity(self, geom):
        sc = Scene((WireTarget(0.7, 3.3), WireTarget(4.0, 5.1)), noise_std=0.0)
        rf = simulate_rf(sc, geom)
        tx, rx = geom.pairs()
        lookup = {(int(a), int(b)): n for n, (a, b) in enumerate(zip(tx, rx))}
        checked = 0
        for (a, b), n in lookup.items():
            if (b, a) in lookup and a != b:
                np.testing.assert_allclose(rf[n], rf[lookup[(b, a)]], atol=1e-9, rtol=0)
                checked += 1
        assert checked == 32 * 4

    def test_noise_free_component_is_shared(self, small_geom):
        # mean over many noisy frames recovers the same clean signal whatever the seed
        targets = (WireTarget(0.5, 2.5),)
        clean = simulate_clean_rf(Scene(targets, noise_std=0.0), small_geom)
        sigma, draws = 0.5, 1000
        for seed in (1, 2):
            acc = np.zeros_like(clean)
            for f in range(draws):
                acc += simulate_rf(Scene(targets, noise_std=sigma, rng_seed=seed, frame_index=f), small_geom)
            dev = np.abs(acc / draws - clean)
            # 3 sigma / sqrt(draws) bound, allowing the expected tail fraction
            assert np.mean(dev > 3 * sigma / math.sqrt(draws)) < 0.01

    def test_noise_std(self, geom):
        sc = Scene((WireTarget(1.0, 3.0),), noise_std=0.2, rng_seed=4)
        resid = simulate_rf(sc, geom) - simulate_clean_rf(sc, geom)
        assert resid.std() == pytest.approx(0.2, rel=0.02)
