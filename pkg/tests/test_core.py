import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcodec import core
from trajcodec.core import Channel, NormStats, Trajectory

from conftest import CHANNELS_7, make_trajectory


def single_channel_traj(values, traj_id="t"):
    arr = np.asarray(values, dtype=np.float64)[:, None]
    return Trajectory(
        values=arr,
        channels=(Channel("x", "position"),),
        rate_hz=30.0,
        traj_id=traj_id,
    )


class TestTrajectory:
    def test_validates_shape_and_finiteness(self):
        with pytest.raises(ValueError, match="at least 2 steps"):
            single_channel_traj([1.0])
        with pytest.raises(ValueError, match="non-finite value in channel 'x'"):
            single_channel_traj([1.0, np.nan])
        with pytest.raises(ValueError, match="rate_hz"):
            Trajectory(
                values=np.zeros((3, 1)),
                channels=(Channel("x", "position"),),
                rate_hz=0.0,
            )

    def test_channel_count_must_match(self):
        with pytest.raises(ValueError, match="channel entries"):
            Trajectory(
                values=np.zeros((3, 2)),
                channels=(Channel("x", "position"),),
                rate_hz=30.0,
            )

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError, match="role"):
            Channel("x", "velocity")

    def test_values_are_read_only(self):
        traj = single_channel_traj([0.0, 1.0])
        with pytest.raises(ValueError):
            traj.values[0, 0] = 5.0


class TestFitNormStats:
    def test_uniform_grid_percentiles(self):
        traj = single_channel_traj(np.arange(101.0))
        stats = core.fit_norm_stats([traj])
        assert stats.p1[0] == pytest.approx(1.0)
        assert stats.p99[0] == pytest.approx(99.0)
        assert not stats.degenerate[0]

    def test_constant_channel_is_degenerate(self):
        traj = single_channel_traj([5.0, 5.0, 5.0])
        stats = core.fit_norm_stats([traj])
        assert stats.p1[0] == stats.p99[0] == 5.0
        assert stats.degenerate[0]

    def test_pooling_is_concatenation(self):
        a = single_channel_traj(np.arange(0.0, 50.0), "a")
        b = single_channel_traj(np.arange(50.0, 101.0), "b")
        pooled = core.fit_norm_stats([a, b])
        direct = core.fit_norm_stats([single_channel_traj(np.arange(101.0))])
        np.testing.assert_allclose(pooled.p1, direct.p1)
        np.testing.assert_allclose(pooled.p99, direct.p99)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        trajs = [single_channel_traj(rng.normal(size=40), str(i)) for i in range(5)]
        forward = core.fit_norm_stats(trajs)
        backward = core.fit_norm_stats(trajs[::-1])
        np.testing.assert_array_equal(forward.p1, backward.p1)
        np.testing.assert_array_equal(forward.p99, backward.p99)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty corpus"):
            core.fit_norm_stats([])
        with pytest.raises(ValueError, match="expected 2"):
            core.fit_norm_stats([single_channel_traj([0.0, 1.0])], channel_count=2)


class TestNormalize:
    def stats(self, p1, p99):
        return NormStats(p1=np.array([p1]), p99=np.array([p99]))

    def test_endpoints_and_midpoint(self):
        stats = self.stats(1.0, 99.0)
        values = np.array([[1.0], [99.0], [50.0]])
        out = core.normalize(values, stats)
        np.testing.assert_allclose(out[:, 0], [-1.0, 1.0, 0.0])

    def test_out_of_range_extends_linearly(self):
        stats = self.stats(1.0, 99.0)
        out = core.normalize(np.array([[100.0]]), stats)
        # 2 * 99 / 98 - 1 = 50/49
        assert out[0, 0] == pytest.approx(50.0 / 49.0, rel=1e-15)
        assert out[0, 0] > 1.0  # preserved, not clipped

    def test_degenerate_channel_maps_to_zero_and_back_to_p1(self):
        stats = NormStats(p1=np.array([5.0]), p99=np.array([5.0]))
        out = core.normalize(np.array([[5.0], [7.0]]), stats)
        np.testing.assert_array_equal(out, np.zeros((2, 1)))
        back = core.denormalize(out, stats)
        np.testing.assert_array_equal(back, np.full((2, 1), 5.0))

    def test_shape_mismatch(self):
        stats = self.stats(0.0, 1.0)
        with pytest.raises(ValueError, match="does not match"):
            core.normalize(np.zeros((3, 2)), stats)
        with pytest.raises(ValueError, match="does not match"):
            core.denormalize(np.zeros((3, 2)), stats)

    @given(
        p1=st.floats(-100.0, 100.0),
        span=st.floats(1e-6, 200.0),
        x=st.floats(-500.0, 500.0),
    )
    @settings(max_examples=200)
    def test_round_trip_identity(self, p1, span, x):
        stats = NormStats(p1=np.array([p1]), p99=np.array([p1 + span]))
        values = np.array([[x]])
        back = core.denormalize(core.normalize(values, stats), stats)
        assert back[0, 0] == pytest.approx(x, rel=1e-12, abs=1e-9)

    def test_out_of_range_fraction(self):
        assert core.out_of_range_fraction(np.array([[0.5, -2.0], [1.5, 0.0]])) == 0.5
        assert core.out_of_range_fraction(np.empty((0, 2))) == 0.0


class TestChunking:
    def test_exact_multiple(self):
        spans, dropped = core.chunk_spans(90, 30)
        assert spans == [(0, 30), (30, 30), (60, 30)]
        assert dropped == 0

    def test_short_tail_kept(self):
        spans, dropped = core.chunk_spans(35, 30)
        assert spans == [(0, 30), (30, 5)]
        assert dropped == 0

    def test_single_step_tail_dropped(self):
        spans, dropped = core.chunk_spans(31, 30)
        assert spans == [(0, 30)]
        assert dropped == 1

    def test_horizon_validation(self):
        with pytest.raises(ValueError, match="horizon"):
            core.chunk_spans(10, 1)

    @given(n_steps=st.integers(2, 500), horizon=st.integers(2, 60))
    @settings(max_examples=200)
    def test_lengths_account_for_every_step(self, n_steps, horizon):
        spans, dropped = core.chunk_spans(n_steps, horizon)
        assert sum(n for _, n in spans) + dropped == n_steps
        assert all(2 <= n <= horizon for _, n in spans)
        assert dropped in (0, 1)
        starts = [s for s, _ in spans]
        assert starts == sorted(starts)

    def test_split_chunks_values(self):
        values = np.arange(10.0)[:, None]
        chunks, dropped = core.split_chunks("t", values, 4)
        assert [c.start for c in chunks] == [0, 4, 8]
        assert [c.length for c in chunks] == [4, 4, 2]
        assert dropped == 0
        np.testing.assert_array_equal(chunks[2].values[:, 0], [8.0, 9.0])


def test_seven_channel_roles_fixture():
    traj = make_trajectory(np.zeros((4, 7)) + 0.5)
    assert traj.roles == (
        "position",
        "position",
        "position",
        "rotation",
        "rotation",
        "rotation",
        "gripper",
    )
    assert len(CHANNELS_7) == 7
