import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maa import rscrop
from maa.rscrop import (ScheduleError, axis_schedule, build_crop_plan, build_crops,
                        coverage_mask)


class FixedAlphaRng:
    """Stand-in rng yielding a scripted sequence of alpha draws."""

    def __init__(self, alphas):
        self.alphas = list(alphas)

    def integers(self, lo, hi=None):
        return self.alphas.pop(0)


def test_schedule_fixture_offsets():
    sched = axis_schedule(48, 32, 4, 1, 3, FixedAlphaRng([2, 1, 3, 2]))
    assert sorted(sched.offsets) == [0, 2, 4, 5, 8, 11, 12, 14, 16]
    assert sched.grid_offsets == [0, 4, 8, 12, 16]
    assert sched.jitter_offsets == [2, 5, 11, 14]
    assert sched.alphas == [2, 1, 3, 2]


def test_schedule_rejects_bad_parameters():
    rng = np.random.default_rng(0)
    with pytest.raises(ScheduleError):
        axis_schedule(48, 32, 4, 0, 3, rng)  # beta1 < 1
    with pytest.raises(ScheduleError):
        axis_schedule(48, 32, 4, 3, 1, rng)  # beta1 > beta2
    with pytest.raises(ScheduleError):
        axis_schedule(48, 32, 4, 1, 4, rng)  # beta2 >= l
    with pytest.raises(ScheduleError):
        axis_schedule(30, 32, 4, 1, 3, rng)  # W > S


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_schedule_invariants(data):
    w = data.draw(st.integers(8, 64), label="window")
    s = data.draw(st.integers(w, 2 * w + 17), label="scaled")
    l = data.draw(st.integers(2, min(w, 12)), label="step")
    b1 = data.draw(st.integers(1, l - 1), label="beta1")
    b2 = data.draw(st.integers(b1, l - 1), label="beta2")
    seed = data.draw(st.integers(0, 2**31), label="seed")
    sched = axis_schedule(s, w, l, b1, b2, np.random.default_rng(seed))

    limit = s - w
    assert sched.grid_offsets[-1] == limit
    assert all(0 <= o <= limit for o in sched.offsets)
    # even offsets form the coverage grid with spacing l
    interior = sched.grid_offsets[:-1]
    assert interior == [i * l for i in range(len(interior))]
    # jitter offsets sit strictly between grid points by their alpha
    for off, alpha in zip(sched.jitter_offsets, sched.alphas):
        assert b1 <= alpha <= b2
        assert (off - alpha) % l == 0
    # windows of width w starting at the offsets cover [0, s)
    covered = np.zeros(s, dtype=bool)
    for o in sched.grid_offsets:
        covered[o : o + w] = True
    assert covered.all()


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_crop_plan_coverage(data):
    """Union of crop windows covers the scaled image exactly."""
    in_size = data.draw(st.integers(16, 40), label="in_size")
    s_x = data.draw(st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0]), label="s_x")
    s_y = data.draw(st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0]), label="s_y")
    l = data.draw(st.integers(2, 6), label="step")
    b2 = data.draw(st.integers(1, l - 1), label="beta2")
    seed = data.draw(st.integers(0, 2**31), label="seed")
    plan = build_crop_plan(in_size, s_x, s_y, in_size, l, (1, b2), 4096,
                           np.random.default_rng(seed))
    assert coverage_mask(plan).all()
    assert plan.k <= 4096
    for ox, oy in plan.offsets:
        assert 0 <= ox <= plan.scaled_w - plan.window
        assert 0 <= oy <= plan.scaled_h - plan.window


def test_kmax_cap_drops_jitter_only():
    rng = np.random.default_rng(3)
    full = build_crop_plan(32, 2.0, 2.0, 32, 4, (1, 3), 4096, rng)
    n_grid = len(full.sched_x.grid_offsets) * len(full.sched_y.grid_offsets)
    capped = build_crop_plan(32, 2.0, 2.0, 32, 4, (1, 3), n_grid,
                             np.random.default_rng(3))
    assert capped.k == n_grid
    assert set(capped.offsets) == set(full.offsets[:n_grid])
    assert coverage_mask(capped).all()


def test_kmax_below_grid_raises():
    with pytest.raises(ScheduleError):
        build_crop_plan(32, 2.0, 2.0, 32, 4, (1, 3), 4, np.random.default_rng(0))


def test_no_sliding_single_topleft_window(rng):
    plan = build_crop_plan(32, 1.5, 1.5, 32, 4, (1, 3), 128, rng, use_sliding=False)
    assert plan.offsets == [(0, 0)]
    crops = plan.apply(np.random.default_rng(0).random((3, 32, 32)))
    assert crops.shape == (1, 3, 32, 32)


def test_apply_extracts_expected_windows(rng):
    img = rng.random((3, 24, 24))
    plan = build_crop_plan(24, 1.5, 1.25, 24, 3, (1, 2), 512,
                           np.random.default_rng(5))
    scaled = rscrop.resize(img, 1.5, 1.25)
    assert scaled.shape == (3, 30, 36)
    crops = plan.apply(img)
    for crop, (ox, oy) in zip(crops, plan.offsets):
        assert np.array_equal(crop, scaled[:, oy : oy + 24, ox : ox + 24])


def test_vjp_is_adjoint_of_apply(rng):
    img = rng.random((3, 20, 20))
    plan = build_crop_plan(20, 1.75, 1.25, 20, 3, (1, 2), 512,
                           np.random.default_rng(1))
    crops = plan.apply(img)
    g = rng.random(crops.shape)
    lhs = float((crops * g).sum())
    rhs = float((img * plan.vjp(g, 20, 20)).sum())
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_downscale_requires_flag(rng):
    with pytest.raises(ScheduleError):
        build_crop_plan(32, 0.5, 1.0, 32, 4, (1, 3), 128, rng)
    plan = build_crop_plan(32, 0.5, 0.5, 32, 4, (1, 3), 128, rng,
                           allow_downscale=True)
    img = np.random.default_rng(2).random((3, 32, 32))
    crops = plan.apply(img)
    # scaled 16x16 content zero-padded up to the 32-window
    assert crops.shape[1:] == (3, 32, 32)
    assert np.allclose(crops[0][:, 16:, :], 0.0)
    g = np.random.default_rng(3).random(crops.shape)
    lhs = float((crops * g).sum())
    rhs = float((img * plan.vjp(g, 32, 32)).sum())
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_build_crops_triples_match_plan(rng):
    img = rng.random((3, 32, 32))
    batch = build_crops(img, 1.5, 1.5, 32, 4, (1, 3), 128, np.random.default_rng(9))
    assert batch.k == batch.plan.k
    assert np.array_equal(batch.stacked(), batch.plan.apply(img))
    for (ox, oy, crop), off in zip(batch.crops, batch.plan.offsets):
        assert (ox, oy) == off
