# File: tests/test_depth_advisor.py
import math

import numpy as np
import pytest

from schemas.errors import DegenerateBoundingBox, NonPositiveInput, TooFewGaussians
from services.depth_advisor import (
    advise_depth,
    complexity_score,
    nearest_neighbor_distances,
    optimal_depth,
    raw_depth,
)


def unit_grid(n=10):
    axis = np.arange(n, dtype=np.float64)
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)


def test_two_points_see_each_other():
    distances = nearest_neighbor_distances(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(distances, [3.0, 3.0])


def test_nearest_neighbor_needs_two_points():
    with pytest.raises(TooFewGaussians):
        nearest_neighbor_distances(np.zeros((1, 3)))


def test_kd_tree_matches_brute_force():
    rng = np.random.default_rng(0)
    points = rng.uniform(-5, 5, size=(300, 3))
    brute = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(brute, np.inf)
    np.testing.assert_array_equal(nearest_neighbor_distances(points), brute.min(axis=1))


def test_unit_grid_complexity_and_depth(cloud_factory):
    cloud = cloud_factory(unit_grid())
    score = complexity_score(cloud)
    assert score.l_box == 9.0
    assert score.cs == pytest.approx(1.0 / 9.0, rel=1e-12)
    assert score.spacing == 1.0
    advice = advise_depth(cloud)
    assert advice.raw_depth == -4
    assert advice.depth == 1


def test_quantile_picks_the_close_pairs(cloud_factory):
    xs, ys = np.meshgrid(np.arange(9.0), np.arange(10.0), indexing="ij")
    plane = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    lifted = np.stack([np.zeros(10), np.arange(10.0), np.full(10, 0.5)], axis=1)
    score = complexity_score(cloud_factory(np.concatenate([plane, lifted])))
    assert score.l_box == 9.0
    assert score.cs == pytest.approx(0.5 / 9.0, rel=1e-12)
    assert score.spacing == 0.5


@pytest.mark.parametrize(
    "cs, gamma, expected",
    [
        (2.0**-8, 1.0, 8),
        (0.003, 1.0, 8),
        (2.0**-14, 1.0, 10),
        (2.0**-8 / 100.0, 100.0, 8),
        (0.5, 1.0, 1),
    ],
)
def test_optimal_depth(cs, gamma, expected):
    assert optimal_depth(cs, gamma=gamma) == expected


def test_raw_depth_rejects_non_positive_inputs():
    with pytest.raises(NonPositiveInput):
        raw_depth(0.0)
    with pytest.raises(NonPositiveInput):
        raw_depth(0.1, gamma=-1.0)


@pytest.mark.parametrize(
    "product, expected",
    [
        (0.125, 3),
        (np.nextafter(0.125, 1.0), 3),
        (np.nextafter(0.125, 0.0), 3),
        (0.125 * (1.0 + 1e-10), 2),
        (0.125 * (1.0 - 1e-10), 3),
        (0.3, 1),
    ],
)
def test_raw_depth_snaps_only_rounding_noise(product, expected):
    assert raw_depth(float(product), gamma=1.0) == expected


def test_depth_is_monotone_in_complexity():
    scores = np.geomspace(1e-7, 1.0, 200)
    depths = [optimal_depth(cs) for cs in scores]
    assert all(a >= b for a, b in zip(depths, depths[1:]))


def test_too_few_gaussians(cloud_factory):
    with pytest.raises(TooFewGaussians):
        complexity_score(cloud_factory(np.random.default_rng(0).normal(size=(5, 3))))


def test_degenerate_bounding_box(cloud_factory):
    with pytest.raises(DegenerateBoundingBox):
        complexity_score(cloud_factory(np.ones((20, 3))))


def test_score_is_scale_invariant(cloud_factory):
    points = np.random.default_rng(1).uniform(size=(500, 3))
    cs = complexity_score(cloud_factory(points)).cs
    scaled = complexity_score(cloud_factory(points * 37.5)).cs
    assert scaled == pytest.approx(cs, rel=1e-12)


def test_duplicate_means_fall_back_to_default_depth(cloud_factory):
    points = np.repeat(np.random.default_rng(2).uniform(size=(10, 3)), 2, axis=0)
    advice = advise_depth(cloud_factory(points), default_depth=9)
    assert advice.cs == 0.0
    assert advice.depth == 9
    assert math.isfinite(advice.l_box)
