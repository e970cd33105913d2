import numpy as np
import pytest

from powder_rake.core import ParticleSet
from powder_rake.neighbors import brute_force_pairs, build_neighbors


def _random(n, side, seed, rmin=7.5e-6, rmax=25e-6):
    rng = np.random.default_rng(seed)
    return ParticleSet.at_rest(rng.uniform(0, side, (n, 3)), rng.uniform(rmin, rmax, n))


def _as_set(pairs):
    return {tuple(p) for p in pairs.tolist()}


def test_far_apart_pair_has_no_candidate():
    d = 30e-6
    p = ParticleSet.at_rest([[0, 0, 0], [10 * d, 0, 0]], [d / 2, d / 2])
    assert len(build_neighbors(p, 1e-8).pairs) == 0


def test_touching_pair_is_single_candidate():
    p = ParticleSet.at_rest([[0, 0, 0], [30e-6, 0, 0]], [15e-6, 15e-6])
    assert build_neighbors(p, 1e-8).pairs.tolist() == [[0, 1]]


def test_matches_brute_force_at_500():
    p = _random(500, 4e-4, seed=1)
    extra = 5e-6
    grid = build_neighbors(p, extra, (0, 0, 0), (4e-4, 4e-4, 4e-4))
    assert _as_set(grid.pairs) == _as_set(brute_force_pairs(p, extra))
    assert len(grid.pairs) > 100


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force_periodic(seed):
    side = 3e-4
    p = _random(300, side, seed)
    grid = build_neighbors(p, 2e-6, (0, 0, 0), (side, side, side), periodic=(True, True, False))
    oracle = brute_force_pairs(p, 2e-6, periodic_len=(side, side, 0.0))
    assert _as_set(grid.pairs) == _as_set(oracle)


def test_tiny_periodic_box_has_no_duplicates():
    side = 80e-6  # fewer than three cells per axis
    p = _random(12, side, 3, 5e-6, 10e-6)
    grid = build_neighbors(p, 1e-6, (0, 0, 0), (side, side, side), periodic=(True, True, True))
    oracle = brute_force_pairs(p, 1e-6, periodic_len=(side, side, side))
    assert len(grid.pairs) == len(_as_set(grid.pairs))
    assert _as_set(grid.pairs) == _as_set(oracle)


def test_pairs_sorted_and_ordered():
    grid = build_neighbors(_random(400, 3e-4, 7), 3e-6)
    pairs = grid.pairs
    assert np.all(pairs[:, 0] < pairs[:, 1])
    keys = pairs[:, 0] * 400 + pairs[:, 1]
    assert np.all(np.diff(keys) > 0)


def test_inactive_particles_excluded():
    p = ParticleSet.at_rest([[0, 0, 0], [30e-6, 0, 0], [60e-6, 0, 0]], [15e-6] * 3)
    p = p.replace(active=[True, False, True])
    assert len(build_neighbors(p, 1e-8).pairs) == 0


def test_particles_outside_domain_are_clamped_not_lost():
    p = ParticleSet.at_rest([[-1e-4, 0, 0], [-1e-4 + 2.9e-5, 0, 0]], [15e-6, 15e-6])
    grid = build_neighbors(p, 1e-8, (0, 0, 0), (1e-3, 1e-3, 1e-3))
    assert grid.pairs.tolist() == [[0, 1]]


def test_cell_size_covers_largest_pair():
    p = _random(200, 3e-4, 9)
    extra = 4e-6
    grid = build_neighbors(p, extra, (0, 0, 0), (3e-4, 3e-4, 3e-4))
    assert np.all(grid.cell_size >= 2 * p.radius.max() + extra)
    assert sum(len(v) for v in grid.cells.values()) == len(p)


def test_empty_set():
    assert len(build_neighbors(ParticleSet.empty(), 1e-6).pairs) == 0
