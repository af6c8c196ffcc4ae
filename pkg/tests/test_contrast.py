import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comhr import diffcore as dc
from comhr.contrast import (
    ContrastConfig,
    contrastive_total,
    cross_loss,
    intra_loss,
    positive_sets,
    sets_from_distances,
)


def _sets(lists):
    n = len(lists)
    D = np.ones((n, n))
    for i, s in enumerate(lists):
        D[i, s] = 0.0
    np.fill_diagonal(D, 0.0)
    return sets_from_distances(D, 0.5)


def test_identical_poses_are_positive(rng):
    j = rng.normal(size=(1, 24, 3)).repeat(2, axis=0)
    assert [list(s) for s in positive_sets(j, 1e-9).sets] == [[1], [0]]


def test_root_translation_is_ignored(rng):
    j = rng.normal(size=(24, 3))
    P = positive_sets(np.stack([j, j + [3.0, -1.0, 7.0]]), 1e-6)
    assert P.distances[0, 1] < 1e-12 and list(P.sets[0]) == [1]


def test_hand_distances():
    D = np.array([[0, 0.1, 0.4], [0.1, 0, 0.4], [0.4, 0.4, 0]])
    P = sets_from_distances(D, 0.15)
    assert [list(s) for s in P.sets] == [[1], [0], []]


def test_singletons_give_zero(rng):
    h = rng.normal(size=(4, 5))
    assert intra_loss(h, _sets([[1], [0], [3], [2]])).item() == 0.0


def test_uniform_pair_gives_ln2():
    # anchor 0 sees nodes 1 and 2 at the same angle
    h = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.6, 0.0, 0.8]])
    loss = intra_loss(h, _sets([[1, 2], [], []])).item()
    assert abs(loss - math.log(2)) < 1e-9


def test_uniform_logits_ignore_temperature():
    h = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.6, 0.0, 0.8]])
    P = _sets([[1, 2], [], []])
    assert abs(intra_loss(h, P, 0.05).item() - intra_loss(h, P, 0.5).item()) < 1e-12


def test_no_positives_returns_zero():
    assert intra_loss(np.eye(3), _sets([[], [], []])).item() == 0.0


def test_identical_modalities_cross_zero(rng):
    h = rng.normal(size=(5, 4))
    assert cross_loss(h, h, h).item() == 0.0


def test_orthogonal_modalities_cross_zero():
    e = np.eye(3)
    assert cross_loss(e[:1], e[1:2], e[2:]).item() == 0.0


def test_planar_triple_cross_half():
    ang = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    v = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    assert abs(cross_loss(v[:1], v[1:2], v[2:]).item() - 0.5) < 1e-9


def test_total_weighting():
    assert abs(contrastive_total([0.0, 0.0, 0.0], 0.5, 0.03).item() - 0.015) < 1e-12
    assert contrastive_total([0.1, 0.2, 0.3], 0.9, 0.0).item() == pytest.approx(0.6, abs=1e-15)
    assert contrastive_total([0.0, 0.0, 0.0], 0.0).item() == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastConfig(tau_temp=0.0)
    with pytest.raises(ValueError):
        ContrastConfig(denominator="some")


def _random_sets(rng, n):
    D = rng.uniform(0, 1, size=(n, n))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0)
    return sets_from_distances(D, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.03, 1.0))
def test_intra_nonnegative_and_permutation_invariant(n, seed, tau):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, 4))
    P = _random_sets(rng, n)
    loss = intra_loss(h, P, tau).item()
    assert loss >= -1e-12
    perm = rng.permutation(n)
    Pp = sets_from_distances(P.distances[np.ix_(perm, perm)], 0.5)
    assert abs(intra_loss(h[perm], Pp, tau).item() - loss) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_cross_in_unit_interval(n, seed):
    rng = np.random.default_rng(seed)
    hs = [rng.normal(size=(n, 3)) for _ in range(3)]
    v = cross_loss(*hs).item()
    assert 0.0 <= v <= 1.0


def test_isolated_node_gets_exact_zero_gradient(rng):
    h = dc.Parameter("h", rng.normal(size=(4, 5)))
    dc.backward(intra_loss(h, _sets([[1], [0, 2], [1], []])))
    assert np.array_equal(h.grad[3], np.zeros(5))
    assert np.abs(h.grad[:3]).sum() > 0
