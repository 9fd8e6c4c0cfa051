import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leslab.covers import (KIND_SIGMA, CoverError, LayerEscapeError, annulus_ball_count,
                           build_cover, classify_growth, cover_from_json, cover_to_json,
                           expand_layers, layers, remove_ball, separation_constants,
                           separation_violations, validate_cover)


@pytest.mark.parametrize("kind", ["uloc", "dyadic", "axial"])
@pytest.mark.parametrize("R", [8, 16])
def test_built_covers_validate(cover_cache, kind, R):
    rep = validate_cover(cover_cache(kind, R))
    assert rep.valid, rep


def test_uloc_overlap_and_ratio_exact(cover_cache):
    rep = validate_cover(cover_cache("uloc", 10))
    assert rep.max_intersections == 26
    assert rep.worst_ratio == 1.0
    assert KIND_SIGMA["uloc"] == 26


def test_uloc_ball_count_small_box():
    # side-2 tiling of [-2, 2]^3 with one extra ring of cells: 3^3 centres
    assert len(build_cover("uloc", 2)) == 27


def test_removing_a_ball_breaks_coverage(cover_cache):
    c = cover_cache("uloc", 8)
    b = c.nearest_ball(np.zeros(3))
    assert not validate_cover(remove_ball(c, b)).covered


def test_separation_constants_match_formula():
    for eta in (1.0, 2.0, 5.0):
        kappa, _ = separation_constants(eta)
        assert kappa == pytest.approx(np.sqrt(1 + 2 / eta**2) - 1, rel=1e-15)


def test_uloc_separation_small_layers(cover_cache):
    c = cover_cache("uloc", 24)
    base = c.nearest_ball(np.zeros(3))
    for n in range(3):
        bad, slack = separation_violations(c, base, n)
        assert len(bad) == 0 and slack >= -1e-12


def test_layers_refuse_to_leave_box(cover_cache):
    c = cover_cache("uloc", 8)
    with pytest.raises(LayerEscapeError):
        expand_layers(c, c.nearest_ball(np.zeros(3)), 6)


def test_layer_sets_are_nested(cover_cache):
    c = cover_cache("uloc", 16)
    lv = expand_layers(c, c.nearest_ball(np.zeros(3)), 3)
    for a, b in zip(lv[:-1], lv[1:]):
        assert np.all(b[a])
    ls = layers(c, c.nearest_ball(np.zeros(3)), 1)
    assert ls.S_n and not (ls.S_n & ls.P(0))


def test_growth_classes(cover_cache):
    assert classify_growth(cover_cache("uloc", 24)).kind == "sublinear"
    assert classify_growth(build_cover("dyadic", 512)).kind == "exact_linear"


def test_annulus_count_finite_for_linear_growth():
    count, bound, L = annulus_ball_count(build_cover("dyadic", 512), 8)
    assert 0 < count <= bound


def test_json_round_trip_preserves_ids(cover_cache):
    c = cover_cache("dyadic", 16)
    back = cover_from_json(cover_to_json(c))
    assert [b.id for b in back.balls] == [b.id for b in c.balls]
    assert np.array_equal(back.centers, c.centers) and np.array_equal(back.radii, c.radii)


def test_malformed_json_rejected():
    with pytest.raises(CoverError):
        cover_from_json('{"kind": "uloc"}')


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-7.9, 7.9), min_size=3, max_size=3))
def test_every_point_of_the_box_is_covered(pt):
    c = _cached_uloc8()
    assert c.contains(np.array([pt]))[0]


_U8 = []


def _cached_uloc8():
    if not _U8:
        _U8.append(build_cover("uloc", 8))
    return _U8[0]
