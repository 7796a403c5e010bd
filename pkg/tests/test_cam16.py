import json
import math
from pathlib import Path

import numpy as np
import pytest

from tmoz import cam16
from tmoz.cam16 import Surround, ViewingConditions, derive_conditions
from tmoz.hdr_io import SRGB_TO_XYZ

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "cam16_reference.json").read_text())
D65 = (95.05, 100.0, 108.88)
WORKED_XYZ = np.array([19.01, 20.00, 21.78])


@pytest.fixture(scope="module")
def worked():
    return derive_conditions(ViewingConditions(D65, 318.31, 20.0, "average"))


def _dc(case):
    return derive_conditions(ViewingConditions(case["white"], case["L_a"], case["Y_b"], case["surround"]))


# --------------------------------------------------------------------------
# viewing conditions

def test_F_L_hand_value(worked):
    # k^4 term vanishes at this L_a
    hand = 0.1 * (5 * 318.31) ** (1 / 3)
    assert worked.F_L == pytest.approx(1.168, abs=0.005)
    assert worked.F_L == pytest.approx(hand, rel=1e-6)


def test_D_hand_value(worked):
    hand = 1.0 - (1.0 / 3.6) * math.exp((-318.31 - 42.0) / 92.0)
    assert worked.D == pytest.approx(0.9945, abs=0.0005)
    assert worked.D == pytest.approx(hand, rel=1e-12)


def test_D_clamped_at_very_high_L_a():
    assert derive_conditions(ViewingConditions(D65, 1e6)).D == 1.0


def test_white_normalised_to_Y_100():
    vc = ViewingConditions((0.9505, 1.0, 1.0888), 100.0)
    np.testing.assert_allclose(vc.white, D65)


@pytest.mark.parametrize("kw", [
    dict(white=(1, 0, 1), L_a=10),
    dict(white=D65, L_a=0),
    dict(white=D65, L_a=10, Y_b=0),
    dict(white=D65, L_a=10, Y_b=150),
    dict(white=D65, L_a=10, surround="bright"),
])
def test_invalid_conditions(kw):
    with pytest.raises(ValueError):
        ViewingConditions(**kw)


def test_surround_constants():
    assert (Surround.AVERAGE.F, Surround.AVERAGE.c, Surround.AVERAGE.N_c) == (1.0, 0.69, 1.0)
    assert (Surround.DIM.F, Surround.DIM.c, Surround.DIM.N_c) == (0.9, 0.59, 0.9)
    assert (Surround.DARK.F, Surround.DARK.c, Surround.DARK.N_c) == (0.8, 0.525, 0.8)
    assert Surround.parse(" Dim ") is Surround.DIM


# --------------------------------------------------------------------------
# adapted responses

def test_white_responses(worked):
    np.testing.assert_allclose(cam16.adapt_responses(worked.vc.white, worked), worked.rgb_aw, rtol=1e-14)


def test_black_responses(worked):
    np.testing.assert_array_equal(cam16.adapt_responses(np.zeros(3), worked), [0.1, 0.1, 0.1])


def test_compression_odd_symmetry():
    x = np.geomspace(1e-6, 1e3, 50)
    np.testing.assert_allclose(cam16.compress(-x) - 0.1, -(cam16.compress(x) - 0.1), rtol=0, atol=1e-13)


def test_decompress_inverts_compress():
    x = np.concatenate([-np.geomspace(1e-6, 1e3, 40), np.geomspace(1e-6, 1e3, 40)])
    np.testing.assert_allclose(cam16.decompress(cam16.compress(x)), x, rtol=1e-9)


def test_decompress_clamps_and_counts():
    counters = {}
    out = cam16.decompress(np.array([500.0, 0.1]), counters)
    assert counters["response_clamped"] == 1
    assert np.all(np.isfinite(out))


# --------------------------------------------------------------------------
# brightness and lightness

def test_white_brightness(worked):
    Q, _ = cam16.brightness_forward(worked.vc.white, worked)
    assert Q == pytest.approx(4 / 0.69 * (worked.A_w + 4) * worked.F_L ** 0.25, rel=1e-12)
    assert Q == pytest.approx(worked.Q_white, rel=1e-12)


def test_black_brightness_by_formula(worked):
    A0 = (2 * 0.1 + 0.1 + 0.1 / 20 - 0.305) * worked.N_bb
    J0 = 100 * (A0 / worked.A_w) ** (0.69 * worked.z)
    expect = 4 / 0.69 * math.sqrt(J0 / 100) * (worked.A_w + 4) * worked.F_L ** 0.25
    Q, _ = cam16.brightness_forward(np.zeros(3), worked)
    assert Q == pytest.approx(expect, rel=1e-12)


def test_negative_achromatic_gives_zero_J(worked):
    counters = {}
    J = cam16.lightness_from_achromatic(np.array([-1.0, 1.0]), worked, counters)
    assert J[0] == 0.0 and J[1] > 0
    assert counters["negative_achromatic"] == 1


def test_lightness_from_brightness_examples(worked):
    assert cam16.lightness_from_brightness(0.0, worked) == 0.0
    Q50 = cam16.brightness_from_lightness(np.array(50.0), worked)
    assert cam16.lightness_from_brightness(Q50, worked) == pytest.approx(50.0, abs=1e-9)
    assert cam16.lightness_from_brightness(worked.Q_white, worked) == pytest.approx(100.0, abs=1e-9)


def test_brightness_monotone_in_luminance(worked):
    Y = np.geomspace(1e-3, 1e4, 200)
    xyz = np.outer(Y / 100.0, worked.vc.white)
    Q, _ = cam16.brightness_forward(xyz, worked)
    assert np.all(np.diff(Q) > 0)


# --------------------------------------------------------------------------
# hue

def test_hue_achromatic_is_zero():
    assert cam16.hue_forward(np.array([3.0, 3.0, 3.0])) == 0.0
    assert cam16.hue_forward(np.full((2, 2, 3), 0.1)).tolist() == [[0.0, 0.0], [0.0, 0.0]]


def _ar_from_ab(a, b, p2=10.0):
    # (p2, a, b) -> responses, so the axis cases can be built directly
    return np.linalg.solve(cam16._OPPONENT, [p2, a, b])


def test_hue_axes():
    assert cam16.hue_forward(_ar_from_ab(1.0, 0.0)) == pytest.approx(0.0, abs=1e-9)
    assert cam16.hue_forward(_ar_from_ab(0.0, 1.0)) == pytest.approx(90.0, abs=1e-9)
    assert cam16.hue_forward(_ar_from_ab(-1.0, 0.0)) == pytest.approx(180.0, abs=1e-9)
    assert cam16.hue_forward(_ar_from_ab(0.0, -1.0)) == pytest.approx(270.0, abs=1e-9)


def test_opponent_b_has_standard_sign():
    a, b = cam16.opponent(np.array([0.0, 0.0, 9.0]))
    assert b == pytest.approx(-2.0)  # blue response pushes b negative
    assert a == pytest.approx(9.0 / 11.0)


def test_hue_range(worked):
    rng = np.random.default_rng(0)
    xyz = rng.random((5000, 3)) @ SRGB_TO_XYZ.T * 100
    h = cam16.hue_forward(cam16.adapt_responses(xyz, worked))
    assert h.min() >= 0 and h.max() < 360


# --------------------------------------------------------------------------
# colourfulness

def test_colorfulness_zero_cases(worked):
    ar = np.array([2.0, 2.0, 2.0])
    assert cam16.colorfulness_forward(ar, 0.0, 50.0, worked) == 0.0
    ar = cam16.adapt_responses(WORKED_XYZ, worked)
    assert cam16.colorfulness_forward(ar, 217.0, 0.0, worked) == 0.0


def test_colorfulness_bad_denominator_falls_back(worked):
    counters = {}
    ar = np.array([-1.0, -1.0, 0.5])
    assert cam16.colorfulness_forward(ar, 10.0, 50.0, worked, counters) == 0.0
    assert counters["achromatic_fallback"] == 1


def test_worked_example_colorfulness_via_pipeline_functions(worked):
    ref = FIXTURE["cases"][0]
    ar = cam16.adapt_responses(WORKED_XYZ, worked)
    h = cam16.hue_forward(ar)
    M = cam16.colorfulness_forward(ar, h, ref["J"], worked)
    assert M == pytest.approx(ref["M"], rel=0.02)


def test_colorfulness_fl_exponent(worked):
    ar = cam16.adapt_responses(WORKED_XYZ, worked)
    h = cam16.hue_forward(ar)
    m = cam16.colorfulness_forward(ar, h, 40.0, worked)
    s = cam16.colorfulness_forward(ar, h, 40.0, worked, fl_exponent=1.0)
    assert s / m == pytest.approx(worked.F_L ** 0.75, rel=1e-12)


# --------------------------------------------------------------------------
# reference fixture

@pytest.mark.parametrize("case", FIXTURE["cases"], ids=lambda c: f"xyz={c['xyz']}")
def test_reference_fixture(case):
    app = cam16.forward(np.array(case["xyz"]), _dc(case))
    for name in ("J", "Q", "C", "M", "h", "s"):
        assert float(getattr(app, name)) == pytest.approx(case[name], rel=5e-3, abs=1e-9), name


def test_worked_example_values(worked):
    app = cam16.forward(WORKED_XYZ, worked)
    assert float(app.J) == pytest.approx(41.7, abs=0.05)
    assert float(app.h) == pytest.approx(217.07, abs=0.01)


# --------------------------------------------------------------------------
# inverse

def test_inverse_white():
    # white is exactly neutral after adaptation only when D == 1
    dc = derive_conditions(ViewingConditions(D65, 1e6))
    np.testing.assert_allclose(cam16.inverse_model(100.0, 0.0, 123.0, dc), dc.vc.white, rtol=1e-6)


def test_inverse_white_partial_adaptation(worked):
    app = cam16.forward(worked.vc.white, worked)
    assert float(app.J) == pytest.approx(100.0, abs=1e-9)
    np.testing.assert_allclose(cam16.inverse_model(app.J, app.M, app.h, worked), worked.vc.white, rtol=1e-9)


def test_inverse_black(worked):
    np.testing.assert_array_equal(cam16.inverse_model(0.0, 0.0, 0.0, worked), [0.0, 0.0, 0.0])


@pytest.mark.parametrize("surround, L_a", [("average", 318.31), ("dim", 20.0), ("dark", 2000.0)])
def test_round_trip(surround, L_a):
    dc = derive_conditions(ViewingConditions(D65, L_a, 20.0, surround))
    rng = np.random.default_rng(5)
    xyz = (0.01 + 0.99 * rng.random((10000, 3))) @ SRGB_TO_XYZ.T * 100
    app = cam16.forward(xyz, dc)
    back = cam16.inverse_model(app.J, app.M, app.h, dc)
    assert np.max(np.abs(back - xyz) / xyz) <= 1e-6


def test_round_trip_on_raster_shape(worked):
    rng = np.random.default_rng(6)
    xyz = rng.random((4, 5, 3)) @ SRGB_TO_XYZ.T * 100 + 1
    app = cam16.forward(xyz, worked)
    assert app.J.shape == (4, 5)
    np.testing.assert_allclose(cam16.inverse_model(app.J, app.M, app.h, worked), xyz, rtol=1e-9)
