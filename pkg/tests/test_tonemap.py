import math

import numpy as np
import pytest

from tmoz import cam16, tonemap
from tmoz.hdr_io import SRGB_TO_XYZ, HdrImage
from tmoz.synthetic import natural_hdr
from tmoz.tonemap import (
    DisplayModel,
    PipelineConfig,
    PipelineError,
    ToneParams,
    compress_base,
    encode_display,
    enhance_detail,
    estimate_gamma,
    image_key,
    recombine,
    render,
    simulate_glare,
    tonemap_pipeline,
)


def key_oracle(values, convention="reinhard"):
    # straight from the definitions, on the raw extrema, no delta
    logs = [math.log2(v) for v in values]
    mean = sum(logs) / len(logs)
    lo, hi = min(logs), max(logs)
    C = hi - lo
    if C == 0:
        return 0.18
    expo = (2 * mean - lo - hi) / C if convention == "reinhard" else (2 * mean - C) / C
    return 0.18 * 4 ** expo


# --------------------------------------------------------------------------
# key and gamma

def test_key_two_values():
    Y = np.repeat([1.0, 16.0], 500)
    ks = image_key(Y, delta=1e-12)
    assert ks.G_L == pytest.approx(4.0, rel=1e-9)
    assert ks.C_L == pytest.approx(4.0, rel=1e-9)
    assert ks.k == pytest.approx(0.18, abs=1e-9)
    assert image_key(Y, 1e-12, "as_printed").k == pytest.approx(0.18, abs=1e-9)


def test_key_quarter_bright():
    Y = np.tile([1.0, 1.0, 1.0, 16.0], 250)
    assert image_key(Y, delta=1e-12).k == pytest.approx(0.09, abs=1e-9)


def test_key_constant_image():
    ks = image_key(np.full(100, 3.0))
    assert ks.k == 0.18 and ks.C_L == 0.0


@pytest.mark.parametrize("convention", ["reinhard", "as_printed"])
def test_key_matches_oracle_raw_extrema(convention):
    rng = np.random.default_rng(0)
    Y = rng.lognormal(0, 2, 999)
    got = image_key(Y, delta=1e-15, convention=convention, raw_extrema=True).k
    assert got == pytest.approx(key_oracle(Y.tolist(), convention), rel=1e-9)


def test_key_exposure_invariant():
    Y = natural_hdr((48, 48), 1e4, seed=9).data[..., 1]
    a = image_key(Y)
    b = image_key(Y * 100.0)
    assert abs(a.k - b.k) <= 1e-9


def test_key_percentile_extrema_ignore_outliers():
    Y = np.ones(1000)
    Y[:500] = 4.0
    Y[0] = 100.0  # single hot pixel
    assert image_key(Y).C_L == pytest.approx(2.0, abs=1e-3)
    assert image_key(Y, raw_extrema=True).C_L > 6


def test_key_rejects_bad_input():
    for bad in (np.array([]), np.array([-1.0, 1.0]), np.array([np.inf])):
        with pytest.raises(ValueError):
            image_key(bad)


@pytest.mark.parametrize("k, g", [(0.085, 0.3704), (0.8, 0.8553), (0.0, 0.3128)])
def test_estimate_gamma(k, g):
    assert estimate_gamma(k) == pytest.approx(g, abs=1e-4)
    assert estimate_gamma(k) == pytest.approx(0.6781 * k + 0.3128, rel=1e-12)


def test_estimate_gamma_clamped():
    assert estimate_gamma(10.0) == 2.0
    assert estimate_gamma(-1.0) == 1e-6


# --------------------------------------------------------------------------
# tone curve stages

def test_compress_base_examples():
    x = np.array([0.01, 0.3, 1.0])
    np.testing.assert_array_equal(compress_base(x, 1.0, 1.0), x)
    assert compress_base(0.25, 0.5) == pytest.approx(0.5)
    assert compress_base(1.0, 0.37) == 1.0


def test_compress_base_power_law_order():
    # below the fixed point a smaller exponent lifts harder
    x = np.array([0.001, 0.1, 0.5])
    assert np.all(compress_base(x, 0.2) > compress_base(x, 0.6))


def test_enhance_detail_examples():
    d = np.array([-0.2, 0.1, 0.4])
    np.testing.assert_array_equal(enhance_detail(d, 1.0), d)
    hand = [-0.4 * 0.5 ** 1.1, 0.4 * 0.25 ** 1.1, 0.4]  # -0.186607, 0.087055, 0.4
    np.testing.assert_allclose(enhance_detail(d, 1.1), hand, atol=1e-12)
    np.testing.assert_allclose(enhance_detail(d, 1.1), [-0.18661, 0.08706, 0.4], atol=1e-5)
    np.testing.assert_array_equal(enhance_detail(np.zeros(4), 1.3), 0.0)


def test_recombine_examples():
    I = np.array([0.2, 1.0, 0.7])
    np.testing.assert_array_equal(recombine(np.ones(3), np.zeros(3), 5.0), 5.0)
    np.testing.assert_array_equal(recombine(I, np.zeros(3), 5.0), 5.0 * I)


def test_identity_composition():
    Q = natural_hdr((32, 32), 1e3, seed=1).data[..., 1] * 50 + 1
    from tmoz import bilateral
    dec = bilateral.decompose(Q, 1.0)
    I_c = compress_base(10.0 ** dec.base, 1.0)
    D_E = enhance_detail(10.0 ** dec.detail, 1.0)
    Q_c = recombine(I_c, np.log10(D_E), dec.Q_max)
    assert np.max(np.abs(Q_c / Q - 1)) <= 1e-9


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=2.5), dict(beta=0.3), dict(beta=2.1),
                                dict(A=0.0), dict(delta=0.0), dict(glare_fraction=0.2),
                                dict(key_convention="nope")])
def test_tone_params_validation(kw):
    with pytest.raises(ValueError):
        ToneParams(**kw)


# --------------------------------------------------------------------------
# glare

def quantile_oracle(values, q):
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def test_glare_outliers_land_on_quantile():
    n = 10000
    Y = np.ones(n)
    Y[:100] = 10.0
    xyz = np.stack([Y * 0.95, Y, Y * 1.09], axis=-1).reshape(100, 100, 3)
    counters = {}
    out = simulate_glare(xyz, 0.01, counters)
    q = quantile_oracle(Y.tolist(), 0.99)
    assert counters["glare_clipped"] == 100
    oy = out[..., 1].ravel()
    assert oy.max() == 100.0
    # outliers at q, rest at 1, after the peak rescale
    np.testing.assert_allclose(oy[:100], 100.0)
    np.testing.assert_allclose(oy[100:], 100.0 / q)
    assert oy.max() / np.median(oy) == pytest.approx(q / 1.0)
    # chromaticity preserved
    np.testing.assert_allclose(out[..., 0] / out[..., 1], 0.95)


def test_glare_zero_fraction_rescales_only():
    rng = np.random.default_rng(2)
    xyz = rng.random((10, 10, 3)) + 0.1
    out = simulate_glare(xyz, 0.0)
    np.testing.assert_allclose(out / out[..., 1:2], xyz / xyz[..., 1:2], rtol=1e-12)
    assert out[..., 1].max() == 100.0


def test_glare_constant_image_untouched():
    counters = {}
    out = simulate_glare(np.full((5, 5, 3), 2.0), 0.01, counters)
    assert counters["glare_clipped"] == 0
    np.testing.assert_allclose(out, 100.0)


# --------------------------------------------------------------------------
# display encoding

def test_encode_white_and_black():
    dm = DisplayModel()
    assert encode_display(dm.white[None, None], dm).data.tolist() == [[[255, 255, 255]]]
    assert encode_display(np.zeros((1, 1, 3)), dm).data.tolist() == [[[0, 0, 0]]]


def test_encode_mid_grey():
    dm = DisplayModel()
    code = encode_display((dm.white * 0.184)[None, None], dm).data[0, 0]
    d = 1.055 * 0.184 ** (1 / 2.4) - 0.055
    assert d == pytest.approx(0.4661, abs=1e-4)
    assert np.all(np.abs(code.astype(int) - 118) <= 1)


def test_encode_gog_black_offset_clamped():
    dm = DisplayModel(mode="gog", gain=1.0, offset=0.05, gamma=2.2)
    assert encode_display(np.zeros((1, 1, 3)), dm).data.tolist() == [[[0, 0, 0]]]
    dm = DisplayModel(mode="gog", gain=1.0, offset=-0.1, gamma=2.2)
    # (0 - (-0.1)) / 1 = 0.1 -> code 26
    assert encode_display(np.zeros((1, 1, 3)), dm).data[0, 0, 0] == 26


def test_encode_gog_gamma():
    dm = DisplayModel(mode="gog", gamma=2.0)
    code = encode_display((dm.white * 0.36)[None, None], dm).data[0, 0]
    assert code.tolist() == [153, 153, 153]  # sqrt(0.36) * 255 = 153


def test_encode_counts_out_of_gamut():
    counters = {}
    xyz = np.array([[[200.0, 200.0, 200.0], [50.0, 50.0, 50.0]]])
    encode_display(xyz, DisplayModel(), counters)
    assert counters["gamut_clamped"] >= 1


# --------------------------------------------------------------------------
# pipeline

def test_pipeline_constant_image_constant_output():
    hdr = HdrImage(np.full((20, 30, 3), 0.18))
    sdr, report = tonemap_pipeline(hdr)
    assert np.all(sdr.data == sdr.data[0, 0])
    assert report.key.k == 0.18


def test_pipeline_black_image():
    sdr, report = tonemap_pipeline(HdrImage(np.zeros((4, 4, 3))))
    assert sdr.data.max() == 0


def test_pipeline_validity_and_report():
    hdr = natural_hdr((48, 64), 1e6, seed=4)
    sdr, report = tonemap_pipeline(hdr)
    assert sdr.data.shape == (48, 64, 3) and sdr.data.dtype == np.uint8
    assert report.gamma_source == "auto"
    assert 1e-6 <= report.gamma <= 2.0
    assert report.gamma == pytest.approx(estimate_gamma(report.key.k))
    assert set(report.timings) == set(tonemap.STAGES)
    names = [n for n, _ in report.fields()]
    assert names[:3] == ["source", "width", "height"]
    assert "key=" in report.to_text()


def test_pipeline_gamma_override_reported():
    _, report = tonemap_pipeline(natural_hdr((16, 16), seed=1), PipelineConfig().with_tone(gamma=0.5))
    assert report.gamma == 0.5 and report.gamma_source == "override"


def test_pipeline_identity_Q():
    hdr = natural_hdr((40, 40), 1e4, seed=5)
    res = render(hdr, PipelineConfig().with_tone(gamma=1.0, beta=1.0, glare_fraction=0.0))
    rel = np.abs(res.appearance.Q_c / res.Q - 1)
    assert rel.max() <= 1e-9


def test_pipeline_detail_beta_ordering():
    hdr = natural_hdr((64, 64), 1e4, seed=3)
    from tmoz.bilateral import gaussian_blur
    var = []
    for beta in (0.8, 1.2):
        res = render(hdr, PipelineConfig().with_tone(beta=beta))
        L = np.log10(res.xyz_out[..., 1] + 1e-6)
        var.append(np.var(L - gaussian_blur(L, 2.0)))
    assert var[0] < var[1]


@pytest.mark.parametrize("workers", [3, 8])
def test_pipeline_deterministic_across_workers(workers):
    hdr = natural_hdr((33, 47), 1e5, seed=6)
    a, ra = tonemap_pipeline(hdr)
    b, rb = tonemap_pipeline(hdr, PipelineConfig(workers=workers))
    assert a.data.tobytes() == b.data.tobytes()
    assert ra.counters == rb.counters


def test_pipeline_fast_bilateral_close():
    hdr = natural_hdr((64, 64), 1e4, seed=2)
    a = render(hdr).sdr.data.astype(int)
    b = render(hdr, PipelineConfig(fast_bilateral=True)).sdr.data.astype(int)
    assert np.mean(np.abs(a - b)) < 3


def test_pipeline_xyz_input_skips_matrix():
    rgb = natural_hdr((16, 16), seed=7)
    xyz = HdrImage(rgb.data @ SRGB_TO_XYZ.T, "xyz")
    assert tonemap_pipeline(rgb)[0].data.tobytes() == tonemap_pipeline(xyz)[0].data.tobytes()


def test_psychophysics_conditions():
    cfg = PipelineConfig.psychophysics()
    vc = cfg.display_conditions()
    assert cfg.display.peak_luminance == 560.0
    assert vc.Y_b == pytest.approx(100 * 0.2 / 560)
    assert vc.L_a == pytest.approx(0.2)
    assert vc.surround is cam16.Surround.AVERAGE


@pytest.mark.parametrize("kw", [dict(workers=0), dict(luminance_scale=0), dict(hdr_Y_b=0),
                                dict(display_background=1e4), dict(sigma_r=0), dict(surround_bad=1)])
def test_pipeline_config_validation(kw):
    if "surround_bad" in kw:
        kw = dict(display_surround="bright")
    with pytest.raises(ValueError):
        PipelineConfig(**kw)


def test_pipeline_error_names_stage(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(tonemap, "compress_base", boom)
    with pytest.raises(PipelineError, match="compress") as info:
        tonemap_pipeline(natural_hdr((8, 8), seed=0))
    assert info.value.stage == "compress"
