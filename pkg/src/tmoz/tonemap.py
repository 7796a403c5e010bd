"""Key-driven tone mapping pipeline: brightness compression, detail boost, appearance reconstruction."""
from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from tmoz import bilateral, cam16
from tmoz.hdr_io import SRGB_TO_XYZ, HdrImage, SdrImage, check_matrix, rgb_to_xyz

GAMMA_SLOPE = 0.6781
GAMMA_INTERCEPT = 0.3128
GAMMA_MAX = 2.0
NEUTRAL_KEY = 0.18

STAGES = (
    "rgb_to_xyz", "conditions", "brightness", "decompose", "key", "compress", "detail",
    "recombine", "hue", "lightness", "colorfulness", "inverse", "glare", "encode",
)
COUNTERS = (
    "negative_clamped", "negative_achromatic", "achromatic_fallback", "response_clamped",
    "glare_clipped", "gamut_clamped",
)


class KeyConvention(str, enum.Enum):
    REINHARD = "reinhard"
    AS_PRINTED = "as_printed"


@dataclass(frozen=True)
class ToneParams:
    """Tone-curve parameters. ``gamma=None`` selects the key-driven estimate."""

    gamma: float | None = None
    A: float = 1.0
    beta: float = 1.1
    a: float = GAMMA_SLOPE
    b: float = GAMMA_INTERCEPT
    delta: float = 1e-6
    glare_fraction: float = 0.01
    key_convention: KeyConvention = KeyConvention.REINHARD
    raw_extrema: bool = False

    def __post_init__(self):
        object.__setattr__(self, "key_convention", KeyConvention(self.key_convention))
        if self.gamma is not None and not 0 < self.gamma <= GAMMA_MAX:
            raise ValueError(f"gamma must lie in (0, 2], got {self.gamma}")
        if not 0.5 <= self.beta <= 2.0:
            raise ValueError(f"beta must lie in [0.5, 2], got {self.beta}")
        if not self.A > 0:
            raise ValueError(f"A must be positive, got {self.A}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not 0 <= self.glare_fraction <= 0.1:
            raise ValueError(f"glare fraction must lie in [0, 0.1], got {self.glare_fraction}")


@dataclass(frozen=True)
class KeyStats:
    G_L: float
    C_L: float
    k: float
    Y_min: float
    Y_max: float


def image_key(Y, delta: float = 1e-6, convention: KeyConvention | str = KeyConvention.REINHARD,
              raw_extrema: bool = False) -> KeyStats:
    """Geometric mean, log2 dynamic range and key of a luminance map.

    ``delta`` is taken relative to the peak luminance, so the statistics
    scale exactly with exposure. Extrema are the 1st/99th percentiles unless
    ``raw_extrema`` is set. A zero dynamic range yields the neutral key 0.18.
    """
    convention = KeyConvention(convention)
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.size == 0 or np.any(Y < 0) or not np.all(np.isfinite(Y)):
        raise ValueError("luminance must be finite, non-negative and non-empty")
    peak = float(Y.max())
    Yd = Y + (delta * peak if peak > 0 else delta)
    log2 = np.log2(Yd)
    mean_log2 = float(np.mean(log2))
    G_L = float(2.0 ** mean_log2)
    if raw_extrema:
        lo, hi = float(Yd.min()), float(Yd.max())
    else:
        lo, hi = (float(v) for v in np.percentile(Yd, [1.0, 99.0]))
    l2lo, l2hi = np.log2(lo), np.log2(hi)
    C_L = float(l2hi - l2lo)
    if C_L <= 0:
        return KeyStats(G_L, 0.0, NEUTRAL_KEY, lo, hi)
    if convention is KeyConvention.REINHARD:
        expo = (2.0 * mean_log2 - l2lo - l2hi) / C_L
    else:
        expo = (2.0 * mean_log2 - C_L) / C_L
    return KeyStats(G_L, C_L, float(NEUTRAL_KEY * 4.0 ** expo), lo, hi)


def estimate_gamma(k: float, a: float = GAMMA_SLOPE, b: float = GAMMA_INTERCEPT) -> float:
    """Linear key-to-gamma model, clamped to (0, 2]."""
    return float(np.clip(a * k + b, 1e-6, GAMMA_MAX))


def compress_base(base_linear, gamma: float, A: float = 1.0) -> np.ndarray:
    return A * np.asarray(base_linear, dtype=np.float64) ** gamma


def enhance_detail(detail, beta: float) -> np.ndarray:
    """Stretch detail magnitudes by a power law anchored at the largest magnitude."""
    detail = np.asarray(detail, dtype=np.float64)
    d_max = float(np.max(np.abs(detail))) if detail.size else 0.0
    if d_max == 0:
        return np.zeros_like(detail)
    return d_max * (np.abs(detail) / d_max) ** beta * np.sign(detail)


def recombine(I_c, detail_log, Q_max: float) -> np.ndarray:
    return Q_max * np.asarray(I_c, dtype=np.float64) * 10.0 ** np.asarray(detail_log, dtype=np.float64)


def _count(counters, name, n):
    if counters is not None:
        counters[name] = counters.get(name, 0) + int(n)


def simulate_glare(xyz, fraction: float, counters: dict | None = None) -> np.ndarray:
    """Clip luminance above the (1 - fraction) quantile, chromaticity preserved, then peak Y -> 100."""
    if not 0 <= fraction <= 0.1:
        raise ValueError(f"glare fraction must lie in [0, 0.1], got {fraction}")
    out = np.array(getattr(xyz, "data", xyz), dtype=np.float64)
    Y = out[..., 1]
    q = float(np.quantile(Y, 1.0 - fraction))
    mask = Y > q
    _count(counters, "glare_clipped", mask.sum())
    out[mask] *= (q / Y[mask])[:, None]
    peak = float(out[..., 1].max())
    if peak > 0:
        # divide first so the peak pixel lands on exactly 1.0 before the *100
        out = out / peak * 100.0
    return out


def _as_rows(m) -> tuple:
    # matrices live in frozen configs as nested tuples so configs compare and hash
    return tuple(tuple(float(v) for v in row) for row in np.asarray(m))


class DisplayMode(str, enum.Enum):
    SRGB = "srgb"
    GOG = "gog"


@dataclass(frozen=True)
class DisplayModel:
    """Output device: XYZ->device RGB matrix, peak luminance and transfer curve."""

    mode: DisplayMode = DisplayMode.SRGB
    xyz_to_rgb: tuple = field(default_factory=lambda: _as_rows(np.linalg.inv(SRGB_TO_XYZ)))
    peak_luminance: float = 560.0
    gain: tuple = (1.0, 1.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)
    gamma: tuple = (2.2, 2.2, 2.2)

    def __post_init__(self):
        object.__setattr__(self, "mode", DisplayMode(self.mode))
        object.__setattr__(self, "xyz_to_rgb", _as_rows(check_matrix(self.xyz_to_rgb)))
        for name in ("gain", "offset", "gamma"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (3,))
            object.__setattr__(self, name, tuple(float(x) for x in v))
        if min(self.gain) <= 0 or min(self.gamma) <= 0:
            raise ValueError("GOG gain and gamma must be positive")
        if not self.peak_luminance > 0:
            raise ValueError("peak luminance must be positive")

    @property
    def white(self) -> np.ndarray:
        """XYZ of device white scaled to Y = 100."""
        w = np.linalg.inv(np.array(self.xyz_to_rgb)) @ np.ones(3)
        return w * (100.0 / w[1])


def srgb_encode(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.abs(v) ** (1.0 / 2.4) - 0.055)


def encode_display(xyz, dm: DisplayModel | None = None, counters: dict | None = None) -> SdrImage:
    """Display-relative XYZ (white Y=100) to 8-bit device codes; out-of-gamut channels are clamped."""
    dm = dm or DisplayModel()
    xyz = np.asarray(getattr(xyz, "data", xyz), dtype=np.float64)
    rgb = (xyz / 100.0) @ np.array(dm.xyz_to_rgb).T
    bad = ~np.isfinite(rgb)
    rgb[bad] = 0.0
    out_of_gamut = np.any((rgb < 0) | (rgb > 1), axis=-1) | np.any(bad, axis=-1)
    _count(counters, "gamut_clamped", out_of_gamut.sum())
    rgb = np.clip(rgb, 0.0, 1.0)
    if dm.mode is DisplayMode.SRGB:
        drive = srgb_encode(rgb)
    else:
        gain, offset, gamma = (np.asarray(v) for v in (dm.gain, dm.offset, dm.gamma))
        drive = (rgb ** (1.0 / gamma) - offset) / gain
    drive = np.clip(drive, 0.0, 1.0)
    return SdrImage(np.floor(drive * 255.0 + 0.5).astype(np.uint8))


# --------------------------------------------------------------------------
# pipeline

D65_WHITE = SRGB_TO_XYZ @ np.ones(3) * 100.0


@dataclass(frozen=True)
class PipelineConfig:
    tone: ToneParams = field(default_factory=ToneParams)
    display: DisplayModel = field(default_factory=DisplayModel)
    display_Y_b: float = 20.0
    display_background: float | None = None  # cd/m^2, overrides display_Y_b when set
    display_surround: cam16.Surround = cam16.Surround.AVERAGE
    hdr_Y_b: float = 20.0
    hdr_surround: cam16.Surround = cam16.Surround.AVERAGE
    hdr_white: tuple = tuple(D65_WHITE)
    hdr_white_percentile: float = 99.0
    luminance_scale: float = 1.0  # cd/m^2 per input unit
    input_matrix: tuple = field(default_factory=lambda: _as_rows(SRGB_TO_XYZ))
    sigma_s: float | None = None
    sigma_s_frac: float = bilateral.SIGMA_S_FRAC
    sigma_r: float = bilateral.SIGMA_R
    fast_bilateral: bool = False
    grid_subdivision: int = bilateral.GRID_SUBDIVISION
    colorfulness_fl_exponent: float = 0.25
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "display_surround", cam16.Surround.parse(self.display_surround))
        object.__setattr__(self, "hdr_surround", cam16.Surround.parse(self.hdr_surround))
        object.__setattr__(self, "input_matrix", _as_rows(check_matrix(self.input_matrix)))
        if not 0 < self.hdr_white_percentile <= 100:
            raise ValueError("hdr_white_percentile must lie in (0, 100]")
        if not self.luminance_scale > 0:
            raise ValueError("luminance_scale must be positive")
        if not (self.sigma_s_frac > 0 and self.sigma_r > 0):
            raise ValueError("bilateral sigmas must be positive")
        if self.sigma_s is not None and not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if self.display_background is not None and not (
                0 < self.display_background <= self.display.peak_luminance):
            raise ValueError("display background must lie in (0, peak luminance]")
        if not 0 < self.display_Y_b <= 100 or not 0 < self.hdr_Y_b <= 100:
            raise ValueError("Y_b must lie in (0, 100]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.colorfulness_fl_exponent > 0:
            raise ValueError("colorfulness_fl_exponent must be positive")

    @classmethod
    def psychophysics(cls, **overrides) -> "PipelineConfig":
        """560 cd/m^2 display white, 0.2 cd/m^2 background, average surround."""
        display = overrides.pop("display", DisplayModel(peak_luminance=560.0))
        return cls(display=display, display_background=0.2, **overrides)

    def with_tone(self, **kw) -> "PipelineConfig":
        return replace(self, tone=replace(self.tone, **kw))

    def display_conditions(self) -> cam16.ViewingConditions:
        peak = self.display.peak_luminance
        Y_b = self.display_Y_b if self.display_background is None else 100.0 * self.display_background / peak
        return cam16.ViewingConditions(self.display.white, peak * Y_b / 100.0, Y_b, self.display_surround)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class RunReport:
    width: int
    height: int
    key: KeyStats | None = None
    gamma: float = float("nan")
    gamma_source: str = "auto"
    Q_max: float = float("nan")
    counters: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    source: str = ""

    def fields(self) -> list[tuple[str, object]]:
        """Flat (name, value) pairs in a stable order."""
        k = self.key
        rows = [
            ("source", self.source),
            ("width", self.width),
            ("height", self.height),
            ("key", k.k if k else float("nan")),
            ("gamma", self.gamma),
            ("gamma_source", self.gamma_source),
            ("G_L", k.G_L if k else float("nan")),
            ("C_L", k.C_L if k else float("nan")),
            ("Y_min", k.Y_min if k else float("nan")),
            ("Y_max", k.Y_max if k else float("nan")),
            ("Q_max", self.Q_max),
        ]
        rows += [(name, self.counters.get(name, 0)) for name in COUNTERS]
        rows += [(f"time_{s}_ms", self.timings.get(s, 0.0)) for s in STAGES]
        return rows

    def to_text(self) -> str:
        return "".join(f"{name}={_fmt(v)}\n" for name, v in self.fields())


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}" if np.isfinite(v) else "nan"
    return str(v)


@dataclass
class PipelineResult:
    sdr: SdrImage
    report: RunReport
    Q: np.ndarray | None = None
    decomposition: bilateral.BrightnessDecomposition | None = None
    appearance: cam16.AppearanceImage | None = None
    xyz_out: np.ndarray | None = None


def _rowwise(fn, workers: int, counters: dict, *arrays):
    """Apply per-pixel ``fn(counters, *blocks)`` over row blocks.

    Each block gets its own counter dict, merged afterwards, so counts are
    exact for any worker count.
    """
    h = arrays[0].shape[0]
    workers = max(1, min(workers, h))
    bounds = np.linspace(0, h, workers + 1).astype(int)
    spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    local = [{} for _ in spans]

    def run(i):
        a, b = spans[i]
        return fn(local[i], *(arr[a:b] for arr in arrays))

    if len(spans) == 1:
        parts = [run(0)]
    else:
        with ThreadPoolExecutor(len(spans)) as pool:
            parts = list(pool.map(run, range(len(spans))))
    for d in local:
        for name, n in d.items():
            counters[name] = counters.get(name, 0) + n
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


class _Timer:
    def __init__(self, report: RunReport):
        self.report = report

    @contextmanager
    def __call__(self, stage: str):
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage, exc) from exc
        finally:
            self.report.timings[stage] = (time.perf_counter() - t0) * 1e3


def render(hdr: HdrImage, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Run the full pipeline and keep the intermediate maps."""
    cfg = cfg or PipelineConfig()
    tone = cfg.tone
    report = RunReport(width=hdr.width, height=hdr.height)
    counters = report.counters
    stage = _Timer(report)
    workers = cfg.workers

    with stage("rgb_to_xyz"):
        xyz = hdr.data if hdr.space == "xyz" else rgb_to_xyz(hdr, cfg.input_matrix, counters).data
        Y = xyz[..., 1]
        peak = float(Y.max())

    with stage("key"):
        report.key = image_key(Y, tone.delta, tone.key_convention, tone.raw_extrema)
        if tone.gamma is None:
            report.gamma = estimate_gamma(report.key.k, tone.a, tone.b)
        else:
            report.gamma, report.gamma_source = float(tone.gamma), "override"

    if peak <= 0:
        return PipelineResult(SdrImage(np.zeros(xyz.shape, np.uint8)), report)

    with stage("conditions"):
        Y_white = float(np.percentile(Y, cfg.hdr_white_percentile))
        if Y_white <= 0:
            Y_white = peak
        xyz_rel = xyz * (100.0 / Y_white)
        L_aH = Y_white * cfg.luminance_scale * cfg.hdr_Y_b / 100.0
        dc_h = cam16.derive_conditions(
            cam16.ViewingConditions(cfg.hdr_white, L_aH, cfg.hdr_Y_b, cfg.hdr_surround))
        dc_d = cam16.derive_conditions(cfg.display_conditions())

    with stage("brightness"):
        Q, ar_h = _rowwise(lambda c, x: cam16.brightness_forward(x, dc_h, c), workers, counters, xyz_rel)

    with stage("decompose"):
        sigma_s = cfg.sigma_s or bilateral.default_sigma_s(Q.shape, cfg.sigma_s_frac)
        if cfg.fast_bilateral:
            dec = bilateral.decompose_fast(Q, sigma_s, cfg.sigma_r, cfg.grid_subdivision)
        else:
            dec = bilateral.decompose(Q, sigma_s, cfg.sigma_r, workers)
        report.Q_max = dec.Q_max

    with stage("compress"):
        I_c = compress_base(10.0 ** dec.base, report.gamma, tone.A)

    with stage("detail"):
        # power law on the linear detail ratio: scales log detail by beta
        D_E = enhance_detail(10.0 ** dec.detail, tone.beta)

    with stage("recombine"):
        Q_c = recombine(I_c, np.log10(D_E), dec.Q_max)

    with stage("hue"):
        h = _rowwise(lambda c, a: cam16.hue_forward(a), workers, counters, ar_h)

    with stage("lightness"):
        J_c = cam16.lightness_from_brightness(Q_c, dc_d)

    with stage("colorfulness"):
        M_c = _rowwise(
            lambda c, a, hh, j: cam16.colorfulness_forward(
                a, hh, j, dc_d, c, cfg.colorfulness_fl_exponent),
            workers, counters, ar_h, h, J_c)

    with stage("inverse"):
        xyz_out = _rowwise(lambda c, j, m, hh: cam16.inverse_model(j, m, hh, dc_d, c),
                           workers, counters, J_c, M_c, h)

    with stage("glare"):
        xyz_out = simulate_glare(xyz_out, tone.glare_fraction, counters)

    with stage("encode"):
        sdr = encode_display(xyz_out, cfg.display, counters)

    return PipelineResult(sdr, report, Q, dec, cam16.AppearanceImage(Q_c, M_c, h, J_c), xyz_out)


def tonemap_pipeline(hdr: HdrImage, cfg: PipelineConfig | None = None) -> tuple[SdrImage, RunReport]:
    result = render(hdr, cfg)
    return result.sdr, result.report
