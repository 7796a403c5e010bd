"""Perceptual HDR tone mapping on CIECAM16 brightness with key-driven compression."""
from tmoz.bilateral import BrightnessDecomposition, decompose, decompose_fast
from tmoz.cam16 import (
    AppearanceImage,
    DerivedConditions,
    Surround,
    ViewingConditions,
    derive_conditions,
    inverse_model,
)
from tmoz.hdr_io import (
    HdrImage,
    SdrImage,
    read_hdr_file,
    read_pfm,
    read_radiance_hdr,
    rgb_to_xyz,
    write_sdr_png,
)
from tmoz.tonemap import (
    DisplayModel,
    KeyStats,
    PipelineConfig,
    RunReport,
    ToneParams,
    estimate_gamma,
    image_key,
    render,
    tonemap_pipeline,
)

__version__ = "0.1.0"
