"""Batch command-line front end.

Exit codes: 0 success, 1 at least one input failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from tmoz import tonemap
from tmoz.hdr_io import read_hdr_file, write_sdr_png, write_text_atomic
from tmoz.tonemap import DisplayModel, PipelineConfig, RunReport, ToneParams

CONFIG_ENV = "TMOZ_CONFIG"
HDR_SUFFIXES = (".hdr", ".pic", ".rgbe", ".pfm")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class Config:
    inputs: list
    output: Path | None
    pipeline: PipelineConfig
    sweep: tuple | None = None
    stats: bool = False
    csv: Path | None = None


# config-file keys: section -> key -> (target, converter)
def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_FILE_KEYS = {
    "tone": {
        "gamma": ("tone.gamma", float),
        "beta": ("tone.beta", float),
        "a": ("tone.a", float),
        "b": ("tone.b", float),
        "scale": ("tone.A", float),
        "delta": ("tone.delta", float),
        "glare": ("tone.glare_fraction", float),
        "key_convention": ("tone.key_convention", str),
        "raw_extrema": ("tone.raw_extrema", _bool),
        "sigma_s_frac": ("sigma_s_frac", float),
        "sigma_r": ("sigma_r", float),
        "fast_bilateral": ("fast_bilateral", _bool),
        "workers": ("workers", int),
    },
    "hdr": {
        "y_b": ("hdr_Y_b", float),
        "surround": ("hdr_surround", str),
        "white": ("hdr_white", _floats),
        "white_percentile": ("hdr_white_percentile", float),
        "luminance_scale": ("luminance_scale", float),
    },
    "display": {
        "peak": ("display.peak_luminance", float),
        "mode": ("display.mode", str),
        "gain": ("display.gain", _floats),
        "offset": ("display.offset", _floats),
        "gamma": ("display.gamma", _floats),
        "y_b": ("display_Y_b", float),
        "background": ("display_background", float),
        "surround": ("display_surround", str),
    },
}


def _read_config_file(path: Path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in _FILE_KEYS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _FILE_KEYS[section]:
                raise UsageError(f"{path}: unknown key '{key}' in [{section}]")
            target, conv = _FILE_KEYS[section][key]
            try:
                values[target] = conv(raw)
            except ValueError as exc:
                raise UsageError(f"{path}: [{section}] {key}: {exc}") from None
    return values


def _build_pipeline(values: dict, preset: str | None) -> PipelineConfig:
    tone_kw = {k[5:]: v for k, v in values.items() if k.startswith("tone.")}
    disp_kw = {k[8:]: v for k, v in values.items() if k.startswith("display.")}
    top_kw = {k: v for k, v in values.items() if "." not in k}
    tone = ToneParams(**tone_kw)
    display = DisplayModel(**disp_kw)
    if preset == "psychophysics":
        top_kw.setdefault("display_background", 0.2)
    return PipelineConfig(tone=tone, display=display, **top_kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tonemap",
        description="Tone map HDR images (.hdr, .pfm) to 8-bit sRGB PNG.",
    )
    p.add_argument("inputs", nargs="*", type=Path, help="input files or directories")
    p.add_argument("-o", "--output", type=Path,
                   help="output file (single input) or directory (batch or sweep)")
    p.add_argument("--config", type=Path, help=f"key = value config file (default: ${CONFIG_ENV})")
    p.add_argument("--gamma", type=float, help="fixed compression exponent; skips key estimation")
    p.add_argument("--beta", type=float, help="detail exponent (default 1.1)")
    p.add_argument("--key-convention", choices=["reinhard", "as_printed"])
    p.add_argument("--raw-extrema", action="store_true", default=None,
                   help="use raw min/max luminance instead of 1st/99th percentiles")
    p.add_argument("--display-peak", type=float, help="display white luminance, cd/m^2 (default 560)")
    p.add_argument("--display-mode", choices=["srgb", "gog"])
    p.add_argument("--preset", choices=["psychophysics"],
                   help="psychophysics: 560 cd/m^2 white, 0.2 cd/m^2 display background")
    p.add_argument("--sigma-s-frac", type=float, help="spatial sigma as a fraction of the larger side (default 0.02)")
    p.add_argument("--sigma-r", type=float, help="range sigma in log10 units (default 0.35)")
    p.add_argument("--fast-bilateral", action="store_true", default=None, help="use the bilateral grid")
    p.add_argument("--glare", type=float, help="fraction of brightest pixels clipped (default 0.01)")
    p.add_argument("--luminance-scale", type=float, help="cd/m^2 per input unit (default 1)")
    p.add_argument("--workers", type=int, help="row-parallel workers per image")
    p.add_argument("--sweep", nargs=2, metavar=("PARAM", "VALUES"),
                   help="render once per value, e.g. --sweep gamma 0.1,0.4,0.6,0.8")
    p.add_argument("--stats", action="store_true", help="print and save a key=value report per output")
    p.add_argument("--csv", type=Path, help="write one CSV row of statistics per output")
    return p


_FLAG_TARGETS = {
    "gamma": "tone.gamma",
    "beta": "tone.beta",
    "key_convention": "tone.key_convention",
    "raw_extrema": "tone.raw_extrema",
    "glare": "tone.glare_fraction",
    "display_peak": "display.peak_luminance",
    "display_mode": "display.mode",
    "sigma_s_frac": "sigma_s_frac",
    "sigma_r": "sigma_r",
    "fast_bilateral": "fast_bilateral",
    "luminance_scale": "luminance_scale",
    "workers": "workers",
}


def parse_args(argv=None, environ=None) -> Config:
    """Flags override config-file values, which override built-in defaults."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    environ = os.environ if environ is None else environ
    try:
        return _resolve(ns, environ)
    except (UsageError, ValueError) as exc:
        parser.error(str(exc))


def _resolve(ns, environ) -> Config:
    if not ns.inputs:
        raise UsageError("no input files given")
    values = {}
    config_path = ns.config or (Path(environ[CONFIG_ENV]) if environ.get(CONFIG_ENV) else None)
    if config_path is not None:
        values.update(_read_config_file(config_path))
    for flag, target in _FLAG_TARGETS.items():
        v = getattr(ns, flag)
        if v is not None:
            values[target] = v
    sweep = None
    if ns.sweep:
        param, raw = ns.sweep
        if param not in ("gamma", "beta"):
            raise UsageError(f"--sweep parameter must be gamma or beta, got {param!r}")
        if param == "gamma" and ns.gamma is not None:
            raise UsageError("--gamma conflicts with --sweep gamma")
        try:
            vals = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --sweep values {raw!r}") from None
        if not vals:
            raise UsageError("--sweep needs at least one value")
        sweep = (param, vals)
    pipeline = _build_pipeline(values, ns.preset)
    if sweep:
        # validate every sweep value up front
        for v in sweep[1]:
            pipeline.with_tone(**{sweep[0]: v})
    return Config(list(ns.inputs), ns.output, pipeline, sweep, ns.stats, ns.csv)


def collect_inputs(paths) -> list[Path]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.is_file() and f.suffix.lower() in HDR_SUFFIXES)
        else:
            files.append(p)
    return files


def _format_value(v: float) -> str:
    return format(v, "g")


def plan_outputs(cfg: Config, files: list[Path]) -> list[tuple[Path, PipelineConfig, Path]]:
    """(input, pipeline config, output path) for every render in the batch."""
    batch = len(files) > 1 or cfg.sweep is not None or any(Path(p).is_dir() for p in cfg.inputs)
    out_dir = cfg.output if batch else None
    jobs = []
    for f in files:
        directory = out_dir if out_dir is not None else f.parent
        if cfg.sweep:
            param, vals = cfg.sweep
            for v in vals:
                jobs.append((f, cfg.pipeline.with_tone(**{param: v}),
                             directory / f"{f.stem}_{param}{_format_value(v)}.png"))
        elif not batch and cfg.output is not None:
            jobs.append((f, cfg.pipeline, cfg.output))
        else:
            jobs.append((f, cfg.pipeline, directory / f"{f.stem}.png"))
    return jobs


def emit_stats(report: RunReport | list, fmt: str = "text") -> str:
    """Flat ``key=value`` lines, or CSV with one header and one row per report."""
    if fmt == "text":
        return report.to_text()
    if fmt != "csv":
        raise ValueError(f"unknown stats format {fmt!r}")
    reports = report if isinstance(report, list) else [report]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([name for name, _ in reports[0].fields()] if reports else [])
    for r in reports:
        writer.writerow([tonemap._fmt(v) for _, v in r.fields()])
    return buf.getvalue()


def run_batch(cfg: Config, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    files = collect_inputs(cfg.inputs)
    if not files:
        print("tonemap: error: no recognised HDR inputs", file=err)
        return EXIT_USAGE
    jobs = plan_outputs(cfg, files)
    if any(p.is_dir() for p in cfg.inputs) or len(jobs) > 1:
        if cfg.output is not None:
            cfg.output.mkdir(parents=True, exist_ok=True)
    failed = 0
    reports = []
    cache = {}
    for src, pipeline, dst in jobs:
        try:
            if src not in cache:
                cache.clear()
                cache[src] = read_hdr_file(src)
            sdr, report = tonemap.tonemap_pipeline(cache[src], pipeline)
            report.source = str(src)
            write_sdr_png(sdr, dst)
            if cfg.stats:
                text = emit_stats(report)
                write_text_atomic(dst.with_suffix(".txt"), text)
                print(f"# {dst}", file=out)
                out.write(text)
            reports.append(report)
        except Exception as exc:  # per-file failures are reported, not fatal
            failed += 1
            msg = str(exc)
            print(f"tonemap: {msg if str(src) in msg else f'{src}: {msg}'}", file=err)
    if cfg.csv is not None and reports:
        try:
            write_text_atomic(cfg.csv, emit_stats(reports, "csv"))
        except OSError as exc:
            print(f"tonemap: {exc}", file=err)
            failed += 1
    return EXIT_PARTIAL if failed else EXIT_OK


def main(argv=None) -> int:
    cfg = parse_args(argv)
    return run_batch(cfg)


if __name__ == "__main__":
    sys.exit(main())
