"""Command-line pipeline: ingestion, detection, summaries, tests and reports.

Every subcommand reads one JSON config (``--config``) and writes its outputs
into ``--out``. Files are written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cubetop.detect import ETA_BY_SIGMA, Detector, pd_threshold
from cubetop import imagio, stats, summaries, synth
from cubetop.cubical import INFINITE_MODES

log = logging.getLogger("cubetop")

STATISTIC_NAMES = tuple(summaries.STATISTICS)


# --------------------------------------------------------------------- config


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StackConfig(_Model):
    path: str
    format: Literal["pgm_dir", "raw_u16"] = "pgm_dir"


class RegionConfig(_Model):
    polygon: Optional[list[tuple[float, float]]] = Field(default=None, min_length=3)
    rect: Optional[tuple[int, int, int, int]] = None

    @model_validator(mode="after")
    def _valid(self):
        self.to_region()
        return self

    def to_region(self) -> imagio.RegionSpec:
        return imagio.RegionSpec(
            polygon=tuple(self.polygon) if self.polygon else None, rect=self.rect
        )


class RectConfig(_Model):
    rect: tuple[int, int, int, int]

    def to_region(self) -> imagio.RegionSpec:
        return imagio.RegionSpec(rect=self.rect)


class NullConfig(_Model):
    kind: Literal["poisson", "empirical"] = "poisson"
    # per-frame rate; fitted from the vacuum rect when omitted
    lam: Optional[float] = Field(default=None, alias="lambda", ge=0)
    pool_file: Optional[str] = None
    # frames per summed image; defaults to the window length
    m: Optional[int] = Field(default=None, ge=1)
    seed: int = 0

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class _Detection(_Model):
    stack: StackConfig
    region: RegionConfig = RegionConfig()
    sigma: float = Field(default=2.0, ge=0)
    # None: look up the calibrated threshold for sigma (0 when not tabulated)
    eta: Optional[float] = Field(default=None, ge=0)
    infinite_mode: Literal["max_finite_death", "max_pixel_value"] = "max_pixel_value"

    def resolved_eta(self) -> float:
        if self.eta is not None:
            return self.eta
        return ETA_BY_SIGMA.get(float(self.sigma), 0.0)

    def detector(self) -> Detector:
        return Detector(
            self.region.to_region(), self.sigma, self.resolved_eta(), self.infinite_mode
        )


class DetectConfig(_Detection):
    m: int = Field(default=1, ge=1)
    ell: int = Field(default=0, ge=0)
    overlay: bool = False


class SummarizeConfig(_Detection):
    m: int = Field(default=10, ge=1)
    step: int = Field(default=1, ge=1)
    statistics: list[Literal[STATISTIC_NAMES]] = ["entropy", "alps"]  # type: ignore[valid-type]


class _Testing(_Detection):
    statistic: Literal[STATISTIC_NAMES] = "count"  # type: ignore[valid-type]
    n: int = Field(default=9999, ge=1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    vacuum: Optional[RectConfig] = None
    null: NullConfig = NullConfig()

    @model_validator(mode="after")
    def _null_source(self):
        if self.null.kind == "poisson" and self.null.lam is None and self.vacuum is None:
            raise ValueError("poisson null needs null.lambda or a vacuum rect to fit it")
        if self.null.kind == "empirical" and self.null.pool_file is None and self.vacuum is None:
            raise ValueError("empirical null needs null.pool_file or a vacuum rect")
        return self


class GofConfig(_Testing):
    m: int = Field(default=10, ge=1)
    ell: int = Field(default=0, ge=0)


class MultitestConfig(_Testing):
    m: int = Field(default=5, ge=1)
    max_windows: Optional[int] = Field(default=None, ge=1)


class SimulateConfig(_Model):
    truth: Optional[dict] = None
    truth_file: Optional[str] = None
    sigmas: list[float] = [2.0, 3.0, 4.0]
    eta: float = Field(default=0.0, ge=0)
    infinite_mode: Literal["max_finite_death", "max_pixel_value"] = "max_finite_death"
    region: Optional[RegionConfig] = None
    seeds: Optional[list[int]] = None
    n_seeds: int = Field(default=10, ge=1)
    write_frames: bool = True


class DiagnoseConfig(_Model):
    stack: StackConfig
    vacuum: RectConfig
    max_lag: int = Field(default=50, ge=1)
    bins: int = Field(default=15, ge=1)
    m: int = Field(default=10, ge=1)
    ell: int = Field(default=0, ge=0)


class ThresholdConfig(_Model):
    stack: StackConfig
    m: int = Field(default=1, ge=1)
    ell: int = Field(default=0, ge=0)
    sigma: float = Field(default=4.0, ge=0)
    region: RegionConfig = RegionConfig()


CONFIGS = {
    "detect": DetectConfig,
    "summarize": SummarizeConfig,
    "gof": GofConfig,
    "multitest": MultitestConfig,
    "simulate": SimulateConfig,
    "diagnose": DiagnoseConfig,
    "threshold": ThresholdConfig,
}


class ConfigError(Exception):
    pass


def load_config(command: str, path: str | None) -> _Model:
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return CONFIGS[command].model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{where}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None


# --------------------------------------------------------------------- output


def write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _map(fn, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ----------------------------------------------------------------- subcommands


def _load(cfg: StackConfig) -> imagio.ImageStack:
    return imagio.load_stack(cfg.path, cfg.format)


def run_detect(cfg: DetectConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    frame = imagio.sum_frames(stack, cfg.m, cfg.ell)
    det = cfg.detector()
    points = det(frame, frame_id=cfg.ell)
    write_text(out / "detections.csv", points.to_csv())
    log.info("detected %d points in window [%d, %d)", len(points), cfg.ell, cfg.ell + cfg.m)
    if cfg.overlay:
        sub = imagio.smooth(det.subimage(frame), det.sigma)
        top = float(sub.max()) or 1.0
        img = np.rint(sub / top * 254).astype(np.int64)
        x0, y0 = (det.region.rect[0], det.region.rect[1]) if det.region.rect else (0, 0)
        img[points.ys - y0, points.xs - x0] = 255
        imagio.write_pgm(out / "overlay.pgm", img, maxval=255)


def run_summarize(cfg: SummarizeConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    det = cfg.detector()
    starts = imagio.window_starts(stack.frame_count, cfg.m, cfg.step)

    def one(ell: int) -> list[float]:
        lifetimes = det.lifetimes(imagio.sum_frames(stack, cfg.m, ell))
        return [summaries.evaluate(name, lifetimes) for name in cfg.statistics]

    values = _map(one, starts, threads)
    rows = [
        (ell, name, _num(v))
        for name_i, name in enumerate(cfg.statistics)
        for ell, row in zip(starts, values)
        for v in [row[name_i]]
    ]
    write_text(out / "timeseries.csv", _csv(["frame_index", "statistic_name", "value"], rows))
    log.info("summarized %d windows", len(starts))


def _null_model(cfg: _Testing, stack: imagio.ImageStack, m: int, seed: int | None) -> stats.NullModel:
    null_m = cfg.null.m or m
    seed = cfg.null.seed if seed is None else seed
    if cfg.null.kind == "poisson":
        lam = cfg.null.lam
        if lam is None:
            lam = stats.fit_lambda(stack, cfg.vacuum.to_region())
        return stats.NullModel("poisson", lam=lam, m=null_m, seed=seed)
    if cfg.null.pool_file is not None:
        path = cfg.null.pool_file
        pool = np.load(path) if path.endswith(".npy") else np.loadtxt(path, dtype=np.int64)
    else:
        pool = stats.empirical_pool(stack, cfg.vacuum.to_region(), null_m)
    return stats.NullModel("empirical", m=null_m, pool=np.asarray(pool).ravel(), seed=seed)


def run_gof(cfg: GofConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    frame = imagio.sum_frames(stack, cfg.m, cfg.ell)
    model = _null_model(cfg, stack, cfg.m, seed)
    report = stats.gof_test(frame, cfg.detector(), cfg.statistic, model, cfg.n, cfg.alpha, threads)
    write_text(out / "gof_report.json", report.to_json())
    log.info("%s: observed %s, p = %s", cfg.statistic, report.observed, report.p_value)


def run_multitest(cfg: MultitestConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    det = cfg.detector()
    det = Detector(det.region, det.sigma, det.eta, "max_pixel_value")
    starts = imagio.window_starts(stack.frame_count, cfg.m, cfg.m)
    if cfg.max_windows is not None:
        starts = starts[: cfg.max_windows]
    observed = _map(
        lambda ell: summaries.evaluate(cfg.statistic, det.lifetimes(imagio.sum_frames(stack, cfg.m, ell))),
        starts,
        threads,
    )
    model = _null_model(cfg, stack, cfg.m, seed)
    shape = stats.subimage_shape(det, (stack.height, stack.width))
    pool = stats.null_statistics(model, det, cfg.statistic, cfg.n, shape, threads)
    report = stats.multi_test_from_statistics(observed, pool, cfg.alpha, indices=starts)
    write_text(out / "multitest.csv", report.to_csv())
    log.info("rejected %d of %d windows", report.ell, report.N)


def run_simulate(cfg: SimulateConfig, out: Path, seed: int | None, threads: int) -> None:
    if cfg.truth_file is not None:
        spec = synth.GroundTruthSpec.from_json(cfg.truth_file)
    elif cfg.truth is not None:
        spec = synth.GroundTruthSpec.from_dict(cfg.truth)
    else:
        amps = np.linspace(0.2, 0.4, 25)[np.random.default_rng(1).permutation(25)]
        spec = synth.GroundTruthSpec.lattice(amplitudes=amps)
    if cfg.region is not None:
        region = cfg.region.to_region()
    else:
        region = imagio.RegionSpec(polygon=spec.bounding_polygon(spec.peak_sigma * 8 / 3))
    seeds = cfg.seeds
    if seeds is None:
        base = 0 if seed is None else seed
        seeds = list(range(base, base + cfg.n_seeds))
    rows = []
    for sigma in cfg.sigmas:
        det = Detector(region, sigma, cfg.eta, cfg.infinite_mode)
        reference, found = synth.recovery(spec, det, seeds)
        rows += [
            (r.seed, repr(r.sigma), len(reference), r.count, _num(r.hausdorff), _num(r.correlation))
            for r in found
        ]
    write_text(
        out / "recovery.csv",
        _csv(["seed", "sigma", "reference_count", "count", "hausdorff", "correlation"], rows),
    )
    write_text(out / "truth.json", json.dumps(spec.to_dict(), indent=2) + "\n")
    if cfg.write_frames:
        frames = [synth.noisy_frame(spec, s) for s in seeds]
        imagio.save_stack(imagio.ImageStack.from_frames(frames), out / "frames", "pgm_dir")


def run_diagnose(cfg: DiagnoseConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    U = cfg.vacuum.to_region()
    x0, y0, x1, y1 = U.check_rect((stack.height, stack.width))
    lam = stats.fit_lambda(stack, U)
    vacuum = stack.frames[:, y0:y1, x0:x1]
    npix = vacuum[0].size
    ks = stats.poisson_ks_distance(vacuum, lam)
    pooled_n = npix * stack.frame_count
    report = {
        "lambda": lam,
        "vacuum_pixels": npix,
        "frames": stack.frame_count,
        "ks_distance": ks,
        "p_value_pooled": stats.dkw_pvalue(ks, pooled_n),
        "p_value_per_region": stats.dkw_pvalue(ks, npix),
    }
    per_frame = []
    for ell in range(stack.frame_count):
        k = stats.poisson_ks_distance(vacuum[ell], lam)
        per_frame.append((ell, repr(k), repr(stats.dkw_pvalue(k, npix))))
    write_text(out / "diagnose.json", json.dumps(report, indent=2) + "\n")
    write_text(out / "dkw_frames.csv", _csv(["frame_index", "ks_distance", "p_value"], per_frame))
    max_lag = min(cfg.max_lag, stack.frame_count - 1)
    if max_lag >= 1:
        ac = stats.mean_autocorrelation(stack, U, max_lag)
        write_text(
            out / "autocorrelation.csv",
            _csv(
                ["lag", "mean_rho", "null_sd", "excluded"],
                [(int(h), repr(float(r)), repr(ac.null_sd), ac.excluded) for h, r in zip(ac.lags, ac.mean_rho)],
            ),
        )
    m = min(cfg.m, stack.frame_count - cfg.ell)
    frame = imagio.sum_frames(stack, m, cfg.ell)
    sv = stats.semivariogram(frame, U, cfg.bins)
    write_text(
        out / "semivariogram.csv",
        _csv(["l", "gamma", "pairs"], [(int(l), _num(g), int(c)) for l, g, c in zip(sv.bins, sv.gamma, sv.pair_counts)]),
    )


def run_threshold(cfg: ThresholdConfig, out: Path, seed: int | None, threads: int) -> None:
    stack = _load(cfg.stack)
    frame = cfg.region.to_region().crop(imagio.sum_frames(stack, cfg.m, cfg.ell))
    sub = imagio.smooth(frame, cfg.sigma)
    t_star, dark = pd_threshold(sub)
    write_text(out / "threshold.json", json.dumps({"threshold": t_star, "sigma": cfg.sigma}, indent=2) + "\n")
    # dark pixels are black (0), the rest white (1)
    imagio.write_pgm(out / "binary.pgm", (~dark).astype(np.int64), maxval=1)


COMMANDS = {
    "detect": run_detect,
    "summarize": run_summarize,
    "gof": run_gof,
    "multitest": run_multitest,
    "simulate": run_simulate,
    "diagnose": run_diagnose,
    "threshold": run_threshold,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cubetop",
        description="Topological feature detection and Monte Carlo testing for noisy image series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed (u64)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CUBETOP_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.command, args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, out, args.seed, args.threads)
    except (ValueError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
