"""Command-line entry point: ``thermo25d {simulate,reconstruct,evaluate,bench}``.

Every command accepts ``--config run.json``; explicit flags override the file.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import AcquisitionParams, ScalarVolume, VolumeGeometry
from .evaluate import (
    MetricError,
    benchmark,
    confusion,
    dice,
    machine_info,
    sem95,
    sensitivity,
    temperature_rmse,
)
from .io import FormatError, atomic_write_json, read_volume, sha256_file, write_phase_image, write_volume
from .popmap import HEAT_SINK_MODES, RADIAL_SAMPLING, HeatSinkVolume, rasterize_tubes, write_population_map
from .prfs import PRFSThermometry
from .reconstruct import ReconstructionEngine, coagulation_mask
from .simulator import (
    PhantomSpec,
    acquisition_schedule,
    default_phantom,
    ground_truth_field,
    iter_run,
)
from .stream import MANIFEST, DatasetSource, load_manifest, run_stream

log = logging.getLogger("thermo25d")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

REFERENCE_TIMINGS = {
    "population_map": "25.53ms ± 3.33ms",
    "heat_sink_lut": "3.91s ± 0.59s",
    "reconstruction": "18.02ms ± 5.91ms",
}


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class RunConfig:
    phantom: dict | None = None
    phantom_path: str | None = None
    orientations: int = 8
    period_s: float = 1.1
    pause_s: float = 5.0
    sweeps: int = 1
    threshold_c: float = 57.0
    out: str | None = None
    seed: int | None = None
    heat_sink_mode: str = "hard"
    soft_weight: float = 0.5
    radial_sampling: str = "nearest"
    emit_intermediate: bool = False
    reps: int = 100
    workers: int = 1
    bench_dims: tuple = (256, 256, 64)
    references_per_orientation: int = 10

    def validate(self) -> "RunConfig":
        if not 30.0 <= self.threshold_c <= 100.0:
            raise ConfigError(f"threshold {self.threshold_c} outside the [30, 100] degC sanity band")
        if self.orientations < 1 or self.orientations & (self.orientations - 1):
            raise ConfigError("orientations must be a power of two")
        if self.period_s < 0 or self.pause_s < 0 or self.sweeps < 0:
            raise ConfigError("period, pause and sweeps must be non-negative")
        if self.heat_sink_mode not in HEAT_SINK_MODES:
            raise ConfigError(f"heat-sink mode must be one of {HEAT_SINK_MODES}")
        if self.radial_sampling not in RADIAL_SAMPLING:
            raise ConfigError(f"radial sampling must be one of {RADIAL_SAMPLING}")
        if self.reps < 1 or self.workers < 1:
            raise ConfigError("reps and workers must be >= 1")
        if self.phantom_path is not None and not Path(self.phantom_path).is_file():
            raise ConfigError(f"phantom spec not found: {self.phantom_path}")
        return self

    def phantom_spec(self) -> PhantomSpec:
        try:
            if self.phantom_path is not None:
                d = json.loads(Path(self.phantom_path).read_text())
            else:
                d = self.phantom
            spec = default_phantom() if d is None else PhantomSpec.from_dict(d)
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid phantom spec: {exc}") from exc
        return spec if self.seed is None else spec.with_seed(self.seed)


FLAG_FIELDS = {
    "out": "out", "seed": "seed", "threshold_c": "threshold_c", "orientations": "orientations",
    "period_s": "period_s", "pause_s": "pause_s", "sweeps": "sweeps",
    "emit_intermediate": "emit_intermediate", "reps": "reps", "heat_sink_mode": "heat_sink_mode",
    "radial_sampling": "radial_sampling", "workers": "workers", "phantom": "phantom_path",
}


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for attr, key in FLAG_FIELDS.items():
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            data[key] = value
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if isinstance(cfg.bench_dims, list):
        cfg.bench_dims = tuple(cfg.bench_dims)
    return cfg.validate()


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _record(out: Path, files: dict, paths) -> None:
    for p in paths:
        files[str(Path(p).relative_to(out))] = sha256_file(p)


# simulate ---------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> dict:
    spec = cfg.phantom_spec()
    out = _require_out(cfg)
    params = AcquisitionParams(t0=spec.t0)
    schedule = acquisition_schedule(cfg.orientations, cfg.period_s, cfg.pause_s, cfg.sweeps)
    angles = sorted(k * 180.0 / cfg.orientations for k in range(cfg.orientations))
    files: dict[str, str] = {}
    images = []
    counters: dict[int, int] = {}
    live_idx = 0
    for role, im in iter_run(spec, schedule, params, cfg.references_per_orientation, reference_angles=angles):
        if role == "reference":
            k = angles.index(im.orientation_deg)
            j = counters.get(k, 0)
            counters[k] = j + 1
            stem = f"references/ref_o{k:02d}_{j:02d}.p25d"
        else:
            stem = f"live/live_{live_idx:04d}.p25d"
            live_idx += 1
        _record(out, files, write_phase_image(out / stem, im))
        images.append({"role": role, "stem": stem, "orientation_deg": im.orientation_deg,
                       "timestamp_s": im.timestamp})
    end_time = schedule[-1][1] if schedule else 0.0
    truth = ground_truth_field(spec, end_time)
    _record(out, files, write_volume(out / "truth/temperature.v25d", truth))
    coag = ScalarVolume(spec.geometry, (truth.values >= cfg.threshold_c).astype(np.float32), kind="mask")
    _record(out, files, write_volume(out / "truth/coagulation.v25d", coag))
    heat_sink = rasterize_tubes(spec.geometry, spec.tubes)
    _record(out, files, write_volume(out / "heat_sink.v25d", heat_sink.to_volume()))
    manifest = {
        "format": "thermo25d-dataset",
        "phantom": spec.to_dict(),
        "acquisition": asdict(params),
        "protocol": {"orientations": cfg.orientations, "angles_deg": angles, "period_s": cfg.period_s,
                     "pause_s": cfg.pause_s, "sweeps": cfg.sweeps,
                     "references_per_orientation": cfg.references_per_orientation},
        "threshold_c": cfg.threshold_c,
        "end_time_s": end_time,
        "images": images,
        "truth": {"temperature": "truth/temperature.v25d", "coagulation": "truth/coagulation.v25d"},
        "heat_sink": "heat_sink.v25d",
        "files": files,
    }
    atomic_write_json(out / MANIFEST, manifest)
    n_ref = sum(e["role"] == "reference" for e in images)
    print(f"wrote {n_ref} reference and {len(images) - n_ref} live images to {out}")
    return manifest


# reconstruct ------------------------------------------------------------------

def cmd_reconstruct(dataset: Path, cfg: RunConfig) -> dict:
    out = _require_out(cfg)
    try:
        source = DatasetSource(dataset, verify=True)
        manifest = source.manifest
        spec = PhantomSpec.from_dict(manifest["phantom"])
        source.t0 = spec.t0
        references = source.references()
        heat_sink = HeatSinkVolume.from_volume(read_volume(Path(dataset) / manifest["heat_sink"]))
    except (FormatError, KeyError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not references:
        raise DataError("dataset holds no reference images")
    thermometry = PRFSThermometry(
        gamma=references[0].params.gamma, alpha=references[0].params.alpha,
        b0=references[0].params.b0, te=references[0].params.te, t0=spec.t0,
    ).fit(references)
    engine = ReconstructionEngine(
        orientations=manifest["protocol"]["angles_deg"], t0=spec.t0, heat_sink_mode=cfg.heat_sink_mode,
        soft_weight=cfg.soft_weight, radial_sampling=cfg.radial_sampling, n_jobs=cfg.workers,
    ).fit(spec.geometry, heat_sink, references[0].slice_geometry)
    files: dict[str, str] = {}
    steps = []

    def on_update(slice_, volume):
        if cfg.emit_intermediate:
            stem = out / f"intermediate/step_{len(steps):04d}.v25d"
            _record(out, files, write_volume(stem, volume))
        steps.append(slice_.timestamp)

    try:
        run_stream(source, thermometry, engine, on_update)
    except (FormatError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not steps:
        raise DataError("dataset holds no live images")
    volume = engine.predict()
    mask = coagulation_mask(volume, cfg.threshold_c, engine.population_map_)
    _record(out, files, write_volume(out / "temperature.v25d", volume))
    _record(out, files, write_volume(out / "coagulation.v25d", mask.to_volume()))
    _record(out, files, write_volume(out / "validity.v25d", engine.population_map_.validity_volume()))
    ages = engine.ages(now=steps[-1])
    atomic_write_json(out / "ages.json", ages)
    files["ages.json"] = sha256_file(out / "ages.json")
    result = {
        "format": "thermo25d-reconstruction",
        "dataset": str(Path(dataset)),
        "threshold_c": cfg.threshold_c,
        "heat_sink_mode": cfg.heat_sink_mode,
        "radial_sampling": cfg.radial_sampling,
        "n_live": len(steps),
        "last_timestamp_s": steps[-1],
        "files": files,
    }
    atomic_write_json(out / MANIFEST, result)
    print(f"reconstructed {len(steps)} live images into {out}")
    return result


# evaluate ---------------------------------------------------------------------

def _truth_dir(path: Path) -> tuple[Path, dict | None]:
    if (path / MANIFEST).is_file():
        m = load_manifest(path)
        if m.get("format") == "thermo25d-dataset":
            return path / "truth", m
    return path, None


def evaluate_pair(recon_dir: Path, truth_path: Path) -> dict:
    truth_dir, dataset = _truth_dir(truth_path)
    try:
        recon_t = read_volume(recon_dir / "temperature.v25d")
        recon_m = read_volume(recon_dir / "coagulation.v25d")
        truth_t = read_volume(truth_dir / "temperature.v25d")
        truth_m = read_volume(truth_dir / "coagulation.v25d")
        validity_path = recon_dir / "validity.v25d"
        validity = read_volume(validity_path).values > 0 if validity_path.with_name(
            validity_path.name + ".json").is_file() else None
    except FormatError as exc:
        raise DataError(str(exc)) from exc
    if recon_t.geometry.dims != truth_t.geometry.dims:
        raise DataError("geometry mismatch between reconstruction and truth")
    c = confusion(recon_m.values > 0.5, truth_m.values > 0.5)
    try:
        sens = sensitivity(c)
    except MetricError:
        sens = None
    has_hs = bool(dataset and dataset["phantom"].get("tubes"))
    return {
        "recon": str(recon_dir), "truth": str(truth_path), "group": "HS" if has_hs else "no-HS",
        "dice": dice(c), "sensitivity": sens, "rmse_c": temperature_rmse(recon_t, truth_t, validity),
        "counts": c._asdict(),
    }


def _summary(rows: list[dict]) -> dict:
    out = {"n": len(rows)}
    for key in ("dice", "sensitivity", "rmse_c"):
        vals = [r[key] for r in rows if r[key] is not None]
        if len(vals) >= 2:
            s = sem95(vals)
            out[key] = {"mean": s.mean, "sem95": s.sem95, "sigma": s.sigma}
        elif vals:
            out[key] = {"mean": vals[0], "sem95": None, "sigma": None}
    return out


def cmd_evaluate(pairs: list[tuple[Path, Path]], out_path: Path | None = None, timings: dict | None = None) -> dict:
    if not pairs:
        raise ConfigError("no phantoms")
    rows = [evaluate_pair(r, t) for r, t in pairs]
    groups = {}
    for name in ("no-HS", "HS"):
        sel = [r for r in rows if r["group"] == name]
        if sel:
            groups[name] = _summary(sel)
    overall = _summary(rows)
    groups["overall"] = overall

    def head(key):
        v = overall.get(key)
        return None if v is None else v["mean"]

    report = {
        "dice": head("dice"),
        "sensitivity": head("sensitivity"),
        "rmse_c": head("rmse_c"),
        "sem95": {k: overall[k]["sem95"] for k in ("dice", "sensitivity", "rmse_c") if k in overall},
        "n": len(rows),
        "timings": timings or {},
        "phantoms": rows,
        "groups": groups,
    }
    print(f"{'group':<10}{'n':>4}  {'dice':>16}  {'sensitivity':>16}  {'rmse [C]':>16}")
    for name, g in groups.items():
        cells = []
        for key in ("dice", "sensitivity", "rmse_c"):
            v = g.get(key)
            if v is None:
                cells.append(f"{'-':>16}")
            elif v["sem95"] is None:
                cells.append(f"{v['mean']:>16.3f}")
            else:
                cells.append(f"{v['mean']:>8.3f}±{v['sem95']:<7.3f}")
        print(f"{name:<10}{g['n']:>4}  " + "  ".join(cells))
    if out_path is not None:
        atomic_write_json(out_path, report)
    return report


# bench ------------------------------------------------------------------------

def cmd_bench(cfg: RunConfig) -> dict:
    geom = VolumeGeometry(tuple(cfg.bench_dims))
    rows = []
    for op in ("population_map", "heat_sink_lut", "reconstruction"):
        for jobs in sorted({1, cfg.workers}):
            r = benchmark(op, cfg.reps, geom, n_jobs=jobs)
            rows.append(r.to_dict())
            print(f"{str(r):<60} threads={jobs}  reference: {REFERENCE_TIMINGS[op]}")
    report = {"geometry": geom.to_dict(), "reps": cfg.reps, "machine": machine_info(), "results": rows}
    print(f"geometry {geom.dims}, reps {cfg.reps}, {report['machine']['processor']}")
    if cfg.out:
        out = Path(cfg.out)
        atomic_write_json(out if out.suffix == ".json" else out / "bench.json", report)
    return report


# argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermo25d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (or .json file for bench)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threshold-c", dest="threshold_c", type=float)
        sp.add_argument("--workers", type=int)
        return sp

    s = common(sub.add_parser("simulate", help="generate a synthetic dataset"))
    s.add_argument("--phantom", help="phantom spec JSON")
    s.add_argument("--orientations", type=int)
    s.add_argument("--period-s", dest="period_s", type=float)
    s.add_argument("--pause-s", dest="pause_s", type=float)
    s.add_argument("--sweeps", type=int)

    r = common(sub.add_parser("reconstruct", help="replay a dataset through the engine"))
    r.add_argument("dataset")
    r.add_argument("--emit-intermediate", dest="emit_intermediate", action="store_true")
    r.add_argument("--heat-sink-mode", dest="heat_sink_mode", choices=HEAT_SINK_MODES)
    r.add_argument("--radial-sampling", dest="radial_sampling", choices=RADIAL_SAMPLING)
    r.add_argument("--dump-population-map", action="store_true", help="also write pmap25d files")

    e = sub.add_parser("evaluate", help="compare reconstructions with ground truth")
    e.add_argument("pairs", nargs="*", help="RECON_DIR TRUTH_DIR [RECON_DIR TRUTH_DIR ...]")
    e.add_argument("--batch", help="JSON list of {\"recon\": ..., \"truth\": ...}")
    e.add_argument("--out", help="write the JSON report here")

    b = common(sub.add_parser("bench", help="time map build, LUT build and reconstruction"))
    b.add_argument("--reps", type=int)
    return p


def _eval_pairs(args) -> list[tuple[Path, Path]]:
    items = list(args.pairs)
    if len(items) % 2:
        raise ConfigError("evaluate expects RECON_DIR TRUTH_DIR pairs")
    pairs = [(Path(a), Path(b)) for a, b in zip(items[::2], items[1::2])]
    if args.batch:
        try:
            batch = json.loads(Path(args.batch).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read batch {args.batch}: {exc}") from exc
        pairs += [(Path(b["recon"]), Path(b["truth"])) for b in batch]
    return pairs


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "evaluate":
            cmd_evaluate(_eval_pairs(args), Path(args.out) if args.out else None)
            return EXIT_OK
        cfg = load_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "reconstruct":
            cmd_reconstruct(Path(args.dataset), cfg)
            if args.dump_population_map:
                _dump_map(Path(args.dataset), cfg)
        elif args.command == "bench":
            cmd_bench(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, MetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _dump_map(dataset: Path, cfg: RunConfig) -> None:
    source = DatasetSource(dataset, verify=False)
    spec = PhantomSpec.from_dict(source.manifest["phantom"])
    heat_sink = HeatSinkVolume.from_volume(read_volume(dataset / source.manifest["heat_sink"]))
    engine = ReconstructionEngine(
        orientations=source.manifest["protocol"]["angles_deg"], t0=spec.t0,
        heat_sink_mode=cfg.heat_sink_mode, soft_weight=cfg.soft_weight, radial_sampling=cfg.radial_sampling,
    ).fit(spec.geometry, heat_sink, spec.slice_geometry)
    out = Path(cfg.out)
    write_population_map(out / "population_map.pmap25d", engine.population_map_)
    write_volume(out / "population_w1.v25d", engine.population_map_.channel_volume("w1"))


if __name__ == "__main__":
    sys.exit(main())
