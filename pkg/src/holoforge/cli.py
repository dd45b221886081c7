"""Command-line entry point: ``holoforge <subcommand> --config cfg.json --out dir``.

Config files are JSON objects with optional sections:

``optics``    OpticalConfig fields; lengths carry units ("10mm", "3.74um", "639nm").
``scene``     {"seed", "count", "height", "width", "object_count"} for synthetic inputs.
``solver``    SolveSettings fields (iterations, step_size, power_mode, restarts, ...).
``training``  TrainSettings fields plus "scenes" (dataset size) and "eval_scenes".
``sweep``     variable set: lists for wavelengths, brightness_scale, volume_depth,
              location_offset, pixel_pitch (lengths with units).
``model``     {"checkpoint": path, "teacher": path} for infer and distill.

Every run writes ``run_manifest.json`` listing the command line, config hash,
seeds, version, timings and every file produced. Errors print one line
``error: <Kind>: <message>`` and exit with 2 (config), 3 (I/O) or 4 (divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import export_dataset, make_dataset, slice_multiplane, synth_scene
from .errors import ConfigError, DivergenceError, HoloforgeError
from .io import ensure_dir, read_csv, read_pfm, read_png8, write_csv, write_pfm, write_png8
from .metrics import in_focus_quality, write_metrics_csv
from .optics import LaserPowers, OpticalConfig, PhaseHologram, parse_length, wrap_phase
from .propagation import reconstruct_volume
from .solver import (SWEEP_KEYS, SolveSettings, dequantize_phase, evaluate_solution,
                     optimize_hologram, quantize_phase, sweep_configs)

EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_OTHER = 2, 3, 4, 1

RUN_MANIFEST = "run_manifest.json"
SECTIONS = ("optics", "scene", "solver", "training", "sweep", "model")
SCENE_DEFAULTS = {"seed": 0, "count": 1, "height": None, "width": None, "object_count": None}


# -- config handling -----------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _settings(cls, section: dict, **overrides):
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in section.items()}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def optics_from(cfg: dict, args) -> OpticalConfig:
    d = dict(cfg.get("optics", {}))
    if args.z is not None:
        d["location_offset"] = args.z
    if args.scale is not None:
        d["brightness_scale"] = args.scale
    if args.planes is not None:
        d["plane_count"] = args.planes
    try:
        return OpticalConfig.from_dict(d)
    except (HoloforgeError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"optics: {exc}") from exc


def scene_from(cfg: dict, args, optics: OpticalConfig) -> dict:
    sc = dict(SCENE_DEFAULTS)
    extra = set(cfg.get("scene", {})) - set(sc)
    if extra:
        raise ConfigError(f"unknown scene keys: {sorted(extra)}")
    sc.update(cfg.get("scene", {}))
    if args.seed is not None:
        sc["seed"] = args.seed
    sc["height"] = sc["height"] or optics.resolution[0]
    sc["width"] = sc["width"] or optics.resolution[1]
    if (sc["height"], sc["width"]) != tuple(optics.resolution):
        raise ConfigError("scene size must match optics resolution")
    if not isinstance(sc["count"], int) or sc["count"] < 0:
        raise ConfigError("scene count must be a nonnegative integer")
    return sc


def variable_set_from(section: dict) -> dict:
    extra = set(section) - set(SWEEP_KEYS)
    if extra:
        raise ConfigError(f"unknown sweep keys: {sorted(extra)}")
    out = {}
    for key, values in section.items():
        if not isinstance(values, list):
            raise ConfigError(f"sweep.{key} must be a list")
        if key == "wavelengths":
            out[key] = [tuple(parse_length(v) for v in triple) for triple in values]
        elif key == "brightness_scale":
            out[key] = [float(v) for v in values]
        else:
            out[key] = [parse_length(v) for v in values]
    return out


# -- artifacts -------------------------------------------------------------------

class Run:
    """Collects produced files and timings for the manifest."""

    def __init__(self, args, argv, optics: OpticalConfig | None):
        self.out = ensure_dir(args.out)
        self.argv = list(argv)
        self.optics = optics
        self.files: list[Path] = []
        self.seeds: dict = {}
        self.timings: dict = {}
        self._t0 = time.perf_counter()

    def add(self, *paths) -> None:
        for p in paths:
            self.files.extend(p if isinstance(p, list) else [p])

    def timed(self, name: str, fn, *a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        self.timings[name] = time.perf_counter() - t0
        return out

    def finish(self, command: str) -> Path:
        self.timings["total"] = time.perf_counter() - self._t0
        path = self.out / RUN_MANIFEST
        rel = sorted({str(Path(f).resolve().relative_to(self.out.resolve())) for f in self.files})
        manifest = {
            "command": command,
            "argv": self.argv,
            "config_hash": self.optics.config_hash() if self.optics else None,
            "optics": self.optics.to_dict() if self.optics else None,
            "seeds": self.seeds,
            "version": __version__,
            "timings_s": self.timings,
            "files": rel + [RUN_MANIFEST],
        }
        try:
            path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write manifest: {exc.strerror or exc}") from exc
        return path


def write_hologram(run: Run, hologram: PhaseHologram, powers: LaserPowers) -> None:
    levels = quantize_phase(hologram)
    for t in range(hologram.subframe_count):
        png = run.out / f"phase_t{t}.png"
        pfm = run.out / f"phase_t{t}.pfm"
        write_png8(png, levels[t])
        write_pfm(pfm, hologram.phases[t])
        run.add(png, pfm)
    path = run.out / "powers.csv"
    write_csv(path, [f"p{j}" for j in range(powers.shape[1])], powers.values.tolist())
    run.add(path)


def read_hologram(directory, config: OpticalConfig, quantized: bool) -> tuple:
    d = Path(directory)
    names = range(config.subframe_count)
    if quantized:
        levels = np.stack([read_png8(d / f"phase_t{t}.png") for t in names])
        hologram = dequantize_phase(levels)
    else:
        # float32 storage can round a phase just below pi up to pi
        hologram = PhaseHologram(wrap_phase(np.stack([read_pfm(d / f"phase_t{t}.pfm")
                                                      for t in names])))
    rows = read_csv(d / "powers.csv")[1:]
    try:
        powers = LaserPowers(np.array([[float(v) for v in r] for r in rows]))
    except ValueError as exc:
        raise ConfigError(f"bad powers.csv: {exc}") from exc
    return hologram, powers


def _targets(scene: dict, optics: OpticalConfig) -> list:
    count = max(scene["count"], 1)
    return [slice_multiplane(synth_scene(scene["seed"] + i, scene["height"], scene["width"],
                                         scene["object_count"]), optics)
            for i in range(count)]


# -- subcommands -----------------------------------------------------------------

def cmd_datagen(args, cfg, run: Run) -> None:
    optics = run.optics
    scene = scene_from(cfg, args, optics)
    samples = run.timed("generate", make_dataset, scene["count"], scene["seed"], scene["height"],
                        scene["width"], scene["object_count"])
    params = {k: scene[k] for k in ("count", "height", "width", "object_count")}
    run.add(export_dataset(samples, run.out, params))
    run.seeds["scene"] = scene["seed"]


def _solve_settings(cfg, args) -> SolveSettings:
    overrides = {"iterations": args.iterations, "seed": args.seed}
    if args.quantize:
        overrides["quantize_each_eval"] = True
    return _settings(SolveSettings, cfg.get("solver", {}), **overrides)


def cmd_optimize(args, cfg, run: Run) -> None:
    optics = run.optics
    scene = scene_from(cfg, args, optics)
    settings = _solve_settings(cfg, args)
    target = _targets(dict(scene, count=1), optics)[0]
    result = run.timed("solve", optimize_hologram, target, optics, settings)
    write_hologram(run, result.hologram, result.powers)
    names = sorted(result.trace[0].components) if result.trace else []
    path = run.out / "trace.csv"
    write_csv(path, ["iteration", "total"] + names,
              [[i] + r.as_row(names) for i, r in enumerate(result.trace)])
    p, q = evaluate_solution(result, target, optics)
    qpath = run.out / "quality.csv"
    write_csv(qpath, ["psnr", "ssim"], [[p, q]])
    run.add(path, qpath)
    run.seeds.update({"scene": scene["seed"], "solver": settings.seed})


def cmd_simulate(args, cfg, run: Run) -> None:
    """Reconstruct a saved hologram, unquantized and quantized, and score both."""
    optics = run.optics
    src = Path(args.hologram or args.out)
    scene = scene_from(cfg, args, optics)
    target = _targets(dict(scene, count=1), optics)[0]
    rows = []
    for variant, quant in (("unquantized", False), ("quantized", True)):
        hologram, powers = read_hologram(src, optics, quant)
        volume = run.timed(f"reconstruct_{variant}", reconstruct_volume, hologram, powers, optics)
        p, q = in_focus_quality(volume, target, optics.brightness_scale)
        rows.append([variant, p, q])
        if quant == bool(args.quantize):
            for k in range(volume.shape[0]):
                path = run.out / f"recon_k{k}.pfm"
                write_pfm(path, np.moveaxis(volume[k], 0, -1) if volume.shape[1] == 3
                          else volume[k, 0])
                run.add(path)
    rows.append(["difference", rows[0][1] - rows[1][1], rows[0][2] - rows[1][2]])
    path = run.out / "simulate.csv"
    write_csv(path, ["variant", "psnr", "ssim"], rows)
    run.add(path)
    run.seeds["scene"] = scene["seed"]


def cmd_metrics(args, cfg, run: Run) -> None:
    """In-focus PSNR/SSIM of a saved hologram against the configured scene."""
    optics = run.optics
    src = Path(args.hologram or args.out)
    scene = scene_from(cfg, args, optics)
    target = _targets(dict(scene, count=1), optics)[0]
    hologram, powers = read_hologram(src, optics, bool(args.quantize))
    volume = reconstruct_volume(hologram, powers, optics)
    p, q = in_focus_quality(volume, target, optics.brightness_scale)
    path = run.out / "metrics.csv"
    write_metrics_csv(path, [{"config_hash": optics.config_hash(), "psnr_mean": p,
                              "psnr_std": 0.0, "ssim_mean": q, "ssim_std": 0.0}])
    run.add(path)
    run.seeds["scene"] = scene["seed"]


def cmd_sweep(args, cfg, run: Run) -> None:
    optics = run.optics
    scene = scene_from(cfg, args, optics)
    settings = _solve_settings(cfg, args)
    variables = variable_set_from(cfg.get("sweep", {}))
    rows = run.timed("sweep", sweep_configs, lambda c: _targets(scene, c), variables, optics,
                     settings)
    path = run.out / "sweep.csv"
    write_metrics_csv(path, rows, ["recon"])
    run.add(path)
    run.seeds.update({"scene": scene["seed"], "solver": settings.seed})


def _train_settings(cfg, args):
    from .learned import TrainSettings
    section = dict(cfg.get("training", {}))
    section.pop("scenes", None)
    section.pop("eval_scenes", None)
    return _settings(TrainSettings, section, seed=args.seed, epochs=args.iterations)


def _write_history(run: Run, history, name: str) -> None:
    names = sorted(k for k in history.epochs[0] if k != "total") if history.epochs else []
    path = run.out / name
    write_csv(path, ["epoch", "lr", "total"] + names,
              [[i + 1, history.lrs[i], e["total"]] + [e[k] for k in names]
               for i, e in enumerate(history.epochs)])
    run.add(path)


def _training_data(cfg, args, optics):
    scene = scene_from(cfg, args, optics)
    tr = cfg.get("training", {})
    count = int(tr.get("scenes", 256))
    return scene, make_dataset(count, scene["seed"], scene["height"], scene["width"],
                               scene["object_count"])


def cmd_train_teacher(args, cfg, run: Run) -> None:
    from .learned import TEACHER, ToyModel, save_checkpoint, train_teacher
    settings = _train_settings(cfg, args)
    scene, data = _training_data(cfg, args, run.optics)
    model = ToyModel(TEACHER, seed=settings.seed)
    history = run.timed("train", train_teacher, model, data, settings)
    run.add(save_checkpoint(model, run.out / "teacher.ckpt", {"role": "teacher"}))
    _write_history(run, history, "history.csv")
    run.seeds.update({"scene": scene["seed"], "model": settings.seed})


def _checkpoint_path(cfg, args, key: str) -> Path:
    path = args.checkpoint or cfg.get("model", {}).get(key)
    if not path:
        raise ConfigError(f"no checkpoint given (--checkpoint or model.{key})")
    return Path(path)


def cmd_distill(args, cfg, run: Run) -> None:
    from .learned import distill_student, load_checkpoint, save_checkpoint
    teacher, _ = load_checkpoint(_checkpoint_path(cfg, args, "teacher"))
    settings = _train_settings(cfg, args)
    scene, data = _training_data(cfg, args, run.optics)
    student, history = run.timed("distill", distill_student, teacher, data, settings)
    run.add(save_checkpoint(student, run.out / "student.ckpt", {"role": "student"}))
    _write_history(run, history, "history.csv")
    run.seeds.update({"scene": scene["seed"], "model": settings.seed})


def cmd_infer(args, cfg, run: Run) -> None:
    from .learned import infer, load_checkpoint
    model, _ = load_checkpoint(_checkpoint_path(cfg, args, "checkpoint"))
    optics = run.optics
    scene = scene_from(cfg, args, optics)
    if args.input:
        rgb = read_png8(args.input).astype(np.float64) / 255.0
        if rgb.ndim != 3 or rgb.shape[-1] != 3:
            raise ConfigError("input image must be RGB")
        rgb = np.moveaxis(rgb, -1, 0)
        reference = None
    else:
        sample = synth_scene(scene["seed"], scene["height"], scene["width"], scene["object_count"])
        rgb, reference = sample.rgb, slice_multiplane(sample, optics)
    result = infer(model, rgb, optics, reference, strict_z=args.strict_z)
    run.timings["forward"] = result.seconds
    run.add(result.write(run.out))
    if result.plane_metrics:
        path = run.out / "plane_metrics.csv"
        write_csv(path, ["plane", "psnr", "ssim"],
                  [[k, p, q] for k, (p, q) in enumerate(result.plane_metrics)])
        run.add(path)
    run.seeds["scene"] = scene["seed"]


COMMANDS = {
    "datagen": cmd_datagen,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "infer": cmd_infer,
    "metrics": cmd_metrics,
    "sweep": cmd_sweep,
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="holoforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"holoforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--z", help="location offset with unit, e.g. 10mm")
        p.add_argument("--scale", type=float, help="brightness scale s")
        p.add_argument("--planes", type=int, help="plane count K")
        p.add_argument("--iterations", type=int, help="solver iterations or training epochs")
        p.add_argument("--quantize", action="store_true",
                       help="quantize phases to 8 bits (solver) or read 8-bit maps")
        p.add_argument("--strict-z", action="store_true", help="reject untrained Z values")
        p.add_argument("--hologram", help="directory holding phase maps and powers.csv")
        p.add_argument("--checkpoint", help="model checkpoint")
        p.add_argument("--input", help="RGB PNG for infer")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        cfg = load_config(args.config)
        optics = optics_from(cfg, args)
        run = Run(args, argv, optics)
        COMMANDS[args.command](args, cfg, run)
        run.finish(args.command)
    except ConfigError as exc:
        return _fail("ConfigError", exc, EXIT_CONFIG)
    except DivergenceError as exc:
        return _fail("DivergenceError", exc, EXIT_DIVERGENCE)
    except OSError as exc:
        return _fail("IOError", exc, EXIT_IO)
    except HoloforgeError as exc:
        return _fail(type(exc).__name__, exc, EXIT_CONFIG)
    except (ValueError, IndexError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_OTHER)
    return 0


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
