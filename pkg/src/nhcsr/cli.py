"""Command-line entry point: ``nhcsr <command> [flags]``.

Commands: gen-data, train, eval, infer, plot, replay. Every command takes
``--config FILE`` (lines of ``key=value``); flags override file values, which
override built-in defaults. Each run writes a JSON manifest next to its output.

Exit codes: 0 ok, 2 usage/config, 3 data contract, 4 numeric failure. Errors are
reported on stderr as a single line ``error: code=<CODE> msg=<text>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataContractError, FormatError, NHCSRError, UsageError
from .fem import GridField, Source, build_dataset, load_dataset
from .losses import LossConfig
from .model import ModelConfig, forward, load_checkpoint
from .plotting import COLORMAPS, RESIDUAL_GAIN, plot_field, residual_intensity, write_image, write_slices
from .train import TrainConfig, train

log = logging.getLogger("nhcsr")

# ---------------------------------------------------------------- option tables
# name -> (default, type, help). Types: int, float, str, bool, "path", "list".

GEN_OPTIONS = {
    "n": (16, int, "number of samples"),
    "eps_grid": (32, int, "coefficient cells per side (E)"),
    "h_grid": (8, int, "coarse elements per side (H)"),
    "alpha": (2, int, "integer upscale factor of the reference solution"),
    "pattern": ("random", str, "random | checkerboard | wave | stride | mix (optional :params)"),
    "seed": (0, int, "master seed"),
    "source": ("constant", str, "constant | sine"),
    "source_value": (1.0, float, "source amplitude"),
    "workers": (1, int, "worker processes"),
    "out": (None, "path", "output NHCD file"),
}

TRAIN_OPTIONS = {
    "train_data": (None, "path", "training NHCD file"),
    "val_data": (None, "path", "validation NHCD file (default: first training samples)"),
    "out": (None, "path", "output directory"),
    "resume": (None, "path", "checkpoint to resume from"),
    "iterations": (2000, int, "optimizer steps"),
    "batch": (8, int, "samples per step"),
    "lr": (1e-4, float, "base learning rate"),
    "halve_at": (1000, int, "iteration at which the learning rate is halved"),
    "queries": (256, int, "fine-grid nodes sampled per sample and step"),
    "seed": (0, int, "seed for initialisation and sampling"),
    "val_every": (100, int, "validation cadence"),
    "checkpoint_every": (0, int, "periodic checkpoint cadence (0: final only)"),
    "lam": (0.1, float, "weight of the cosine-similarity term"),
    "scs_points": (0, int, "points per draw (0: H+1)"),
    "scs_repeats": (0, int, "draws per step (0: H+1)"),
    "channels": (32, int, "encoder channels"),
    "res_blocks": (4, int, "encoder residual blocks"),
    "attn_dim": (32, int, "attention dimension"),
    "gabor_width": (16, int, "coordinate-encoding width"),
    "omega0": (30.0, float, "initial frequency of the coordinate nonlinearity"),
    "s0": (10.0, float, "initial spread of the coordinate nonlinearity"),
    "shuffle": (2, int, "pixel-shuffle factor of the fine branch"),
    "mlp_width": (32, int, "hidden width of the output MLP"),
    "encoding": ("gabor", str, "plain | sinusoid | gaussian | gabor"),
    "multiscale": (True, bool, "use the fine branch"),
    "query_chunk": (4096, int, "queries decoded at once during inference"),
}

EVAL_OPTIONS = {
    "checkpoint": (None, "path", "NHCK checkpoint"),
    "data": (None, "list", "test NHCD files, one per alpha"),
    "alphas": (None, "list", "upscale factors to evaluate (default: those of the files)"),
    "out": (None, "path", "output directory for metrics.csv, samples.csv, rapsd.csv"),
}

INFER_OPTIONS = {
    "checkpoint": (None, "path", "NHCK checkpoint"),
    "data": (None, "path", "NHCD file holding the input sample"),
    "index": (0, int, "sample index in the file"),
    "alpha": (None, float, "upscale factor (alpha*(N-1)+1 must be an integer)"),
    "nodes": (None, int, "output nodes per side (instead of alpha)"),
    "out": (None, "path", "output raw little-endian f64 grid"),
    "plot": (None, "path", "optional image of the output"),
    "gain": (8.0, float, "gain for --plot"),
}

PLOT_OPTIONS = {
    "field": (None, "path", "raw f64 grid (as written by infer)"),
    "data": (None, "path", "NHCD file to take the field from instead"),
    "index": (0, int, "sample index for --data"),
    "which": ("Y", str, "X | Y for --data"),
    "reference": (None, "path", "raw f64 reference grid (with --residual)"),
    "residual": (False, bool, "plot |field - reference| amplified by 20"),
    "gain": (8.0, float, "intensity gain before wrapping"),
    "colormap": ("jet", str, "jet | gray"),
    "out": (None, "path", "output PPM/PGM image"),
    "slices": (None, "path", "optional CSV of the middle row and column"),
}

COMMANDS = {"gen-data": GEN_OPTIONS, "train": TRAIN_OPTIONS, "eval": EVAL_OPTIONS,
            "infer": INFER_OPTIONS, "plot": PLOT_OPTIONS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _key(name: str) -> str:
    return name.strip().replace("-", "_")


def _convert(key: str, raw, typ):
    if raw is None:
        return None
    try:
        if typ is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "list":
            items = raw if isinstance(raw, list) else str(raw).replace(",", " ").split()
            return [str(x) for x in items]
        if typ == "path":
            return str(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path) -> dict:
    """``key=value`` per line; blank lines and ``#`` comments ignored; dashes equal underscores."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[_key(k)] = v.strip()
    return out


def resolve(options: dict, file_values: dict, flag_values: dict) -> dict:
    """defaults < config file < flags, with every value converted to its declared type."""
    unknown = sorted(set(file_values) - set(options))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {}
    for k, (default, typ, _) in options.items():
        raw = flag_values.get(k, file_values.get(k, default))
        cfg[k] = _convert(k, raw, typ)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nhcsr", description="Coefficient-guided super-resolution of FEM solutions.")
    p.add_argument("--version", action="version", version=f"nhcsr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, options in COMMANDS.items():
        sp = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="key=value config file")
        for k, (default, typ, help_text) in options.items():
            flag = "--" + k.replace("_", "-")
            alias = "--" + k
            names = [flag] if alias == flag else [flag, alias]
            if typ is bool:
                sp.add_argument(*names, dest=k, nargs="?", const="true", help=help_text)
            elif typ == "list":
                sp.add_argument(*names, dest=k, nargs="+", help=help_text)
            else:
                sp.add_argument(*names, dest=k, help=f"{help_text} (default: {default})")
    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return p


# ---------------------------------------------------------------- helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(cfg: dict, *keys):
    for k in keys:
        if cfg.get(k) in (None, []):
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def read_raw_grid(path) -> GridField:
    raw = _existing(path, "field file").read_bytes()
    n = int(round(np.sqrt(len(raw) / 8)))
    if n < 2 or n * n * 8 != len(raw):
        raise FormatError(f"{path} is not a square raw f64 grid ({len(raw)} bytes)")
    return GridField(np.frombuffer(raw, "<f8").reshape(n, n).astype(np.float64))


def write_raw_grid(path, field: GridField) -> None:
    Path(path).write_bytes(field.values.astype("<f8").tobytes())


def write_manifest(path, command: str, cfg: dict, inputs, outputs, started: float) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "seeds": {k: v for k, v in cfg.items() if k == "seed"},
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _make_parents(cfg: dict, *keys) -> None:
    """Create the directories that will hold the file outputs named by ``keys``."""
    for k in keys:
        if cfg.get(k):
            Path(cfg[k]).parent.mkdir(parents=True, exist_ok=True)


def _manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict) -> dict:
    _require(cfg, "out")
    started = time.time()
    _make_parents(cfg, "out")
    header = build_dataset(cfg["out"], cfg["n"], cfg["eps_grid"], cfg["h_grid"], cfg["alpha"],
                           pattern=cfg["pattern"], seed=cfg["seed"],
                           source=Source(cfg["source"], cfg["source_value"]), workers=cfg["workers"])
    digest = sha256(cfg["out"])
    print(f"wrote {cfg['out']}: n={header.n_samples} E={header.E} X {header.n_coarse}x{header.n_coarse} "
          f"Y {header.n_fine}x{header.n_fine} y_min={header.y_min:.6g} y_max={header.y_max:.6g} "
          f"sha256={digest}")
    write_manifest(_manifest_path(cfg["out"]), "gen-data", cfg, [], [cfg["out"]], started)
    return {"header": header, "sha256": digest}


def train_config_from(cfg: dict) -> TrainConfig:
    model = ModelConfig(**{f.name: cfg[f.name] for f in fields(ModelConfig) if f.name in cfg})
    loss = LossConfig(lam=cfg["lam"], points=cfg["scs_points"] or None, repeats=cfg["scs_repeats"] or None)
    keys = ("iterations", "batch", "lr", "halve_at", "queries", "seed", "val_every", "checkpoint_every")
    return TrainConfig(model=model, loss=loss, **{k: cfg[k] for k in keys})


def cmd_train(cfg: dict) -> dict:
    _require(cfg, "train_data", "out")
    started = time.time()
    inputs = [_existing(cfg["train_data"], "training dataset")]
    if cfg["val_data"]:
        inputs.append(_existing(cfg["val_data"], "validation dataset"))
    if cfg["resume"]:
        inputs.append(_existing(cfg["resume"], "resume checkpoint"))
    tcfg = train_config_from(cfg)
    result = train(tcfg, cfg["train_data"], cfg["val_data"], out_dir=cfg["out"], resume=cfg["resume"])
    last = result.history[-1] if result.history else {}
    print(f"wrote {result.checkpoint}: iterations={tcfg.iterations} "
          f"loss={last.get('total', float('nan')):.6g} val_l1={last.get('val_l1', float('nan')):.6g}")
    out = Path(cfg["out"])
    write_manifest(out / "manifest.json", "train", cfg, inputs, [result.checkpoint, out / "history.csv"], started)
    return {"result": result}


def cmd_eval(cfg: dict) -> dict:
    from .evaluate import evaluate, write_report

    _require(cfg, "checkpoint", "data", "out")
    started = time.time()
    ckpt = _existing(cfg["checkpoint"], "checkpoint")
    datasets = {}
    for path in cfg["data"]:
        header, samples = load_dataset(_existing(path, "test dataset"))
        if header.alpha in datasets:
            raise UsageError(f"two test files for alpha={header.alpha}")
        datasets[header.alpha] = (header, samples)
    if cfg["alphas"]:
        wanted = []
        for a in cfg["alphas"]:
            try:
                wanted.append(int(a))
            except ValueError:
                raise ConfigError(f"alphas must be integers, got {a!r}") from None
        missing = [a for a in wanted if a not in datasets]
        if missing:
            raise DataContractError(f"no test file for alpha {missing}; files cover {sorted(datasets)}")
        datasets = {a: datasets[a] for a in wanted}
    result = evaluate(ckpt, datasets)
    paths = write_report(cfg["out"], result)
    for row in result["table"]:
        print(f"{row['method']:8s} alpha={row['alpha']} mse={row['mse_mean']:.4e} psnr={row['psnr_mean']:.3f} "
              f"ssim={row['ssim_mean']:.4f}")
    write_manifest(Path(cfg["out"]) / "manifest.json", "eval", cfg, [ckpt] + [Path(p) for p in cfg["data"]],
                   list(paths.values()), started)
    return {"result": result, "paths": paths}


def cmd_infer(cfg: dict) -> dict:
    _require(cfg, "checkpoint", "data", "out")
    if (cfg["alpha"] is None) == (cfg["nodes"] is None):
        raise UsageError("give exactly one of --alpha or --nodes")
    started = time.time()
    ck = load_checkpoint(_existing(cfg["checkpoint"], "checkpoint"))
    _, samples = load_dataset(_existing(cfg["data"], "dataset"))
    if not 0 <= cfg["index"] < len(samples):
        raise DataContractError(f"sample index {cfg['index']} out of range for {len(samples)} samples")
    s = samples[cfg["index"]]
    out = forward(s.X, s.A, ck.params, ck.config, alpha=cfg["alpha"], n_out=cfg["nodes"],
                  y_min=ck.y_min, y_max=ck.y_max)
    _make_parents(cfg, "out", "plot")
    write_raw_grid(cfg["out"], out)
    outputs = [cfg["out"]]
    if cfg["plot"]:
        plot_field(cfg["plot"], out, gain=cfg["gain"])
        outputs.append(cfg["plot"])
    print(f"wrote {cfg['out']}: {out.N}x{out.N} f64")
    write_manifest(_manifest_path(cfg["out"]), "infer", cfg, [cfg["checkpoint"], cfg["data"]], outputs, started)
    return {"field": out}


def cmd_plot(cfg: dict) -> dict:
    _require(cfg, "out")
    if cfg["colormap"] not in COLORMAPS:
        raise ConfigError(f"unsupported colormap {cfg['colormap']!r}; choose from {COLORMAPS}")
    started = time.time()
    inputs = []
    if cfg["field"]:
        field = read_raw_grid(cfg["field"])
        inputs.append(cfg["field"])
    elif cfg["data"]:
        _, samples = load_dataset(_existing(cfg["data"], "dataset"))
        if not 0 <= cfg["index"] < len(samples):
            raise DataContractError(f"sample index {cfg['index']} out of range for {len(samples)} samples")
        if cfg["which"] not in ("X", "Y"):
            raise ConfigError("--which must be X or Y")
        field = getattr(samples[cfg["index"]], cfg["which"])
        inputs.append(cfg["data"])
    else:
        raise UsageError("give --field or --data")
    _make_parents(cfg, "out", "slices")
    if cfg["residual"]:
        _require(cfg, "reference")
        ref = read_raw_grid(cfg["reference"])
        inputs.append(cfg["reference"])
        levels = residual_intensity(field, ref, RESIDUAL_GAIN)
        write_image(cfg["out"], levels, cfg["colormap"])
    else:
        levels = plot_field(cfg["out"], field, gain=cfg["gain"], colormap=cfg["colormap"])
    outputs = [cfg["out"]]
    if cfg["slices"]:
        write_slices(cfg["slices"], field)
        outputs.append(cfg["slices"])
    print(f"wrote {cfg['out']}: {levels.shape[1]}x{levels.shape[0]} {cfg['colormap']}")
    write_manifest(_manifest_path(cfg["out"]), "plot", cfg, inputs, outputs, started)
    return {"levels": levels}


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "plot": cmd_plot}


def run(argv) -> dict:
    """Parse ``argv`` and execute; raises :class:`NHCSRError` subclasses on failure."""
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    command = args.pop("command", None)
    if command is None:
        raise UsageError("no command given; see nhcsr --help")
    if command == "replay":
        try:
            manifest = json.loads(Path(args["manifest"]).read_text())
            command, cfg = manifest["command"], manifest["config"]
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read manifest {args['manifest']}: {exc}") from None
        if command not in HANDLERS:
            raise UsageError(f"manifest names unknown command {command!r}")
        return HANDLERS[command](resolve(COMMANDS[command], {}, cfg))
    file_values = read_config_file(args.pop("config")) if "config" in args else {}
    cfg = resolve(COMMANDS[command], file_values, args)
    return HANDLERS[command](cfg)


def main(argv=None) -> int:
    try:
        run(sys.argv[1:] if argv is None else argv)
    except NHCSRError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: code={exc.code} msg={msg}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: code=IO msg={' '.join(str(exc).split())}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
