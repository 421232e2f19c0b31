"""Command-line harness: synth | decompose | features | compare | train | gradcheck | plot.

Every subcommand reads the same flat ``key=value`` configuration (``--config``);
each key can be overridden by the flag of the same name. Exit codes: 0 success,
1 data or partial failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import typing
from dataclasses import fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .compare import (CONFIG_KEYS, METHODS, SCENARIOS, RunConfig, collect_frames,
                      decompose_all, run_compare, scenario_frames)
from .errors import ConfigurationError, EdaError
from .feel.checkpoint import save_checkpoint
from .feel.model import POOL_KERNELS, ArchConfig
from .feel.train import TrainConfig, gradcheck, train
from .io import write_decomposition, write_events, write_session, write_truth
from .plot import emit_plot

log = logging.getLogger("edasplit")

GRADCHECK_TOL = 1e-4

_HELP = {
    "inputs": "session CSV files (comma-separated)",
    "scenarios": f"synthetic scenarios: {', '.join(SCENARIOS)} or suite (comma-separated)",
    "methods": f"methods: {', '.join(METHODS)} (comma-separated)",
    "checkpoints": "model checkpoints as method=path (comma-separated)",
    "out": "output directory (plot: .svg file or directory)",
    "seed": "random seed",
    "filter_cutoff": "low-pass cutoff in Hz",
    "filter_order": "Butterworth order; 0 disables filtering",
    "lam": "deconvolution sparsity weight (default 1e-3 x max|x|)",
    "max_iter": "deconvolution iteration cap",
    "epochs": "training epochs",
    "lr": "Adam learning rate",
    "batch": "training batch size",
    "workers": "worker processes for compare",
    "frame": "frame index to plot",
    "n_coords": "coordinates sampled by gradcheck",
}
_ALIASES = {"inputs": "--input", "scenarios": "--scenario", "methods": "--method",
            "checkpoints": "--checkpoint"}


class UsageError(Exception):
    pass


def _coerce(key: str, raw: str):
    hints = typing.get_type_hints(RunConfig)
    hint = hints[key]
    raw = raw.strip()
    try:
        if typing.get_origin(hint) is tuple:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint == Optional[float]:
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str, origin: str = "config") -> Dict[str, object]:
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are usage errors."""
    out: Dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{n}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{origin}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, val)
    return out


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(val)
        elif val is None:
            val = "none"
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in CONFIG_KEYS:
        names = [f"--{key}"] + ([_ALIASES[key]] if key in _ALIASES else [])
        default = getattr(RunConfig(), key)
        shown = ",".join(default) if isinstance(default, tuple) else default
        common.add_argument(*names, dest=key, default=argparse.SUPPRESS, metavar="VALUE",
                            help=f"{_HELP[key]} (default: {shown})")

    parser = argparse.ArgumentParser(prog="edasplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("synth", "write synthetic frames and their ground truth as CSV"),
            ("decompose", "write per-frame decomposition CSVs"),
            ("features", "print per-frame features as CSV"),
            ("compare", "run methods, write tables.txt, report.csv and per-frame CSVs"),
            ("train", "train a Feel Transformer and save a checkpoint"),
            ("gradcheck", "compare backprop with finite differences at toy scale"),
            ("plot", "write a two-panel SVG of one frame")):
        sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: Dict[str, object] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for key in CONFIG_KEYS:
        if hasattr(args, key):
            values[key] = _coerce(key, getattr(args, key))
    return RunConfig(**values)


# -- subcommands -------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    if not cfg.scenarios:
        raise ConfigurationError("synth needs --scenario")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in cfg.scenarios:
        pairs = scenario_frames(name, cfg.seed)
        samples = np.concatenate([fr.samples for fr, _ in pairs])
        truths = [g for _, g in pairs]
        write_session(out / f"{name}.csv", samples)
        write_truth(out / f"{name}_truth.csv", truths)
        write_events(out / f"{name}_events.csv", truths)
        print(f"{name}: {len(pairs)} frame(s) -> {out / (name + '.csv')}")
    return 0


def _frames(cfg: RunConfig):
    sources, _ = collect_frames(cfg)
    return sources


def cmd_decompose(cfg: RunConfig) -> int:
    cfg.validate()
    sources = _frames(cfg)
    results = decompose_all(cfg, [s.frame for s in sources])
    out = Path(cfg.out)
    failed = 0
    for src, frs in zip(sources, results):
        for r in frs:
            if not r.ok:
                failed += 1
                print(f"frame {src.frame.index} {r.method}: {r.error}", file=sys.stderr)
                continue
            ddir = out / "decompositions" / r.method
            ddir.mkdir(parents=True, exist_ok=True)
            write_decomposition(ddir / f"frame_{src.frame.index:04d}.csv", src.frame,
                                r.decomposition, [p.index for p in r.features.peaks])
    print(f"{len(sources)} frame(s) x {len(cfg.methods)} method(s) -> {out / 'decompositions'}")
    return 1 if failed else 0


def cmd_features(cfg: RunConfig) -> int:
    cfg.validate()
    sources = _frames(cfg)
    results = decompose_all(cfg, [s.frame for s in sources])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["frame", "method", "slope", "slope_class", "peak_count", "amplitudes",
                "phasic_range"])
    failed = 0
    for src, frs in zip(sources, results):
        for r in frs:
            if not r.ok:
                failed += 1
                w.writerow([src.frame.index, r.method, "", "failed", "", "", ""])
                continue
            f = r.features
            w.writerow([src.frame.index, r.method, repr(f.slope), f.slope_class.label,
                        f.peak_count, ";".join(repr(a) for a in f.amplitudes),
                        repr(f.phasic_range)])
    return 1 if failed else 0


def cmd_compare(cfg: RunConfig) -> int:
    outcome = run_compare(cfg)
    print(f"{outcome.frames} frame(s), {outcome.failures} failure(s) -> {outcome.out_dir}")
    return outcome.exit_code


def cmd_train(cfg: RunConfig) -> int:
    cfg.validate(need_methods=False)
    methods = cfg.methods or ("feel-1",)
    bad = [m for m in methods if m not in POOL_KERNELS]
    if bad:
        raise ConfigurationError(f"train only applies to {', '.join(POOL_KERNELS)}, got {bad}")
    frames = [s.frame for s in _frames(cfg)]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch=cfg.batch, seed=cfg.seed)
    for m in methods:
        arch = ArchConfig(pool_kernel=POOL_KERNELS[m])
        params, curve = train(frames, tcfg, arch,
                              progress=lambda e, l: log.info("%s epoch %d loss %.6f", m, e, l))
        save_checkpoint(params, out / f"{m}.ckpt")
        with open(out / f"{m}_loss.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            w.writerows([i, repr(v)] for i, v in enumerate(curve))
        final = curve[-1] if curve else float("nan")
        print(f"{m}: {len(frames)} frame(s), {len(curve)} epoch(s), final loss {final:.6g} "
              f"-> {out / (m + '.ckpt')}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    res = gradcheck(seed=cfg.seed, n_coords=cfg.n_coords)
    status = "ok" if res.max_rel_error < GRADCHECK_TOL else "FAILED"
    print(f"max relative error {res.max_rel_error:.3e} over {res.n_coords} coordinates "
          f"(worst {res.worst[0]}[{res.worst[1]}]) {status}")
    return 0 if res.max_rel_error < GRADCHECK_TOL else 1


def cmd_plot(cfg: RunConfig) -> int:
    cfg.validate()
    sources = _frames(cfg)
    if not 0 <= cfg.frame < len(sources):
        raise ConfigurationError(f"frame {cfg.frame} out of range (0-{len(sources) - 1})")
    src = sources[cfg.frame]
    method = cfg.methods[0]
    (r,) = decompose_all(replace(cfg, methods=(method,), workers=1), [src.frame])[0]
    if not r.ok:
        print(f"frame {cfg.frame} {method}: {r.error}", file=sys.stderr)
        return 1
    out = Path(cfg.out)
    if out.suffix.lower() != ".svg":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"frame_{cfg.frame:04d}_{method}.svg"
    emit_plot(src.frame, r.decomposition, r.features.peaks, out,
              title=f"frame {cfg.frame} ({src.source}), {method}")
    print(f"{len(r.features.peaks)} peak(s) -> {out}")
    return 0


COMMANDS = {"synth": cmd_synth, "decompose": cmd_decompose, "features": cmd_features,
            "compare": cmd_compare, "train": cmd_train, "gradcheck": cmd_gradcheck,
            "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"edasplit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (EdaError, OSError) as exc:
        print(f"edasplit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
