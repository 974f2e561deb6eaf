"""Command-line entry point.

Every failure prints exactly one line ``error: <code>: <message>`` on stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .body import build_body, write_obj
from .config import TrainConfig, load_config
from .data import DatasetError, generate_dataset, read_dataset, windows, write_dataset

log = logging.getLogger("pmce")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(2)


def _common(p: argparse.ArgumentParser, stage: bool = False) -> None:
    p.add_argument("--config", help="key = value file")
    p.add_argument("--preset", choices=["toy", "full"], default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable)")
    p.add_argument("--seed", type=int)
    if stage:
        p.add_argument("--stage", type=int, choices=[1, 2], default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmce", description="Pose-and-mesh co-evolution toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--clips", type=int, default=4)
    p.add_argument("--out", default="data")

    p = sub.add_parser("train", help="run stage 1 or stage 2")
    _common(p, stage=True)
    p.add_argument("--data", help="dataset directory (defaults to the config's dataset)")
    p.add_argument("--out", help="checkpoint to write (defaults to the config's checkpoint)")
    p.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    p.add_argument("--resume", help="checkpoint of an interrupted run of the same stage")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report path prefix; writes .txt and .json")

    p = sub.add_parser("export-obj", help="predicted (or template) mesh as OBJ")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--clip", type=int, default=0)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--template", action="store_true", help="export the rest template instead")
    p.add_argument("--gt", action="store_true", help="export the ground-truth mesh instead")
    p.add_argument("--preset", choices=["toy", "full"], default="toy")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-attn", help="decoder attention maps as CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--clip", type=int, default=0)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--no-model", action="store_true", help="skip the full-model case")
    return parser


def _config(args, stage: int = 1) -> TrainConfig:
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise CliError("bad-override", f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    for name in ("seed", "steps", "lr"):
        value = getattr(args, name, None)
        if value is not None:
            pairs[name] = str(value)
    try:
        return load_config(args.config, pairs, args.preset, stage)
    except (KeyError, ValueError) as exc:
        raise CliError("bad-config", str(exc).strip("'\"")) from exc
    except FileNotFoundError as exc:
        raise CliError("missing-config", f"missing config file {args.config}") from exc


def _load_ckpt(path):
    if not path:
        raise CliError("missing-checkpoint", "missing checkpoint (pass --checkpoint)")
    try:
        return ckpt_io.load(path)
    except FileNotFoundError as exc:
        raise CliError("missing-checkpoint", f"missing checkpoint {path}") from exc


def _load_data(path):
    if not path:
        raise CliError("missing-dataset", "missing dataset (pass --data)")
    if not Path(path).exists():
        raise CliError("missing-dataset", f"missing dataset {path}")
    clips, _ = read_dataset(path)
    return clips


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if args.clips < 1:
        raise CliError("bad-argument", "--clips must be positive")
    clips = generate_dataset(cfg.synth_config(), cfg.seed, args.clips)
    out = write_dataset(args.out, clips, cfg.synth_config(), cfg.seed)
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import train_stage1, train_stage2

    cfg = _config(args, args.stage)
    data = args.data or cfg.dataset
    out = args.out or cfg.checkpoint
    if not out:
        raise CliError("missing-output", "no checkpoint path (pass --out)")
    clips = _load_data(data)
    resume = _load_ckpt(args.resume) if args.resume else None
    if args.stage == 1:
        result = train_stage1(cfg, clips, resume=resume)
    else:
        stage1 = _load_ckpt(args.init) if args.init else None
        if stage1 is None and resume is None:
            log.warning("stage 2 without --init: pose stream starts from scratch")
        result = train_stage2(cfg, clips, stage1, resume=resume)
    ckpt_io.save(result.checkpoint, out)
    summary = {"stage": args.stage, "steps": cfg.steps, "first_loss": result.losses[0] if result.losses else None,
               "final_loss": result.losses[-1] if result.losses else None,
               "seconds": round(result.seconds, 3), "checkpoint": str(out)}
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate, model_from_checkpoint

    ckpt = _load_ckpt(args.checkpoint)
    clips = _load_data(args.data)
    model, cfg = model_from_checkpoint(ckpt)
    per_clip, total = evaluate(model, clips, cfg)
    for i, r in enumerate(per_clip):
        print(f"clip {i} " + " ".join(f"{k}={v:.6g}" for k, v in r.as_dict().items()))
    print("all " + " ".join(f"{k}={v:.6g}" for k, v in total.as_dict().items()))
    if args.out:
        total.save(args.out)
        Path(args.out).with_suffix(".clips.json").write_text(
            json.dumps([r.as_dict() for r in per_clip], indent=2) + "\n")
    return 0


def _window(clips, cfg, clip: int, window: int):
    if not 0 <= clip < len(clips):
        raise CliError("bad-argument", f"clip {clip} out of range (dataset has {len(clips)})")
    b = windows(clips[clip], cfg.num_frames, cfg.zero_features)
    if not 0 <= window < len(b):
        raise CliError("bad-argument", f"window {window} out of range (clip has {len(b)})")
    return b.select([window])


def cmd_export_obj(args) -> int:
    from .train import model_from_checkpoint

    if args.template:
        body = build_body(load_config(preset_name=args.preset).body_config())
        write_obj(args.out, body.template_vertices, body.faces)
    elif args.gt:
        clips = _load_data(args.data)
        cfg = load_config(preset_name=args.preset)
        b = _window(clips, cfg, args.clip, args.window)
        write_obj(args.out, b.mesh_gt[0], build_body(cfg.body_config()).faces)
    else:
        ckpt = _load_ckpt(args.checkpoint)
        model, cfg = model_from_checkpoint(ckpt)
        b = _window(_load_data(args.data), cfg, args.clip, args.window)
        with ad.no_grad():
            mesh = model(b.pose_2d, b.features).mesh.data[0]
        write_obj(args.out, mesh, model.body.faces)
    print(f"wrote {args.out}")
    return 0


def cmd_export_attn(args) -> int:
    from .train import model_from_checkpoint

    ckpt = _load_ckpt(args.checkpoint)
    model, cfg = model_from_checkpoint(ckpt)
    b = _window(_load_data(args.data), cfg, args.clip, args.window)
    for block in model.decoder.blocks:
        block.set_recording(True)
    with ad.no_grad():
        model(b.pose_2d, b.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for i, block in enumerate(model.decoder.blocks):
        for name, weights in block.attention_maps().items():
            w = weights[0]
            with open(out / f"block{i}_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["query"] + [f"k{j}" for j in range(w.shape[1])])
                for q, row in enumerate(w):
                    writer.writerow([q] + [repr(float(x)) for x in row])
            written += 1
        block.set_recording(False)
    print(f"wrote {written} attention maps to {out}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_suite

    cfg = _config(args)
    results = run_suite(cfg.seed, cfg, include_model=not args.no_model)
    worst = max(r.max_rel_error for r in results)
    for r in results:
        status = "ok" if r.max_rel_error < args.tolerance else "FAIL"
        print(f"{r.name:20s} max_rel_error={r.max_rel_error:.3e} entries={r.checked} "
              f"seconds={r.seconds:.2f} {status}")
    print(f"max relative error {worst:.3e}")
    if worst >= args.tolerance:
        raise CliError("grad-check-failed", f"max relative error {worst:.3e} >= {args.tolerance:g}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-obj": cmd_export_obj,
    "export-attn": cmd_export_attn,
    "grad-check": cmd_grad_check,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        code, message = exc.code, str(exc)
    except (DatasetError, ckpt_io.CheckpointError) as exc:
        code, message = type(exc).__name__, str(exc)
    except ad.NonFiniteError as exc:
        code, message = "non-finite", str(exc)
    except (ValueError, KeyError, OSError) as exc:
        code, message = type(exc).__name__, str(exc)
    sys.stderr.write(f"error: {code}: {' '.join(message.split())}\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
