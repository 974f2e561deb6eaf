"""Overfit both stages on a few synthetic clips and report training-set metrics.

    python3 scripts/overfit.py --clips 4 --out runs/overfit
"""

import argparse
import json
import logging
from pathlib import Path

from pmce import checkpoint as ckpt_io
from pmce.config import load_config
from pmce.data import generate_dataset
from pmce.experiments import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clips", type=int, default=4)
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", help="directory for checkpoints and the summary")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, dict(kv.split("=", 1) for kv in args.set))
    clips = generate_dataset(cfg.synth_config(), cfg.seed, args.clips)
    run = overfit(cfg, clips)
    summary = {
        "stage1_final_loss": run.stage1.losses[-1],
        "stage1_seconds": round(run.stage1.seconds, 1),
        "stage2_first_loss": run.stage2.losses[0],
        "stage2_final_loss": run.stage2.losses[-1],
        "stage2_seconds": round(run.stage2.seconds, 1),
        "mpjpe": run.mpjpe,
        "pve": run.pve,
        "mpjpe_over_height": run.mpjpe / run.body_height,
    }
    print(json.dumps(summary, indent=2))
    if args.out:
        out = Path(args.out)
        ckpt_io.save(run.stage1.checkpoint, out / "stage1.ckpt")
        ckpt_io.save(run.stage2.checkpoint, out / "stage2.ckpt")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
