"""Informative vs all-zero image features, same budget, several seeds.

    python3 scripts/feature_ablation.py --seeds 0 1 2
"""

import argparse
import logging

from pmce.config import load_config
from pmce.experiments import feature_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--stage1-steps", type=int, default=1000)
    ap.add_argument("--stage2-steps", type=int, default=1000)
    ap.add_argument("--clips", type=int, default=4)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(overrides=dict(kv.split("=", 1) for kv in args.set))
    rows = feature_ablation(cfg, args.seeds, args.stage1_steps, args.stage2_steps, args.clips)
    print(f"{'seed':>4}  {'PVE features':>12}  {'PVE zeros':>10}  holds")
    for r in rows:
        print(f"{r.seed:>4}  {r.pve_features:12.5f}  {r.pve_zero:10.5f}  {r.holds}")


if __name__ == "__main__":
    main()
