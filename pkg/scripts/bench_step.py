"""Seconds per optimizer step for both stages (best of several repeats).

The VM timings are noisy; the minimum over repeats is the stable number.
"""

import argparse
import time

from pmce import autodiff as ad
from pmce._alloc import keep_heap_memory
from pmce.config import load_config
from pmce.data import generate_dataset, make_batch
from pmce.optim import Adam
from pmce.train import build_model, stage1_loss, stage2_loss


def bench(step_fn, repeats, inner=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            step_fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=8)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    keep_heap_memory()
    cfg = load_config(overrides=dict(kv.split("=", 1) for kv in args.set))
    b = make_batch(generate_dataset(cfg.synth_config(), cfg.seed, 4), cfg.num_frames)
    model = build_model(cfg)

    for name, params, loss in (
        ("stage1", model.pose_parameters(), lambda: stage1_loss(model, b)),
        ("stage2", model.parameters(), lambda: stage2_loss(model, b, cfg)[0]),
    ):
        opt = Adam(params)

        def step():
            ad.backward(loss())
            opt.step()
            opt.zero_grad()

        print(f"{name}: {bench(step, args.repeats):.4f} s/step on {len(b)} windows")


if __name__ == "__main__":
    main()
