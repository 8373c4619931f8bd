"""Benchmark the hot conv kernels: numba-compiled loops vs the pure-numpy
fallback, plus one full branch-training step through each path.

Run both paths from one invocation; the numpy path is loaded in a
subprocess with MASKEDIT_NUMBA=0 so the import-time dispatch stays honest.

    python benchmarks/bench_kernels.py [--iterations 50]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SHAPES = [
    ("fwd 8x3x24x24 -> 16ch", (8, 3, 24, 24), 16),
    ("fwd 8x16x24x24 -> 16ch", (8, 16, 24, 24), 16),
    ("fwd 1x16x64x64 -> 16ch", (1, 16, 64, 64), 16),
]


def bench_kernels(iterations: int) -> dict:
    from maskedit.accel import USING_NUMBA
    from maskedit.kernels import conv3x3_backward, conv3x3_forward

    rng = np.random.default_rng(0)
    rows = {}
    for name, xshape, cout in SHAPES:
        x = rng.standard_normal(xshape)
        w = rng.standard_normal((cout, xshape[1], 3, 3))
        b = rng.standard_normal(cout)
        out = conv3x3_forward(x, w, b)  # warmup / JIT
        gout = rng.standard_normal(out.shape)
        conv3x3_backward(x, w, gout)

        start = time.perf_counter()
        for _ in range(iterations):
            conv3x3_forward(x, w, b)
        fwd = (time.perf_counter() - start) / iterations

        start = time.perf_counter()
        for _ in range(iterations):
            conv3x3_backward(x, w, gout)
        bwd = (time.perf_counter() - start) / iterations
        rows[name] = {"forward_s": fwd, "backward_s": bwd}

    rows["train step (branch, 24px, batch 8)"] = {
        "forward_s": _train_step_time(iterations=max(3, iterations // 10)),
        "backward_s": None,
    }
    return {"using_numba": USING_NUMBA, "rows": rows}


def _train_step_time(iterations: int) -> float:
    from maskedit.branch import BranchNetwork, InjectionConfig, assemble_branch_input, branch_loss_and_grads
    from maskedit.denoiser import ConvDenoiser, StackSpec
    from maskedit.diffusion import forward_noise
    from maskedit.embedding import CaptionEmbedder
    from maskedit.masks import downsample_mask
    from maskedit.scenes import synth_dataset
    from maskedit.schedule import make_schedule
    from maskedit.training import make_training_pair

    sched = make_schedule(1000, 1e-4, 2e-2)
    embedder = CaptionEmbedder(32)
    base = ConvDenoiser(StackSpec(3, (16, 16, 3), time_dim=16, cond_dim=32), seed=0)
    branch = BranchNetwork.for_base(base, seed=1)
    scenes = synth_dataset(np.random.default_rng(0), 8, size=24)
    rng = np.random.default_rng(1)
    mix = {"random_brush": 0.5, "segmentation_like": 0.5}
    pairs = [make_training_pair(scenes[i % len(scenes)], rng, mix) for i in range(8)]
    z0 = np.stack([p.image for p in pairs])
    cembs = np.stack([embedder.embed(p.caption_target) for p in pairs])
    tvec = rng.integers(1, 1001, size=8)
    eps = rng.standard_normal(z0.shape)
    z_t = np.stack([forward_noise(z0[j], eps[j], int(tvec[j]), sched) for j in range(8)])
    branch_in = np.stack([
        assemble_branch_input(z_t[j], pairs[j].masked_image,
                              downsample_mask(pairs[j].mask, 24, 24))
        for j in range(8)
    ])
    icfg = InjectionConfig()
    branch_loss_and_grads(base, branch, icfg, z_t, tvec, cembs, branch_in, eps)  # warmup
    start = time.perf_counter()
    for _ in range(iterations):
        branch_loss_and_grads(base, branch, icfg, z_t, tvec, cembs, branch_in, eps)
    return (time.perf_counter() - start) / iterations


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=50)
    parser.add_argument("--emit-json", action="store_true",
                        help="print raw results as JSON (used by the subprocess)")
    args = parser.parse_args()

    if args.emit_json:
        print(json.dumps(bench_kernels(args.iterations)))
        return

    here = bench_kernels(args.iterations)
    env = dict(os.environ, MASKEDIT_NUMBA="0" if here["using_numba"] else "1")
    other = json.loads(subprocess.run(
        [sys.executable, __file__, "--iterations", str(args.iterations),
         "--emit-json"],
        env=env, capture_output=True, text=True, check=True).stdout)

    numba_res = here if here["using_numba"] else other
    numpy_res = other if here["using_numba"] else here
    if numba_res["using_numba"] == numpy_res["using_numba"]:
        print("numba unavailable; showing the numpy path only")
        numba_res = None

    print(f"{'kernel':38s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, np_row in numpy_res["rows"].items():
        for key in ("forward_s", "backward_s"):
            if np_row[key] is None:
                continue
            label = f"{name} [{key[:-2]}]"
            np_t = np_row[key]
            if numba_res:
                nb_t = numba_res["rows"][name][key]
                print(f"{label:38s} {np_t * 1e3:10.3f}ms {nb_t * 1e3:10.3f}ms "
                      f"{np_t / nb_t:8.2f}x")
            else:
                print(f"{label:38s} {np_t * 1e3:10.3f}ms {'-':>12s} {'-':>9s}")


if __name__ == "__main__":
    main()
