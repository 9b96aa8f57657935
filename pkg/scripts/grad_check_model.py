#!/usr/bin/env python3
"""Central-difference gradient check of a small GinAR in float64.

    python3 scripts/grad_check_model.py --instances 5 --vars 4 --layers 2
"""

import argparse
import time

import numpy as np

from ginar import autodiff as ad
from ginar.autodiff import Tensor
from ginar.model import GinAR, ModelConfig


def check(seed, n, layers, hidden, history):
    cfg = ModelConfig(n_vars=n, c_in=1, hidden=hidden, embed=2, n_layers=layers, history=history, horizon=2,
                      decoder_hidden=5)
    rng = np.random.default_rng(seed)
    model = GinAR(cfg, rng.uniform(size=(n, n)), seed=seed)
    for p in model.parameters().values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    x = rng.normal(size=(2, n, history, 1))
    y = Tensor(rng.normal(size=(2, n, 2)))
    missing = sorted(rng.choice(n, size=int(rng.integers(0, n - 1)), replace=False).tolist())
    return ad.grad_check(lambda: ad.mean(ad.square(model(x, missing) - y)), model.parameters())


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--vars", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--history", type=int, default=3)
    args = p.parse_args()
    for seed in range(args.instances):
        t0 = time.perf_counter()
        rep = check(seed, args.vars, args.layers, args.hidden, args.history)
        name, err = max(rep.max_rel_error.items(), key=lambda kv: kv[1])
        status = "ok" if rep.passed else "FAIL"
        print(f"seed {seed}: {status}  worst {err:.2e} ({name})  {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
