"""Does the best leak depend on how many steps the network runs for?

Train the tiny S2S network twice on the synthetic gratings at T=4: once
with the leak fixed at 0.874 and once with a learned leak per layer
(initialised at 0.874). Print the learned leaks and both accuracies, then
evaluate each trained net at shorter horizons.

Nothing here is asserted. At this scale the learned leak may drift either
way; the interesting part is the direction and how the early-stopped
accuracy changes with it.

    python3 demos/leak_timesteps.py [--epochs 10] [--seed 0]
"""

import argparse
import time

import numpy as np

from spikegrid.data import synth_split
from spikegrid.network import NetworkSpec, build_sresnet
from spikegrid.neuron import LifParams
from spikegrid.train import TrainConfig, evaluate, fit

FIXED_LEAK = 0.874


def train_one(leak_mode, train, ev, epochs, seed, log=print):
    spec = NetworkSpec(n=1, base_filters=8, T_train=4, mode="S2S", seed=seed,
                       lif=LifParams(leak=FIXED_LEAK, leak_mode=leak_mode))
    net = build_sresnet(spec)
    cfg = TrainConfig(lr=0.05, epochs=epochs, batch=25, T=4, milestones=(), seed=seed)
    t0 = time.perf_counter()
    report = fit(net, train, ev, cfg)
    horizons = {T: evaluate(net, ev, report.preprocessor, T, seed=seed).accuracy for T in (1, 2, 3, 4)}
    result = {
        "leaks": list(net.leak_values().values()),
        "train_accuracy": report.train_accuracy,
        "eval_accuracy": report.test_accuracy,
        "by_horizon": horizons,
        "seconds": time.perf_counter() - t0,
    }
    log(f"{leak_mode:>7s} leak: train {result['train_accuracy']:.3f}  eval {result['eval_accuracy']:.3f}  "
        f"({result['seconds']:.0f} s)")
    return result


def experiment(epochs=10, seed=0, log=print):
    train, ev = synth_split(classes=10, train_per_class=100, eval_per_class=20, seed=seed)
    return {mode: train_one(mode, train, ev, epochs, seed, log) for mode in ("fixed", "learned")}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = experiment(args.epochs, args.seed)

    print("\nlearned leak per layer (start 0.874):")
    for i, lam in enumerate(res["learned"]["leaks"], start=1):
        print(f"  conv{i}: {lam:.4f}")
    print(f"  mean: {np.mean(res['learned']['leaks']):.4f}")

    print("\neval accuracy by inference horizon")
    print("  T   fixed  learned")
    for T in (1, 2, 3, 4):
        print(f"  {T}   {res['fixed']['by_horizon'][T]:.3f}  {res['learned']['by_horizon'][T]:.3f}")


if __name__ == "__main__":
    main()
