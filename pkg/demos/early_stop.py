"""How much accuracy is left if inference stops early?

A network trained for T steps keeps one set of normalization statistics
per step, so it can be run for any shorter horizon: the readout is just
the average over the steps actually taken. This trains the tiny network at
T=8, then evaluates it at every horizon from 1 to 8 and checks that the
horizon-k logits are the k-step prefix of the full run.

    python3 demos/early_stop.py [--epochs 4]
"""

import argparse

import numpy as np

from spikegrid.data import synth_split
from spikegrid.network import NetworkSpec, build_sresnet, inference_early_stop
from spikegrid.train import TrainConfig, evaluate, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    T = 8
    train, ev = synth_split(classes=10, train_per_class=100, eval_per_class=20, seed=args.seed)
    net = build_sresnet(NetworkSpec(n=1, base_filters=8, T_train=T, mode="S2S", seed=args.seed))
    report = fit(net, train, ev, TrainConfig(lr=0.05, epochs=args.epochs, batch=25, T=T, milestones=(),
                                             seed=args.seed))
    prep = report.preprocessor

    print("steps  eval accuracy")
    for k in range(1, T + 1):
        print(f"{k:5d}  {evaluate(net, ev, prep, k, seed=args.seed).accuracy:.3f}")

    x = prep(ev.images[:20], np.random.default_rng(args.seed))
    _, rec = net.eval().forward(x, T, record_spikes=True)
    running = rec.outputs[0]
    for k in range(1, T + 1):
        if k > 1:
            running = running + rec.outputs[k - 1]
        same = inference_early_stop(net, x, k).data.tobytes() == (running / float(k)).tobytes()
        print(f"horizon {k}: prefix readout identical = {same}")


if __name__ == "__main__":
    main()
