"""Three ways to wire a spiking shortcut, side by side.

S2M adds the incoming spikes to the membrane before the block's last
threshold, S2S adds them to the block's output spikes, and V2V carries a
membrane-level signal around the block. This script trains the same tiny
network with each wiring on the synthetic gratings and prints, per mode,
the accuracy plus how much activity each layer produces: the share of
neurons that are nonzero (fraction) and the mean output value (volume).
In S2S the output of an identity block is a sum of spikes, so its volume
can exceed its fraction; after a 1x1 projection the shortcut carries a
signed current instead, and the volume can drop below it.

    python3 demos/residual_modes.py [--epochs 5] [--out residual-modes]
"""

import argparse
import os

from spikegrid.analyze import activity_map, export_csv
from spikegrid.data import synth_split
from spikegrid.network import NetworkSpec, build_sresnet
from spikegrid.train import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="residual-modes")
    args = ap.parse_args()

    train, ev = synth_split(classes=10, train_per_class=100, eval_per_class=20, seed=args.seed)
    cfg = TrainConfig(lr=0.05, epochs=args.epochs, batch=25, T=4, milestones=(), seed=args.seed)
    for mode in ("S2M", "S2S", "V2V"):
        net = build_sresnet(NetworkSpec(n=1, base_filters=8, T_train=4, mode=mode, seed=args.seed))
        report = fit(net, train, ev, cfg)
        rec = activity_map(net, ev, preprocessor=report.preprocessor, seed=args.seed)
        export_csv(rec.fractions, os.path.join(args.out, f"{mode}-activity.csv"), rec.layer_names)
        export_csv(rec.volume, os.path.join(args.out, f"{mode}-volume.csv"), rec.layer_names)
        print(f"\n{mode}: final loss {report.losses[-1]:.3f}, eval accuracy {report.test_accuracy:.3f}")
        print("  layer   fraction  volume")
        for name, f, v in zip(rec.layer_names, rec.fractions.mean(axis=1), rec.volume.mean(axis=1)):
            print(f"  {name:<6s}  {f:8.3f}  {v:6.3f}")
    print(f"\nper-step maps written under {args.out}/")


if __name__ == "__main__":
    main()
