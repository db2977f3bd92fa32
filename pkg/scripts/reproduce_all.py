"""Run the full experiment suite end to end into ./runs/.

Pretrains the toy model on the clean variants of the four-domain benchmark,
then runs the zero-shot baseline, one- and five-example adaptation, the
augmentation-count ablation, and the cross-domain grid. Everything derives
from --seed; rerunning with the same seed reproduces every report byte.
"""

import argparse
import os
import subprocess
import sys


def sh(args):
    print("+", " ".join(args))
    subprocess.run(args, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--dim", type=int, default=64,
                        help="embedding width (64 keeps the suite fast)")
    parser.add_argument("--hidden", type=int, default=64)
    args = parser.parse_args()

    base = [sys.executable, "-m", "ttada"]
    seed = ["--seed", str(args.seed)]
    weights = os.path.join(args.out, "weights.ttw")

    sh(base + ["pretrain", "--out", args.out, "--weights", weights,
               "--dim", str(args.dim), "--hidden", str(args.hidden)] + seed)
    sh(base + ["zeroshot", "--out", args.out, "--weights", weights] + seed)
    for k in (1, 5):
        for domain in ("tones", "chirps", "noisebursts", "am-tones"):
            out_k = os.path.join(args.out, f"adapt_k{k}", domain)
            sh(base + ["adapt", "--out", out_k, "--weights", weights,
                       "--domain", domain, "--k", str(k)] + seed)
    sh(base + ["ablate", "--out", os.path.join(args.out, "ablation"),
               "--weights", weights] + seed)
    sh(base + ["grid", "--out", os.path.join(args.out, "grid"),
               "--weights", weights] + seed)
    sh(base + ["gradcheck"] + seed)
    print(f"\nall reports under {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
