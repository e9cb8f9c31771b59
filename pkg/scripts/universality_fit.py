"""Fit a random trigonometric target with one wave layer and a linear readout."""
import argparse

from wavefield.training import default_spec, run_universality_fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--train-steps", type=int, default=10000)
    args = ap.parse_args()
    for seed in args.seeds:
        rep = run_universality_fit(default_spec("universality-fit", seed, train_steps=args.train_steps))
        print(f"seed {seed}: sup error {rep.sup_error:.4f}  mse {rep.final_loss:.3e}")


if __name__ == "__main__":
    main()
