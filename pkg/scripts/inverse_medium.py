"""Recover a piecewise-constant wave speed from propagated fields."""
import argparse

import numpy as np

from wavefield.training import default_spec, piecewise_medium, run_inverse_medium


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-2)
    args = ap.parse_args()
    spec = default_spec("inverse-medium", args.seed, train_steps=args.train_steps, lr=args.lr, log_every=250)
    rep = run_inverse_medium(spec)
    for step, loss, err in rep.curve:
        print(f"step {step:>5}  loss {loss:.3e}  c error {err:.3e}")
    truth = piecewise_medium(spec.n)
    print(f"recovered c (every 8th point): {np.round(rep.c[::8], 4)}")
    print(f"true c      (every 8th point): {truth.c[::8]}")
    print(f"relative L2 error {rep.c_rel_error:.3e}, energy-weighted gamma error {rep.gamma_weighted_error:.3e}")


if __name__ == "__main__":
    main()
