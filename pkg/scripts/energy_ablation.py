"""WECS of velocity Verlet and explicit Euler at increasing rollout lengths."""
import argparse

from wavefield.spectral import stability_bound
from wavefield.training import wecs_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--dt-fraction", type=float, default=0.5, help="fraction of the stability bound")
    ap.add_argument("--mode", type=int, default=1)
    args = ap.parse_args()
    dt = args.dt_fraction * stability_bound(1.0)
    print(f"dt = {dt:.6f}  (bound {stability_bound(1.0):.6f})")
    print(f"{'steps':>6}  {'verlet':>12}  {'euler':>12}")
    for steps in (1, 10, 100, 1000):
        v, e = wecs_pair(args.n, dt, steps, args.mode)
        print(f"{steps:>6}  {v:>12.8f}  {e:>12.4g}")


if __name__ == "__main__":
    main()
