"""Sweep the time step across the Verlet stability bound with c = 1."""
import argparse

from wavefield.spectral import stability_bound
from wavefield.training import default_spec, run_dt_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, nargs="+", default=[0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.62, 0.65, 0.7, 1.0])
    ap.add_argument("--horizon", type=float, default=20.0)
    ap.add_argument("--n", type=int, default=64)
    args = ap.parse_args()
    spec = default_spec("dt-sweep", n=args.n, dt_grid=tuple(sorted(args.dt)), extra={"horizon": args.horizon})
    print(f"stability bound 2/pi = {stability_bound(1.0):.4f}")
    print(f"{'dt':>6}  {'steps':>6}  {'mse':>10}  {'|wecs-1|':>10}  diverged")
    for r in run_dt_sweep(spec):
        print(f"{r.dt:>6.3f}  {r.steps:>6}  {r.mse:>10.3g}  {r.wecs_abs_err:>10.3g}  {r.diverged}")


if __name__ == "__main__":
    main()
