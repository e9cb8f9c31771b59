"""Motif detection with a 2-block wave model against a no-propagation control."""
import argparse
import logging

from wavefield.training import default_spec, run_pattern_detect


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    rep = run_pattern_detect(default_spec("pattern-detect", args.seed, train_steps=args.train_steps))
    print(f"wave model held-out accuracy   {rep.wave_accuracy:.3f}")
    print(f"steps=0 control accuracy       {rep.control_accuracy:.3f}")


if __name__ == "__main__":
    main()
