"""Empirical error, generalization error and accuracy against the training-set size."""
import argparse
from dataclasses import replace

from mfpmp.control import ShootingConfig
from mfpmp.cost import SweepConfig, double_descent_sweep, write_sweep
from mfpmp.measures import GaussianSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-values", type=int, nargs="+", default=[10, 25, 50, 100, 200])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--stop-tol", type=float, default=1e-6)
    ap.add_argument("--std", type=float, default=0.1)
    ap.add_argument("--independent", action="store_true",
                    help="fresh training and test sets per cell instead of nested ones")
    ap.add_argument("--out", default="runs/double_descent")
    args = ap.parse_args()
    cfg = SweepConfig(GaussianSpec.bimodal(1, std=args.std),
                      ShootingConfig(lam=0.1, outer_iters=args.iters, stop_tol=args.stop_tol))
    cfg = replace(cfg, nested=not args.independent)
    recs = double_descent_sweep(args.n_values, args.repeats, cfg)
    summary = write_sweep(recs, args.out)
    for r in recs:
        print(f"n={r.n:4d} emp {r.empirical_error:.4f}±{r.empirical_error_std:.4f} "
              f"gen {r.generalization_error:.4f}±{r.generalization_error_std:.4f} "
              f"acc {r.accuracy:.4f}±{r.accuracy_std:.4f}")
    for name, flag in summary["trends"].items():
        print(f"{name}: ok={flag['ok']} inversions={flag['inversions']}")


if __name__ == "__main__":
    main()
