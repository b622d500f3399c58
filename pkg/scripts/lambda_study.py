"""Accuracy and iterate behaviour across regularization strengths."""
import argparse
import json
from pathlib import Path

from mfpmp.control import BracketError, ShootingConfig, contraction_diagnostics, shooting
from mfpmp.measures import GaussianSpec, sample_initial


def run(task, lam, iters, n, seed, bracket):
    spec = GaussianSpec.bimodal(1) if task == "bimodal" else GaussianSpec.unimodal(1)
    mu = sample_initial(spec, n, seed)
    try:
        rep = shooting(ShootingConfig(lam=lam, outer_iters=iters, bracket=bracket), mu, spec)
    except BracketError as exc:
        return {"task": task, "lam": lam, "error": str(exc)}
    diag = contraction_diagnostics(rep)
    return {"task": task, "lam": lam, "accuracy": rep.accuracies[-1], "eps": rep.eps,
            "max_ratio_after_2": diag.max_ratio_after_2, "oscillating": diag.oscillating,
            "root_multiplicity": max(rep.multiplicity)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+", default=[10.0, 0.1, 1e-3, 1e-5])
    ap.add_argument("--tasks", nargs="+", default=["bimodal", "unimodal"])
    ap.add_argument("--iters", type=int, default=15)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bracket", type=float, default=10.0)
    ap.add_argument("--out", default="runs/lambda_study.json")
    args = ap.parse_args()
    rows = [run(t, lam, args.iters, args.n, args.seed, args.bracket)
            for t in args.tasks for lam in args.lams]
    for r in rows:
        if "error" in r:
            print(f"{r['task']:9s} lam={r['lam']:g}: {r['error']}")
        else:
            print(f"{r['task']:9s} lam={r['lam']:g}: accuracy {r['accuracy']:.3f}, "
                  f"max ratio {r['max_ratio_after_2']:.3f}, oscillating={r['oscillating']}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
