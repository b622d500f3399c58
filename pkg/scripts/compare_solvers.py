"""Shooting with each forward backend from the same sample; thin wrapper over the CLI."""
import argparse
import json
import tempfile

from mfpmp.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--iters", type=int, default=15)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--mc-reps", type=int, default=20)
    args = ap.parse_args()
    cfg = {"outer_iters": args.iters, "compare_repeats": args.repeats, "mc_reps": args.mc_reps}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cfg, fh)
    raise SystemExit(cli_main(["compare", "--config", fh.name, "--out", args.out, "-v"]))


if __name__ == "__main__":
    main()
