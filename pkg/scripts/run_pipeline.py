"""End-to-end desk-scale run: corpus, logs, five trained variants, measurements, summary."""

import argparse
import dataclasses

from negrec.experiment import DEFAULT_SETUP, DeskSetup, run_pipeline
from negrec.train import Variant


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--setup", default=str(DEFAULT_SETUP), help="desk setup JSON")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--sims", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, help="override the world seed")
    ap.add_argument("--variants", nargs="*", default=[v.value for v in Variant])
    args = ap.parse_args()
    setup = DeskSetup.load(args.setup)
    if args.seed is not None:
        setup = dataclasses.replace(setup, world=dataclasses.replace(setup.world, seed=args.seed))
    summary = run_pipeline(setup, args.out, args.sims, args.workers, args.variants)
    print(summary.read_text(), end="")


if __name__ == "__main__":
    main()
