"""Write the loss/gradient curves of the two negative-label losses to CSV."""

import argparse

from negrec.objective import boundedness_sweep, write_sweep_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=61)
    ap.add_argument("--items", type=int, default=1000)
    ap.add_argument("--out", default="boundedness.csv")
    args = ap.parse_args()
    rows = boundedness_sweep(args.points, args.items)
    write_sweep_csv(rows, args.out)
    last = rows[0]
    print(f"p={last['p']:.3g} not_to_recommend={last['not_to_recommend_loss']:.3g} "
          f"negative_weight_ce={last['negative_weight_ce_loss']:.3g} -> {args.out}")


if __name__ == "__main__":
    main()
