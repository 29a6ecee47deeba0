#!/usr/bin/env python3
"""Write benchmark CSVs into data/ in the layout data/manifest.toml expects.

Boston housing and Concrete strength come from the `rdatasets` package
(`pip install rdatasets`). Energy efficiency and Wine quality (red) are
converted from the original UCI files when their paths are given:

    python scripts/prepare_data.py --energy ENB2012_data.xlsx \
        --wine winequality-red.csv

Every output has a header row and the target as the last column.
"""

import argparse
from pathlib import Path

import pandas as pd

DATA = Path(__file__).resolve().parent.parent / "data"


def from_rdatasets(package, item):
    import rdatasets

    df = rdatasets.data(package, item)
    return df.drop(columns=[c for c in df.columns if c == "rownames"])


def boston():
    # target: median home value (medv)
    return from_rdatasets("MASS", "Boston")


def concrete():
    return from_rdatasets("modeldata", "concrete")


def energy(path):
    # Y1 (heating load) is the regression target; Y2 is dropped.
    df = pd.read_excel(path).dropna(how="all").dropna(axis=1, how="all")
    return df.drop(columns=["Y2"])


def wine(path):
    return pd.read_csv(path, sep=";")


def write(name, df):
    DATA.mkdir(exist_ok=True)
    out = DATA / f"{name}.csv"
    df.to_csv(out, index=False)
    print(f"{out}: {df.shape[0]} rows, {df.shape[1] - 1} features")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--energy", type=Path, help="UCI ENB2012_data.xlsx")
    ap.add_argument("--wine", type=Path, help="UCI winequality-red.csv")
    ap.add_argument("--skip-rdatasets", action="store_true")
    args = ap.parse_args()

    if not args.skip_rdatasets:
        write("boston", boston())
        write("concrete", concrete())
    if args.energy:
        write("energy", energy(args.energy))
    if args.wine:
        write("wine", wine(args.wine))


if __name__ == "__main__":
    main()
