#!/usr/bin/env python3
"""Turn daily gold, oil, NASDAQ and USD-index series into the weekly wide CSV
that `mohsm train` reads.

Each input is a CSV with a date column and a value column (first two columns
unless --date-col/--value-col say otherwise). Raw files can be downloaded with
`mohsm fetch`.

Choices:
  * window 2017-01-01 .. 2018-12-31 inclusive
  * weeks end on Friday (W-FRI); each weekly value is the mean of that week's
    trading days
  * weeks with no observation for a series leave an empty cell
  * x is the week index, starting at 0
"""

import argparse
import sys

import pandas as pd

SERIES = ("gold", "oil", "nasdaq", "usd")


def load_series(path, date_col, value_col):
    df = pd.read_csv(path)
    dates = df[date_col] if date_col else df.iloc[:, 0]
    values = df[value_col] if value_col else df.iloc[:, 1]
    s = pd.Series(pd.to_numeric(values, errors="coerce").values, index=pd.to_datetime(dates))
    return s.dropna().sort_index()


def weekly(series, start, end):
    s = series[(series.index >= start) & (series.index <= end)]
    return s.resample("W-FRI").mean()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name in SERIES:
        ap.add_argument(f"--{name}", required=True, help=f"daily {name} CSV")
    ap.add_argument("--date-col")
    ap.add_argument("--value-col")
    ap.add_argument("--start", default="2017-01-01")
    ap.add_argument("--end", default="2018-12-31")
    ap.add_argument("--out", default="gonu_weekly.csv")
    args = ap.parse_args(argv)

    start, end = pd.Timestamp(args.start), pd.Timestamp(args.end)
    cols = {
        name: weekly(load_series(getattr(args, name), args.date_col, args.value_col), start, end)
        for name in SERIES
    }
    wide = pd.DataFrame(cols).sort_index()
    wide = wide.dropna(how="all")
    wide.insert(0, "x", range(len(wide)))
    wide.to_csv(args.out, index=False, float_format="%.6g")
    print(f"wrote {len(wide)} weeks to {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
