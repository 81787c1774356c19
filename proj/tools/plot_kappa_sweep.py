#!/usr/bin/env python3
"""Plot median WPEHE@K against kappa from a sweep-kappa results.csv."""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results", help="results.csv written by grd-cate sweep-kappa")
    ap.add_argument("--out", default="kappa_sweep.png")
    ap.add_argument("--split", default="in", choices=["in", "out"])
    ap.add_argument("--metric", default="wpehe", choices=["wpehe", "upehe"])
    ap.add_argument("--k", type=int, default=6)
    args = ap.parse_args()

    df = pd.read_csv(args.results)
    df = df[(df.split == args.split) & (df.metric == args.metric) & (df.K == args.k)].dropna(subset=["value"])
    stats = df.groupby(["estimator", "kappa"])["value"].agg(["median", "count"]).reset_index()

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, g in stats.groupby("estimator"):
        g = g.sort_values("kappa")
        ax.plot(g.kappa.astype(str), g["median"], marker="o", label=name)
    ax.set_xlabel("kappa")
    ax.set_ylabel(f"median {args.metric.upper()}@{args.k} ({args.split}-sample)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(stats.to_string(index=False))


if __name__ == "__main__":
    main()
