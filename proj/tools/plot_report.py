#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Quick-look plots for fpq outputs.

Accepts either a search report (JSON) or one of the CSV scans and picks the
plot from the content:

  report.json          metric trace per layer, log scale
  stats CSV            per-channel max_abs bars per layer
  error-scan CSV       per-format MSE bars per layer/tensor

Dev utility only; the stable interfaces are the report and CSV formats.
"""

import argparse
import csv
import io
import json
import sys


def read_input(path):
    if path == "-":
        return sys.stdin.read()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def plot_report(report, ax):
    for layer in report["layers"]:
        trace = layer.get("trace")
        if trace:
            ax.plot(range(len(trace)), trace, marker="o", label=layer["name"])
        else:
            ax.axhline(layer["metric_final"], linestyle="--", label=layer["name"])
    cfg = report["config"]
    ax.set_title(f"mode {cfg['mode']}, W{cfg['weight_bits']}A{cfg['act_bits']}")
    ax.set_xlabel("sweep")
    ax.set_ylabel(report["layers"][0]["metric"] if report["layers"] else "metric")
    ax.set_yscale("log")
    ax.legend()


def plot_stats(rows, ax):
    layers = {}
    for row in rows:
        layers.setdefault(row["layer"], []).append(float(row["max_abs"]))
    offset = 0
    for name, values in layers.items():
        ax.bar(range(offset, offset + len(values)), values, label=name)
        offset += len(values) + 1
    ax.set_title("per-channel max |x|")
    ax.set_xlabel("channel (grouped by layer)")
    ax.set_ylabel("max_abs")
    ax.set_yscale("log")
    ax.legend()


def plot_error_scan(rows, ax):
    groups = {}
    for row in rows:
        key = f"{row['layer']}.{row['tensor']}"
        groups.setdefault(key, []).append((row["format"], float(row["mse"])))
    formats = [fmt for fmt, _ in next(iter(groups.values()))]
    width = 1.0 / (len(groups) + 1)
    for i, (key, entries) in enumerate(groups.items()):
        xs = [j + i * width for j in range(len(entries))]
        ax.bar(xs, [mse for _, mse in entries], width=width, label=key)
    ax.set_title("quantization MSE by format")
    ax.set_xticks([j + width * (len(groups) - 1) / 2 for j in range(len(formats))])
    ax.set_xticklabels(formats)
    ax.set_ylabel("mse")
    ax.set_yscale("log")
    ax.legend()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("input", help="report.json, a CSV scan, or - for stdin")
    parser.add_argument("-o", "--out", help="write PNG here instead of showing a window")
    args = parser.parse_args()

    text = read_input(args.input)

    import matplotlib

    if args.out:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    stripped = text.lstrip()
    if stripped.startswith("{"):
        plot_report(json.loads(text), ax)
    else:
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            sys.exit("empty CSV input")
        if "format" in rows[0]:
            plot_error_scan(rows, ax)
        elif "channel" in rows[0]:
            plot_stats(rows, ax)
        else:
            sys.exit(f"unrecognized CSV columns: {', '.join(rows[0])}")
    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=120)
        print(f"wrote {args.out}")
    else:
        plt.show()


if __name__ == "__main__":
    main()
