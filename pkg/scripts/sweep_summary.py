"""Print a sweep table as one column per scheme, plus the failed points."""

import json
import sys
from pathlib import Path

import pandas as pd


def sweep_summary(out_dir: str):
    out = Path(out_dir)
    frame = pd.read_csv(out / "sweep.csv")
    meta = json.loads((out / "sweep_meta.json").read_text(encoding="utf-8"))
    parameter = meta["sweep"]["parameter"]

    table = frame.pivot(index="parameter_value", columns="scheme", values="objective")
    table.index.name = parameter
    print(f"  {parameter} ({meta['values_source']})")
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))

    infeasible = frame[~frame["feasible"]]
    for _, row in infeasible.iterrows():
        print(f"  infeasible: {parameter}={row['parameter_value']:g} {row['scheme']}")
    print(f"  failed points: {meta['failed_points']}")


if __name__ == "__main__":
    sweep_summary(sys.argv[1] if len(sys.argv) > 1 else "results/sweep")
