"""Result files: per-run CSVs and summary, sweep table, and reading a run back."""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from skyjam.models import IterationTrace, RunSummary, ScenarioConfig, SchemeId, SweepSpec
from skyjam.rates import SolutionState

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"
SWEEP_COLUMNS = ["parameter_value", "scheme", "objective", "iterations", "feasible"]


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _slots(state: SolutionState) -> np.ndarray:
    return np.arange(1, state.num_slots + 1)


def trajectory_frame(state: SolutionState) -> pd.DataFrame:
    return pd.DataFrame({
        "slot": _slots(state),
        "x_s": state.traj_s[:, 0],
        "y_s": state.traj_s[:, 1],
        "x_j": state.traj_j[:, 0],
        "y_j": state.traj_j[:, 1],
    })


def power_frame(state: SolutionState) -> pd.DataFrame:
    columns = {"slot": _slots(state)}
    for k in range(state.num_users):
        columns[f"p_user_{k + 1}"] = state.user_power[k]
    columns["p_j"] = state.jam_power
    return pd.DataFrame(columns)


def schedule_frame(state: SolutionState) -> pd.DataFrame:
    best = np.argmax(state.schedule, axis=0)
    active = state.schedule[best, np.arange(state.num_slots)] >= 0.5
    return pd.DataFrame({"slot": _slots(state), "active_user": np.where(active, best + 1, 0)})


def convergence_frame(trace: IterationTrace) -> pd.DataFrame:
    return pd.DataFrame({
        "iter": [r.iteration for r in trace.records],
        "objective": trace.objectives,
    })


def write_run(out_dir: str | Path, state: SolutionState, trace: IterationTrace, summary: RunSummary) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(trajectory_frame(state), out / "trajectory.csv")
    _write_csv(power_frame(state), out / "power.csv")
    _write_csv(schedule_frame(state), out / "schedule.csv")
    _write_csv(convergence_frame(trace), out / "convergence.csv")
    (out / "summary.json").write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    log.info(f"wrote results to {out}")


def read_summary(out_dir: str | Path) -> RunSummary:
    return RunSummary.model_validate_json((Path(out_dir) / "summary.json").read_text(encoding="utf-8"))


def read_solution(out_dir: str | Path, scenario: ScenarioConfig) -> SolutionState:
    """Rebuild a state from the run CSVs; endpoints come from the scenario, not the rounded files."""
    out = Path(out_dir)
    traj = pd.read_csv(out / "trajectory.csv")
    power = pd.read_csv(out / "power.csv")
    sched = pd.read_csv(out / "schedule.csv")

    n_slots = len(traj)
    active = sched["active_user"].to_numpy(dtype=int)
    on = active > 0
    schedule = np.zeros((scenario.num_users, n_slots))
    schedule[active[on] - 1, np.arange(n_slots)[on]] = 1.0

    traj_s = traj[["x_s", "y_s"]].to_numpy(dtype=float)
    traj_j = traj[["x_j", "y_j"]].to_numpy(dtype=float)
    traj_s[0], traj_s[-1] = scenario.start_s, scenario.end_s
    traj_j[0], traj_j[-1] = scenario.start_j, scenario.end_j

    user_cols = [f"p_user_{k + 1}" for k in range(scenario.num_users)]
    return SolutionState(
        schedule=schedule,
        user_power=power[user_cols].to_numpy(dtype=float).T,
        jam_power=power["p_j"].to_numpy(dtype=float),
        traj_s=traj_s,
        traj_j=traj_j,
    )


def sweep_frame(rows: list[dict]) -> pd.DataFrame:
    """Rows ordered by parameter value, then by scheme enumeration order."""
    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    order = {scheme.value: i for i, scheme in enumerate(SchemeId)}
    frame["_order"] = frame["scheme"].map(order)
    frame = frame.sort_values(["parameter_value", "_order"], kind="stable").drop(columns="_order")
    return frame.reset_index(drop=True)


def write_sweep(out_dir: str | Path, rows: list[dict], sweep: SweepSpec, *, defaulted: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    _write_csv(sweep_frame(rows), path)
    meta = {
        "sweep": sweep.model_dump(mode="json"),
        "values_source": "defaults chosen by this project" if defaulted else "command line",
        "failed_points": sum(1 for r in rows if r.get("exit_code", 0) != 0),
    }
    (out / "sweep_meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path
