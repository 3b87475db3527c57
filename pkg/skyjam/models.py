"""Pydantic records shared by the library, the CLI and the result files."""

from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

Point = tuple[float, float]


# --- Scenario ---

class ScenarioConfig(BaseModel):
    """Every physical and algorithmic parameter of one experiment, linear units.

    Powers are watts, ``ref_gain`` is a dimensionless linear gain, distances are
    meters. Conversion from the dBm file format happens in ``scenario``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_users: int = Field(ge=1, examples=[3])
    num_pus: int = Field(ge=0, examples=[2])
    user_positions: tuple[Point, ...] = Field(examples=[((-55, -10), (0, -65), (50, -5))])
    pu_positions: tuple[Point, ...] = Field(examples=[((30, 25), (-30, 25))])
    eve_center: Point = Field(examples=[(15, -15)])
    eve_radius: float = Field(examples=[10.0])
    alt_s: float = Field(examples=[15.0])
    alt_j: float = Field(examples=[10.0])
    ref_gain: float = Field(examples=[1e-3])
    noise_power: float = Field(examples=[1e-12])
    p_s_ave: float = Field(examples=[0.1])
    p_j_ave: float = Field(examples=[0.1])
    p_s_max: float = Field(examples=[0.4])
    p_j_max: float = Field(examples=[0.4])
    interference_threshold: tuple[float, ...] = Field(examples=[(1e-11, 1e-11)])
    v_max_s: float = Field(examples=[7.0])
    v_max_j: float = Field(examples=[7.0])
    period: float = Field(examples=[100.0])
    num_slots: int = Field(ge=1, examples=[100])
    slot_len: float = Field(examples=[1.0])
    r_min: float = Field(examples=[0.1])
    epsilon: float = Field(examples=[0.001])
    start_s: Point = Field(examples=[(54.36, -26.67)])
    end_s: Point = Field(examples=[(54.36, -26.67)])
    start_j: Point = Field(examples=[(26.35, -26.67)])
    end_j: Point = Field(examples=[(26.35, -26.67)])

    @model_validator(mode="before")
    @classmethod
    def _fill_derived(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if data.get("slot_len") is None and "period" in data and "num_slots" in data:
            data["slot_len"] = float(data["period"]) / int(data["num_slots"])
        threshold = data.get("interference_threshold")
        if isinstance(threshold, (int, float)) and "num_pus" in data:
            data["interference_threshold"] = (float(threshold),) * int(data["num_pus"])
        return data

    @model_validator(mode="after")
    def _check_invariants(self):
        # Order matters: the first violated invariant names the error.
        if len(self.user_positions) != self.num_users:
            raise ValueError("user count: num_users does not match user_positions")
        if len(self.pu_positions) != self.num_pus:
            raise ValueError("pu count: num_pus does not match pu_positions")
        if len(self.interference_threshold) != self.num_pus:
            raise ValueError("interference threshold: need a scalar or one value per PU")
        if abs(self.slot_len * self.num_slots - self.period) > 1e-12 * max(1.0, abs(self.period)):
            raise ValueError("slot length: slot_len * num_slots must equal period")
        if not (self.p_s_max >= self.p_s_ave > 0 and self.p_j_max >= self.p_j_ave >= 0):
            raise ValueError("power ordering: need p_s_max >= p_s_ave > 0 and p_j_max >= p_j_ave >= 0")
        if self.eve_radius < 0:
            raise ValueError("eve radius: must be >= 0")
        if self.alt_s <= 0 or self.alt_j <= 0:
            raise ValueError("altitude: must be > 0")
        if any(t <= 0 for t in self.interference_threshold):
            raise ValueError("interference threshold: must be > 0")
        if self.ref_gain <= 0 or self.noise_power <= 0:
            raise ValueError("link budget: ref_gain and noise_power must be > 0")
        if self.v_max_s <= 0 or self.v_max_j <= 0 or self.epsilon <= 0 or self.r_min < 0:
            raise ValueError("thresholds: speeds and epsilon must be > 0, r_min >= 0")
        for name, start, end, v_max in (
            ("S", self.start_s, self.end_s, self.v_max_s),
            ("J", self.start_j, self.end_j, self.v_max_j),
        ):
            gap = ((start[0] - end[0]) ** 2 + (start[1] - end[1]) ** 2) ** 0.5
            if gap > (self.num_slots - 1) * self.slot_len * v_max + 1e-9:
                raise ValueError(f"reachability: end of {name} not reachable from its start")
        dx = self.start_s[0] - self.eve_center[0]
        dy = self.start_s[1] - self.eve_center[1]
        if (dx * dx + dy * dy) ** 0.5 < self.eve_radius:
            raise ValueError("start inside uncertainty disc: start_s must be >= eve_radius from eve_center")
        return self


# --- Schemes and sweeps ---

class SchemeId(StrEnum):
    PROPOSED = "proposed"
    BENCHMARK_I = "benchmark_i"
    BENCHMARK_II = "benchmark_ii"
    BENCHMARK_III = "benchmark_iii"
    NPC = "npc"


class SweepSpec(BaseModel):
    parameter: Literal["period", "eve_radius", "interference_threshold", "r_min"] = Field(examples=["eve_radius"])
    values: list[float] = Field(min_length=1, examples=[[0, 10, 20, 30]])
    schemes: list[SchemeId] = Field(min_length=1, examples=[["proposed"]])


# --- Feasibility ---

class FeasibilityReport(BaseModel):
    """Maximum violation per constraint family of P1, in each family's native unit."""

    scheduling_sum: float = Field(examples=[0.0])  # columns summing above one
    binariness: float = Field(examples=[0.0])  # distance from {0, 1}
    min_secrecy: float = Field(examples=[0.0])  # bits/s/Hz below r_min
    peak_user_power: float = Field(examples=[0.0])  # W
    avg_user_power: float = Field(examples=[0.0])  # W
    peak_jam_power: float = Field(examples=[0.0])  # W
    avg_jam_power: float = Field(examples=[0.0])  # W
    endpoints: float = Field(examples=[0.0])  # m
    speed: float = Field(examples=[0.0])  # m per slot
    interference: float = Field(examples=[0.0])  # relative to the PU threshold
    eve_disc: float = Field(examples=[0.0])  # m inside the uncertainty disc
    nonnegativity: float = Field(examples=[0.0])  # W below zero, or schedule outside [0, 1]
    tolerance: float = Field(examples=[1e-6])
    endpoint_tolerance: float = Field(examples=[1e-9])
    overall_feasible: bool = Field(examples=[True])

    def violations(self) -> dict[str, float]:
        return {
            name: getattr(self, name)
            for name in (
                "scheduling_sum", "binariness", "min_secrecy", "peak_user_power",
                "avg_user_power", "peak_jam_power", "avg_jam_power", "endpoints",
                "speed", "interference", "eve_disc", "nonnegativity",
            )
        }

    def failed(self, *, ignore: tuple[str, ...] = ()) -> list[str]:
        out = []
        for name, value in self.violations().items():
            if name in ignore:
                continue
            limit = self.endpoint_tolerance if name == "endpoints" else self.tolerance
            if value > limit:
                out.append(name)
        return out


# --- Iteration trace ---

class BlockRecord(BaseModel):
    name: str = Field(examples=["P1.2"])
    status: str = Field(examples=["optimal"])
    accepted: bool = Field(examples=[True])
    kkt_stationarity: float = Field(examples=[3.1e-8])
    kkt_feasibility: float = Field(examples=[0.0])
    iterations: int = Field(examples=[41])


class IterationRecord(BaseModel):
    iteration: int = Field(examples=[3])
    objective: float = Field(examples=[12.48])
    delta: float = Field(examples=[0.021])
    wall_time: float = Field(examples=[1.7])
    blocks: list[BlockRecord] = Field(default_factory=list)


class IterationTrace(BaseModel):
    records: list[IterationRecord] = Field(default_factory=list)
    converged: bool = False

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.records]

    def is_monotone(self, slack: float = 1e-9) -> bool:
        values = self.objectives
        return all(b >= a - slack for a, b in zip(values, values[1:]))


# --- Run output ---

class RunSummary(BaseModel):
    scheme: SchemeId = Field(examples=["proposed"])
    objective: float = Field(examples=[12.51])
    iterations: int = Field(examples=[14])
    converged: bool = Field(examples=[True])
    runtime_sec: float = Field(examples=[42.0])
    feasibility: FeasibilityReport
    last_record: IterationRecord | None = None
    metadata: dict[str, str] = Field(default_factory=dict)
