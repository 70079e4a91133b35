"""Safety set: recorded iterations, cost-to-go, and local convex subsets.

Every completed closed-loop iteration is stored as a trajectory record with
a per-state cost-to-go J.  The controller queries the store for the n
nearest stored neighbors (per included iteration) of a seed state; their
convex hull serves as terminal set and J^T lambda as terminal cost.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from lmpcq import so3
from lmpcq.dynamics import U_DIM, X_DIM
from lmpcq.errors import (
    CostMismatchError,
    IncompleteRecordError,
    InsufficientStatesError,
    UnknownIterationError,
)

# weighted state metric: d^2 = |dp|^2 + W_VEL*|dv|^2 + W_ATT*angle^2
W_VEL = 0.2
W_ATT = 0.1

TELESCOPE_TOL = 1e-9
MATCH_TOL = 1e-9

CSV_HEADER = "t, px, py, pz, vx, vy, vz, qw, qx, qy, qz, f, wx, wy, wz, J"


def _fmt(x):
    return "%.17g" % x


@dataclass
class TrajectoryRecord:
    """One closed-loop iteration: states x_0..x_T, inputs u_0..u_{T-1}, J."""

    iteration_id: int
    states: np.ndarray  # (T+1, 10)
    inputs: np.ndarray  # (T, 4)
    costs: np.ndarray  # (T+1,)
    dt: float
    completed: bool = True

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        T = self.inputs.shape[0]
        if self.states.shape != (T + 1, X_DIM) or self.inputs.shape != (T, U_DIM):
            raise ValueError(
                f"inconsistent shapes: states {self.states.shape}, inputs {self.inputs.shape}"
            )
        if self.costs.shape != (T + 1,):
            raise ValueError(f"costs must have {T + 1} entries, got {self.costs.shape}")

    @property
    def steps(self):
        return self.inputs.shape[0]

    @property
    def lap_time(self):
        return self.steps * self.dt


@dataclass
class LocalConvexSet:
    """n nearest stored states per iteration, with their costs-to-go."""

    states: np.ndarray  # (P, 10)
    costs: np.ndarray  # (P,)
    sources: list  # [(iteration_id, time_index)] per member

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)

    @property
    def size(self):
        return self.states.shape[0]


def compute_cost_to_go(states, inputs, running_cost):
    """Backward accumulation J_t = h(x_t, u_t) + J_{t+1}.

    The final stage uses a zero input, so a goal-reaching trajectory ends
    with J_T = 0 under the indicator cost.
    """
    states = np.asarray(states, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    T = inputs.shape[0]
    if states.shape[0] != T + 1:
        raise ValueError(f"need {T + 1} states for {T} inputs, got {states.shape[0]}")
    J = np.empty(T + 1)
    J[T] = running_cost(states[T], np.zeros(U_DIM))
    for t in range(T - 1, -1, -1):
        J[t] = running_cost(states[t], inputs[t]) + J[t + 1]
    return J


def combine_states(local_set, lam):
    """Barycentric state of the local set: linear in p, v; tangent-space in q."""
    lam = so3.check_simplex(lam)
    if lam.size != local_set.size:
        raise ValueError(f"expected {local_set.size} weights, got {lam.size}")
    out = np.empty(X_DIM)
    out[0:6] = local_set.states[:, 0:6].T @ lam
    out[6:10] = so3.tangent_convex_combination(local_set.states[:, 6:10], lam)
    return out


def terminal_cost(local_set, lam):
    """Interpolated cost-to-go J^T lambda (linear in the weights)."""
    lam = so3.check_simplex(lam)
    if lam.size != local_set.size:
        raise ValueError(f"expected {local_set.size} weights, got {lam.size}")
    return float(local_set.costs @ lam)


class SafetySetStore:
    """Ordered collection of completed iteration records.

    One writer appends at end of iteration; reads during a run see the
    records of iterations 0..j-1 only, so no synchronization is needed.
    """

    def __init__(self, running_cost, dt):
        self.running_cost = running_cost
        self.dt = float(dt)
        self.records = []

    def __len__(self):
        return len(self.records)

    @property
    def iteration_ids(self):
        return [r.iteration_id for r in self.records]

    def record(self, iteration_id):
        for r in self.records:
            if r.iteration_id == iteration_id:
                return r
        raise UnknownIterationError(iteration_id)

    def total_states(self):
        return sum(r.states.shape[0] for r in self.records)

    def best_record(self):
        if not self.records:
            raise UnknownIterationError("store is empty")
        return min(self.records, key=lambda r: (r.lap_time, r.iteration_id))

    def add_record(self, record):
        """Validate and append a completed record; returns the new size."""
        if not record.completed:
            raise IncompleteRecordError(
                f"iteration {record.iteration_id} did not complete the task"
            )
        if record.iteration_id != len(self.records):
            raise ValueError(
                f"expected iteration id {len(self.records)}, got {record.iteration_id}"
            )
        if abs(record.dt - self.dt) > 1e-12:
            raise ValueError(f"record dt {record.dt} != store dt {self.dt}")
        self._check_telescoping(record)
        self.records.append(record)
        return len(self.records)

    def _check_telescoping(self, record):
        T = record.steps
        hT = self.running_cost(record.states[T], np.zeros(U_DIM))
        if abs(record.costs[T] - hT) > TELESCOPE_TOL:
            raise CostMismatchError(
                f"J_T = {record.costs[T]!r} but terminal stage cost is {hT!r}"
            )
        for t in range(T):
            h = self.running_cost(record.states[t], record.inputs[t])
            if abs(record.costs[t] - (h + record.costs[t + 1])) > TELESCOPE_TOL:
                raise CostMismatchError(
                    f"telescoping fails at t={t}: "
                    f"J_t={record.costs[t]!r}, h={h!r}, J_t+1={record.costs[t + 1]!r}"
                )

    def query_optimal_cost(self, x):
        """Minimum stored cost-to-go over exact matches of x (+inf if absent).

        Matching is componentwise within 1e-9; exposed for testing and
        reporting, the controller itself uses the relaxed terminal cost.
        """
        x = np.asarray(x, dtype=np.float64)
        best = np.inf
        for r in self.records:
            hit = np.all(np.abs(r.states - x) <= MATCH_TOL, axis=1)
            if hit.any():
                best = min(best, float(r.costs[hit].min()))
        return best

    def _distance_sq(self, record, seed):
        dp = record.states[:, 0:3] - seed[0:3]
        dv = record.states[:, 3:6] - seed[3:6]
        ang = so3.quat_geodesic_many(seed[6:10], record.states[:, 6:10])
        return (dp * dp).sum(axis=1) + W_VEL * (dv * dv).sum(axis=1) + W_ATT * ang * ang

    def select_local_set(self, seed, n, p, iterations=None):
        """n nearest states (weighted metric) per iteration p..latest.

        ``iterations`` may name an explicit id list instead of the [p, end]
        range (the task driver uses this to add the best iteration to the
        lookback window).  Ties in distance resolve to the smaller time
        index; members are returned grouped by iteration in time order.
        """
        if not self.records:
            raise UnknownIterationError("store is empty")
        seed = np.asarray(seed, dtype=np.float64)
        if iterations is None:
            last = self.records[-1].iteration_id
            if p < 0 or p > last:
                raise UnknownIterationError(f"first iteration {p} outside [0, {last}]")
            iterations = list(range(p, last + 1))
        states, costs, sources = [], [], []
        for j in iterations:
            r = self.record(j)
            m = r.states.shape[0]
            if m < n:
                raise InsufficientStatesError(
                    f"iteration {j} has {m} states, need at least {n}"
                )
            d2 = self._distance_sq(r, seed)
            time_idx = np.arange(m)
            picked = np.lexsort((time_idx, d2))[:n]
            picked = np.sort(picked)
            states.append(r.states[picked])
            costs.append(r.costs[picked])
            sources.extend((j, int(t)) for t in picked)
        return LocalConvexSet(np.vstack(states), np.concatenate(costs), sources)


# ---------------------------------------------------------------------------
# persistence: one CSV per record, manifest JSON alongside


def save_record(path, record):
    """Write a record as CSV (one row per state; zero input on the last row)."""
    T = record.steps
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for t in range(T + 1):
            u = record.inputs[t] if t < T else np.zeros(U_DIM)
            row = [str(t)]
            row += [_fmt(c) for c in record.states[t]]
            row += [_fmt(c) for c in u]
            row.append(_fmt(record.costs[t]))
            fh.write(", ".join(row) + "\n")


def load_record(path, iteration_id, dt, completed=True):
    """Read a record CSV written by save_record."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = next(reader)
        expected = [c.strip() for c in CSV_HEADER.split(",")]
        if [c.strip() for c in header] != expected:
            raise ValueError(f"unexpected header in {path}: {header}")
        rows = [[float(c) for c in row] for row in reader if row]
    data = np.asarray(rows)
    states = data[:, 1:11]
    inputs = data[:-1, 11:15]
    costs = data[:, 15]
    return TrajectoryRecord(iteration_id, states, inputs, costs, dt, completed)


def record_filename(iteration_id):
    return f"iter_{iteration_id:03d}.csv"


def save_store(store, directory, extra_manifest=None):
    """Write all records plus a manifest (ids, dt, lap times, cost params)."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for r in store.records:
        name = record_filename(r.iteration_id)
        save_record(os.path.join(directory, name), r)
        files[str(r.iteration_id)] = name
    manifest = {
        "iterations": store.iteration_ids,
        "dt": store.dt,
        "lap_times": [r.lap_time for r in store.records],
        "records": files,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_store(directory, running_cost):
    """Rebuild a store from a directory written by save_store."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    store = SafetySetStore(running_cost, manifest["dt"])
    for j in manifest["iterations"]:
        path = os.path.join(directory, manifest["records"][str(j)])
        store.add_record(load_record(path, j, manifest["dt"]))
    return store, manifest
