"""Exact simulation of the random graph process driven by a bounded-size rule.

Each round samples ell vertices uniformly with replacement (a vertex may
repeat within a round), reads their truncated component sizes at the start
of the round, lets the rule pick one candidate edge, and merges the two
components if they differ; rounds whose chosen edge lies inside one
component are consumed no-ops. Only the component structure is kept, in a
union-find forest with size tracking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernel
from .rules import OMEGA, RuleError, RuleSpec

HARD_CAP_FACTOR = 50  # hard round cap is 50 * n^2
RNG_NAME = "splitmix64"

_U64 = (1 << 64) - 1


def index_mask(n: int) -> int:
    """Smallest all-ones bitmask covering [0, n)."""
    m = n - 1
    for shift in (1, 2, 4, 8, 16, 32):
        m |= m >> shift
    return m


class Splitmix64:
    """64-bit splittable generator; distinct seeds give independent streams.

    Mirrors the compiled kernel's stream bit for bit.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _U64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _U64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        return z ^ (z >> 31)

    def randbelow(self, n: int, mask: int) -> int:
        while True:
            v = self.next_u64() & mask
            if v < n:
                return v


@dataclass(frozen=True)
class Snapshot:
    round: int
    y: tuple
    omega_components: int


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    vertices: tuple
    sizes: tuple
    choice: int
    merged: bool
    merged_sizes: "tuple | None"


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one simulation run."""

    rule_name: str
    n: int
    seed: int
    status: str  # "connected" | "timeout" | "stopped"
    t_con: "int | None"
    t_k: dict
    last_sizes: tuple
    giant_time: "int | None"
    rounds: int
    rng: str = RNG_NAME
    snapshots: list = field(default_factory=list)


class ProcessState:
    """Evolving component structure of the process, confined to one worker."""

    def __init__(self, rule: RuleSpec, n: int, seed: int, giant_epsilon: float = 0.05):
        if n < 1:
            raise RuleError(f"need at least one vertex, got n={n}")
        self.rule = rule
        self.n = n
        self.seed = seed
        K = rule.K
        self.parent = np.arange(n, dtype=np.int32)
        self.size = np.ones(n, dtype=np.int32)
        self.y = np.zeros(K + 1, dtype=np.int64)
        self.y[1] = n
        self.omega_components = 0
        self.largest = 1
        self.components = n
        self.round = 0
        self.rng = Splitmix64(seed)
        self.mask = index_mask(n)
        self.giant_epsilon = giant_epsilon
        self.giant_threshold = (1.0 - giant_epsilon) * n
        # tk[k] == -1 while Y_k > 0, else the round of Y_k's latest drop to 0
        self.tk = np.zeros(K + 1, dtype=np.int64)
        self.tk[1] = -1
        self.giant_time = 0 if self.largest >= self.giant_threshold else -1

    @property
    def connected(self) -> bool:
        return self.components == 1

    def find(self, v: int) -> int:
        parent = self.parent
        x = v
        while parent[x] != x:
            x = parent[x]
        root = int(x)
        x = v
        while parent[x] != root:
            nxt = parent[x]
            parent[x] = root
            x = nxt
        return root

    def truncated_size(self, v: int):
        sz = int(self.size[self.find(v)])
        return sz if sz <= self.rule.K else OMEGA

    def step(self) -> RoundOutcome:
        """Play one round; general path that works for any rule."""
        rule = self.rule
        K = rule.K
        ell = rule.ell
        n = self.n
        vs = []
        roots = []
        sizes = []
        for _ in range(ell):
            v = self.rng.randbelow(n, self.mask)
            vs.append(v)
            root = self.find(v)
            roots.append(root)
            sz = int(self.size[root])
            sizes.append(sz if sz <= K else OMEGA)
        sizes = tuple(sizes)
        i = rule.decide(sizes)
        a = roots[2 * i - 2]
        b = roots[2 * i - 1]
        self.round += 1
        if a == b:
            return RoundOutcome(self.round, tuple(vs), sizes, i, False, None)
        sa = int(self.size[a])
        sb = int(self.size[b])
        if sa < sb:
            a, b = b, a
            sa, sb = sb, sa
        self.parent[b] = a
        snew = sa + sb
        self.size[a] = snew
        y, tk = self.y, self.tk
        for s in (sa, sb):
            if s <= K:
                y[s] -= s
                if y[s] == 0:
                    tk[s] = self.round
            else:
                self.omega_components -= 1
        if snew <= K:
            if y[snew] == 0:
                tk[snew] = -1
            y[snew] += snew
        else:
            self.omega_components += 1
        self.components -= 1
        if snew > self.largest:
            self.largest = snew
            if self.giant_time < 0 and self.largest >= self.giant_threshold:
                self.giant_time = self.round
        return RoundOutcome(self.round, tuple(vs), sizes, i, True, (sa, sb))

    def snapshot(self) -> Snapshot:
        return Snapshot(
            self.round,
            tuple(int(v) for v in self.y[1:]),
            self.omega_components,
        )


def new_process(rule: RuleSpec, n: int, seed: int, giant_epsilon: float = 0.05) -> ProcessState:
    return ProcessState(rule, n, seed, giant_epsilon=giant_epsilon)


def isolated_count(state: ProcessState) -> int:
    """Number of isolated vertices (Y_1)."""
    return int(state.y[1])


def _record(state: ProcessState, status: str, snapshots: list) -> RunRecord:
    K = state.rule.K
    t_k = {}
    for k in range(1, K + 1):
        cand = int(state.tk[k])
        t_k[k] = None if cand < 0 else cand
    t_con = state.round if state.connected else None
    last = tuple(
        k for k in range(1, K + 1) if t_con is not None and t_k[k] == t_con
    )
    return RunRecord(
        rule_name=state.rule.name,
        n=state.n,
        seed=state.seed,
        status=status,
        t_con=t_con,
        t_k=t_k,
        last_sizes=last,
        giant_time=None if state.giant_time < 0 else state.giant_time,
        rounds=state.round,
        snapshots=snapshots,
    )


def run_until_connected(
    state: ProcessState,
    snapshot_plan: "Sequence[int] | None" = None,
    max_rounds: "int | None" = None,
    hard_cap: "int | None" = None,
    force_python: bool = False,
) -> RunRecord:
    """Step until one component remains, a requested round limit, or the
    hard cap of 50*n^2 rounds (status "timeout", partial data kept).

    snapshot_plan lists rounds at which (Y_1..Y_K, omega count) are recorded;
    entries at or past the connectivity round see the frozen terminal counts.
    """
    n = state.n
    cap = HARD_CAP_FACTOR * n * n if hard_cap is None else hard_cap
    stop = cap if max_rounds is None else min(max_rounds, cap)
    plan = sorted(set(int(r) for r in snapshot_plan)) if snapshot_plan else []
    if plan and plan[0] < state.round:
        raise ValueError(f"snapshot round {plan[0]} lies before current round {state.round}")

    K = state.rule.K
    table = None if force_python else state.rule.table
    snapshots: list = []

    if table is not None and _kernel.HAVE_NUMBA:
        snap_rounds = np.asarray(plan, dtype=np.int64)
        snap_out = np.zeros((len(plan), K + 1), dtype=np.int64)
        scalars = np.array(
            [
                state.round,
                state.components,
                state.omega_components,
                state.largest,
                state.giant_time,
                0,
            ],
            dtype=np.int64,
        )
        rng_state = _kernel.run_process(
            state.parent,
            state.size,
            state.y,
            state.tk,
            table,
            np.int64(K),
            np.int64(state.rule.ell),
            np.int64(n),
            np.uint64(state.rng.state),
            np.uint64(state.mask),
            np.int64(stop),
            np.float64(state.giant_threshold),
            snap_rounds,
            snap_out,
            scalars,
        )
        state.rng.state = int(rng_state)
        state.round = int(scalars[0])
        state.components = int(scalars[1])
        state.omega_components = int(scalars[2])
        state.largest = int(scalars[3])
        state.giant_time = int(scalars[4])
        taken = int(scalars[5])
        for j in range(taken):
            snapshots.append(
                Snapshot(plan[j], tuple(int(v) for v in snap_out[j, :K]), int(snap_out[j, K]))
            )
    else:
        ptr = 0
        while ptr < len(plan) and plan[ptr] == state.round:
            snapshots.append(state.snapshot())
            ptr += 1
        while not state.connected and state.round < stop:
            state.step()
            while ptr < len(plan) and plan[ptr] == state.round:
                snapshots.append(state.snapshot())
                ptr += 1
        if state.connected:
            while ptr < len(plan):
                snap = state.snapshot()
                snapshots.append(Snapshot(plan[ptr], snap.y, snap.omega_components))
                ptr += 1

    if state.connected:
        status = "connected"
    elif state.round >= cap:
        status = "timeout"
    else:
        status = "stopped"
    return _record(state, status, snapshots)


def simulate(
    rule: RuleSpec,
    n: int,
    seed: int,
    snapshot_plan: "Sequence[int] | None" = None,
    max_rounds: "int | None" = None,
    giant_epsilon: float = 0.05,
) -> RunRecord:
    """New process + run_until_connected in one call."""
    state = new_process(rule, n, seed, giant_epsilon=giant_epsilon)
    return run_until_connected(state, snapshot_plan=snapshot_plan, max_rounds=max_rounds)


# ---------------------------------------------------------------------------
# Tabular export / import


def _last_sizes_str(last: tuple) -> str:
    return "+".join(str(k) for k in last) if last else "none"


def _parse_last_sizes(text: str) -> tuple:
    return () if text == "none" else tuple(int(p) for p in text.split("+"))


def run_table_fieldnames(K: int) -> list:
    return (
        ["run", "rule", "n", "seed", "status", "t_con", "giant_time", "last_size", "rng"]
        + [f"t_{k}" for k in range(1, K + 1)]
    )


def runs_to_csv(records: Sequence[RunRecord], path) -> None:
    """One row per run; stable column order."""
    if not records:
        raise ValueError("empty run table")
    K = len(records[0].t_k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=run_table_fieldnames(K))
        writer.writeheader()
        for idx, rec in enumerate(records):
            row = {
                "run": idx,
                "rule": rec.rule_name,
                "n": rec.n,
                "seed": rec.seed,
                "status": rec.status,
                "t_con": "" if rec.t_con is None else rec.t_con,
                "giant_time": "" if rec.giant_time is None else rec.giant_time,
                "last_size": _last_sizes_str(rec.last_sizes),
                "rng": rec.rng,
            }
            for k in range(1, K + 1):
                v = rec.t_k.get(k)
                row[f"t_{k}"] = "" if v is None else v
            writer.writerow(row)


def snapshots_to_csv(records: Sequence[RunRecord], path) -> None:
    """Companion table: one row per (run, snapshot round)."""
    if not records:
        raise ValueError("empty run table")
    K = len(records[0].t_k)
    header = ["run", "round"] + [f"Y_{k}" for k in range(1, K + 1)] + ["omega_count"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx, rec in enumerate(records):
            for snap in rec.snapshots:
                writer.writerow([idx, snap.round, *snap.y, snap.omega_components])


def load_run_table(path, snapshots_path=None) -> list:
    """Rebuild RunRecords from the tabular exports (snapshots optional)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        k_cols = sorted(
            (int(c[2:]) for c in reader.fieldnames if c.startswith("t_") and c != "t_con")
        )
        for row in reader:
            t_k = {
                k: (None if row[f"t_{k}"] == "" else int(row[f"t_{k}"])) for k in k_cols
            }
            t_con = None if row["t_con"] == "" else int(row["t_con"])
            records.append(
                RunRecord(
                    rule_name=row["rule"],
                    n=int(row["n"]),
                    seed=int(row["seed"]),
                    status=row["status"],
                    t_con=t_con,
                    t_k=t_k,
                    last_sizes=_parse_last_sizes(row["last_size"]),
                    giant_time=None if row["giant_time"] == "" else int(row["giant_time"]),
                    rounds=t_con if t_con is not None else 0,
                    rng=row["rng"],
                )
            )
    if snapshots_path is not None:
        K = len(records[0].t_k) if records else 0
        with open(snapshots_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rec = records[int(row["run"])]
                rec.snapshots.append(
                    Snapshot(
                        int(row["round"]),
                        tuple(int(row[f"Y_{k}"]) for k in range(1, K + 1)),
                        int(row["omega_count"]),
                    )
                )
    return records
