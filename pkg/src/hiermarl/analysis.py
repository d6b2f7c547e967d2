"""Action-mode correlation analysis over decision traces.

For one low-level agent and one routed action component from above, build a
table whose rows are the low-level agent's action indices and whose columns
are training episodes; each cell holds the mode of the component over the
steps of that episode where the agent took that action (empty when the
action never occurred). A mode staying constant across many episodes is
evidence that the component and the agent's behavior are coupled; pairing
an agent with a component routed to a *different* agent gives the
uncorrelated control.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceError


@dataclass(frozen=True)
class TraceRow:
    episode: int
    step: int
    level: int
    slot: int
    incoming: str
    action: str
    reward: float
    terminated: bool


def read_trace(path) -> list[TraceRow]:
    rows: list[TraceRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"episode", "step", "level", "slot", "incoming_action", "action",
                    "reward", "terminated"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise TraceError(f"trace missing columns {sorted(required)}")
        for rec in reader:
            rows.append(
                TraceRow(
                    int(rec["episode"]), int(rec["step"]), int(rec["level"]),
                    int(rec["slot"]), rec["incoming_action"], rec["action"],
                    float(rec["reward"]), rec["terminated"] == "1",
                )
            )
    return rows


@dataclass
class ModeTable:
    """cells[(action, episode)] = (mode, mode_count, total co-occurrences)."""

    episodes: list[int]
    actions: list[int]
    cells: dict[tuple[int, int], tuple[int, int, int]] = field(default_factory=dict)

    def mode(self, action: int, episode: int) -> int | None:
        cell = self.cells.get((action, episode))
        return None if cell is None else cell[0]

    def to_long_rows(self) -> list[tuple[int, int, int, int, int]]:
        """(episode, bottom_action, mode, count, total), skipping empties."""
        rows = []
        for e in self.episodes:
            for a in self.actions:
                cell = self.cells.get((a, e))
                if cell is not None:
                    rows.append((e, a, cell[0], cell[1], cell[2]))
        return rows

    def write_csv(self, fh) -> None:
        fh.write("episode,bottom_action,mode,count,total\n")
        for row in self.to_long_rows():
            fh.write(",".join(str(v) for v in row) + "\n")


def _select(rows: list[TraceRow], level: int, slot: int) -> list[TraceRow]:
    picked = [r for r in rows if r.level == level and r.slot == slot]
    if not picked:
        raise TraceError(f"no rows for agent l{level}a{slot}")
    return picked


def _incoming_value(cell: str, component: int, bins: int | None, lo: float, hi: float) -> int:
    parts = cell.split(";") if cell else []
    if component >= len(parts):
        raise TraceError(f"incoming {cell!r} has no component {component}")
    value = float(parts[component])
    if bins is None:
        if value != int(value):
            raise TraceError(
                f"incoming component {value} is not discrete; pass bins= to quantize"
            )
        return int(value)
    if hi <= lo:
        return 0
    k = int((value - lo) / (hi - lo) * bins)
    return min(max(k, 0), bins - 1)


def mode_table(
    trace: list[TraceRow],
    action_agent: tuple[int, int],
    incoming_agent: tuple[int, int] | None = None,
    component: int = 0,
    bins: int | None = None,
    n_actions: int | None = None,
) -> ModeTable:
    """Mode of the incoming component of `incoming_agent` conditioned on the
    action of `action_agent`, per episode.

    Both agents must act at the same cadence (same level); rows are joined
    on (episode, step). incoming_agent defaults to the action agent itself,
    whose incoming column is exactly the component its superior routed to
    it. Continuous components are selected by index and uniformly binned
    when `bins` is given. Ties break toward the smallest value.
    """
    if incoming_agent is None:
        incoming_agent = action_agent
    if not trace:
        return ModeTable([], list(range(n_actions)) if n_actions else [])
    action_rows = _select(trace, *action_agent)
    incoming_rows = _select(trace, *incoming_agent)
    if any(not r.incoming for r in incoming_rows):
        raise TraceError(
            f"agent l{incoming_agent[0]}a{incoming_agent[1]} has empty incoming "
            "actions (top level?)"
        )

    lo = hi = 0.0
    if bins is not None:
        vals = [float(r.incoming.split(";")[component]) for r in incoming_rows]
        lo, hi = min(vals), max(vals)

    incoming_at: dict[tuple[int, int], int] = {}
    for r in incoming_rows:
        incoming_at[(r.episode, r.step)] = _incoming_value(
            r.incoming, component, bins, lo, hi
        )

    counts: dict[tuple[int, int], dict[int, int]] = {}
    actions_seen: set[int] = set()
    episodes_seen: set[int] = set()
    for r in action_rows:
        episodes_seen.add(r.episode)
        key = (r.episode, r.step)
        if key not in incoming_at:
            continue
        action = int(float(r.action.split(";")[0]))
        actions_seen.add(action)
        bucket = counts.setdefault((action, r.episode), {})
        value = incoming_at[key]
        bucket[value] = bucket.get(value, 0) + 1

    actions = list(range(n_actions)) if n_actions is not None else sorted(actions_seen)
    table = ModeTable(sorted(episodes_seen), actions)
    for (action, episode), bucket in counts.items():
        total = sum(bucket.values())
        # mode with ties broken toward the smallest value
        mode_value = min(bucket, key=lambda v: (-bucket[v], v))
        table.cells[(action, episode)] = (mode_value, bucket[mode_value], total)
    return table


def cross_pair_table(
    trace: list[TraceRow],
    action_agent: tuple[int, int],
    incoming_agent: tuple[int, int],
    component: int = 0,
    bins: int | None = None,
    n_actions: int | None = None,
) -> ModeTable:
    """Control pairing: one agent's actions against a component routed to a
    different agent. Reduces to mode_table when the two agents coincide."""
    return mode_table(trace, action_agent, incoming_agent, component, bins, n_actions)


# ---------------------------------------------------------------------------
# Run-length statistics over mode tables
# ---------------------------------------------------------------------------


def max_constant_mode_run(table: ModeTable) -> int:
    """Longest streak of consecutive episodes with one unchanged non-empty
    mode, maximized over action rows."""
    best = 0
    for a in table.actions:
        run = 0
        prev: int | None = None
        for e in table.episodes:
            mode = table.mode(a, e)
            if mode is not None and mode == prev:
                run += 1
            elif mode is not None:
                run = 1
            else:
                run = 0
            prev = mode
            best = max(best, run)
    return best


def fraction_rows_with_run(table: ModeTable, min_run: int) -> float:
    """Fraction of action rows whose longest constant-mode streak reaches
    min_run episodes."""
    if not table.actions:
        return 0.0
    hits = 0
    for a in table.actions:
        run = 0
        prev: int | None = None
        longest = 0
        for e in table.episodes:
            mode = table.mode(a, e)
            if mode is not None and mode == prev:
                run += 1
            elif mode is not None:
                run = 1
            else:
                run = 0
            prev = mode
            longest = max(longest, run)
        if longest >= min_run:
            hits += 1
    return hits / len(table.actions)
