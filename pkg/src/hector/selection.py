"""Streaming selection of the k most relevant scored frames.

Greedy online policy with bounded memory: MES class dominates
certainty, certainty dominates recency, and a minimum index distance
between retained frames keeps the selection diverse. Global optimality
is not claimed; the rule is deterministic and locally optimal.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .domain import ProbVector, check_mes


@dataclass(frozen=True)
class SelectionEntry:
    """One retained frame with its score and a full-quality pixel copy."""

    frame_index: int
    mes: int
    certainty: float
    probs: ProbVector
    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        check_mes(self.mes)
        if self.certainty != max(self.probs):
            raise ValueError(
                f"certainty {self.certainty} does not equal max(probs) {max(self.probs)}"
            )


def rank_key(entry: SelectionEntry) -> tuple[int, float, int]:
    """Total order on entries; a greater key means a more relevant frame.

    MES descending, then certainty descending, then earlier frame index
    as the final deterministic tie-break.
    """
    return (entry.mes, entry.certainty, -entry.frame_index)


class SelectionState:
    """At most k entries, pairwise at least min_gap frame indices apart.

    Entries are kept sorted by rank descending. Single-owner during a
    session; final_selection returns an immutable snapshot.
    """

    def __init__(self, k: int, min_gap: int) -> None:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if min_gap < 0:
            raise ValueError(f"min_gap must be >= 0, got {min_gap}")
        self.k = k
        self.min_gap = min_gap
        self.entries: list[SelectionEntry] = []

    def offer(self, candidate: SelectionEntry) -> bool:
        """Consider one scored frame; returns True if it was retained.

        Entries within min_gap of the candidate conflict with it. A
        conflict that outranks the candidate rejects it outright;
        otherwise all conflicts are evicted, the candidate is inserted,
        and the lowest-ranked entry is dropped if capacity is exceeded.
        """
        cand_rank = rank_key(candidate)
        conflicts = [
            e for e in self.entries
            if abs(e.frame_index - candidate.frame_index) < self.min_gap
        ]
        if any(rank_key(e) > cand_rank for e in conflicts):
            return False
        for e in conflicts:
            self.entries.remove(e)
        self.entries.append(candidate)
        self.entries.sort(key=rank_key, reverse=True)
        if len(self.entries) > self.k:
            dropped = self.entries.pop()
            if dropped is candidate:
                return False
        return True

    def final_selection(self) -> list[SelectionEntry]:
        """Surviving entries in chronological order."""
        return sorted(self.entries, key=lambda e: e.frame_index)


def offer(candidate: SelectionEntry, state: SelectionState) -> SelectionState:
    state.offer(candidate)
    return state


def final_selection(state: SelectionState) -> list[SelectionEntry]:
    return state.final_selection()


def png_name(session_id: str, entry: SelectionEntry) -> str:
    return f"sess{session_id}_frame{entry.frame_index}_mes{entry.mes}.png"


def save_selection_pngs(
    entries: list[SelectionEntry], session_id: str, out_dir: str
) -> list[str]:
    """Persist the selected frame images; returns the written file names."""
    from PIL import Image

    names = []
    for entry in entries:
        name = png_name(session_id, entry)
        img = Image.frombytes("RGB", (entry.width, entry.height), entry.pixels)
        img.save(os.path.join(out_dir, name))
        names.append(name)
    return names
