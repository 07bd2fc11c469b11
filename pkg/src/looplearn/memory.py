"""Similarity-aware FIFO buffer over the current environment's frame stream.

Holds at most `capacity` recent frames in a circular array plus the ternary
relation matrix of their pairwise loop labels, so valid (anchor, positive,
negative) triplets can be sampled from streaming data in O(capacity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Label, LabelRule, classify_against

_EMPTY = np.int8(-1)


@dataclass(frozen=True)
class Triplet:
    anchor: object
    positive: object
    negative: object


class MemoryBuffer:
    def __init__(self, capacity: int, rule: LabelRule, redraw_cap: int = 16):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rule = rule
        self.redraw_cap = redraw_cap
        self.slots: list = []
        self.next_slot = 0
        self.relations = np.full((capacity, capacity), _EMPTY, dtype=np.int8)
        self.env: str | None = None

    def __len__(self) -> int:
        return len(self.slots)

    def reset(self) -> None:
        self.slots = []
        self.next_slot = 0
        self.relations.fill(_EMPTY)
        self.env = None

    def insert(self, frame) -> None:
        """Overwrite the oldest slot (or append while filling) and refresh
        that slot's row/column of the relation matrix."""
        if self.env is None:
            self.env = frame.env
        elif frame.env != self.env:
            raise ValueError(
                f"cross-environment insert: buffer holds {self.env!r}, got {frame.env!r}"
            )
        if len(self.slots) < self.capacity:
            idx = len(self.slots)
            self.slots.append(frame)
        else:
            idx = self.next_slot
            self.slots[idx] = frame
            self.next_slot = (self.next_slot + 1) % self.capacity
        labels = classify_against(frame, self.slots, self.rule)
        n = len(self.slots)
        self.relations[idx, :n] = labels
        self.relations[:n, idx] = labels

    def sample_triplet(self, rng: np.random.Generator) -> Triplet | None:
        """Uniform anchor, then uniform positive/negative among its labeled
        partners; re-draws the anchor up to redraw_cap times and returns None
        when no valid triplet comes up (the caller skips the step)."""
        n = len(self.slots)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        rel = self.relations[:n, :n]
        for _ in range(self.redraw_cap):
            a = int(rng.integers(n))
            row = rel[a]
            pos = np.flatnonzero(row == Label.POSITIVE.value)
            pos = pos[pos != a]
            neg = np.flatnonzero(row == Label.NEGATIVE.value)
            if pos.size == 0 or neg.size == 0:
                continue
            p = int(pos[rng.integers(pos.size)])
            q = int(neg[rng.integers(neg.size)])
            assert rel[a, p] == Label.POSITIVE.value and rel[a, q] == Label.NEGATIVE.value
            return Triplet(self.slots[a], self.slots[p], self.slots[q])
        return None

    # checkpoint support

    def state_dict(self) -> dict:
        return {
            "env": self.env,
            "next_slot": self.next_slot,
            "frames": [{"seq": f.seq, "index": f.index} for f in self.slots],
        }

    def restore(self, state: dict, frames: list) -> None:
        """Reload from a checkpoint: `frames` must match state['frames'] in
        order. Relations are recomputed from the rule (ground truth is a pure
        function of the frames)."""
        self.reset()
        self.env = state["env"]
        self.slots = list(frames)
        self.next_slot = state["next_slot"]
        n = len(self.slots)
        for i, f in enumerate(self.slots):
            labels = classify_against(f, self.slots[: i + 1], self.rule)
            self.relations[i, : i + 1] = labels
            self.relations[: i + 1, i] = labels
