"""Sharing a drink: the mass-1 dual of the averaging process.

``xi_t(u, v)``, the weight of the initial value at ``u`` in the value at
``v`` at time t, can be read off two ways for the same update sequence:
as the level at ``v`` of SAD started at ``u`` and run forward, or as the
level at ``u`` of SAD started at ``v`` and run over the reversed sequence.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _kernels as K
from .averaging import Profile, run
from .graphs import Graph
from .schedule import ClockConfig, UpdateSequence, explore_local, reverse


@dataclass
class SadProfile:
    values: dict
    source: int

    def __getitem__(self, v: int):
        return self.values.get(v, 0.0)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def support(self) -> list[int]:
        return [v for v, x in self.values.items() if x > 0]

    def total(self):
        return sum(self.values.values())

    def max(self):
        return max(self.values.values())

    def energy(self):
        return sum(x * x for x in self.values.values())


def run_sad(g: Graph, source: int, seq: UpdateSequence, exact: bool = False) -> SadProfile:
    """Start from a full glass at ``source`` and share along every step of ``seq``.

    Steps between two empty glasses are applied too; they are no-ops.  Only
    positive levels are kept, and zeros arise from absence, never clipping.
    """
    out = run(g, Profile({source: 1.0}), seq, exact=exact)
    return SadProfile({v: x for v, x in out.values.items() if x != 0}, source)


def dual_contributions(g: Graph, target: int, seq: UpdateSequence, exact: bool = False) -> SadProfile:
    """SAD from ``target`` over the reversed sequence; entry u is xi_t(u, target)."""
    return run_sad(g, target, reverse(seq), exact=exact)


def dual_at_root(g: Graph, cfg: ClockConfig, horizon: float, target: int,
                 cap: int | None = None) -> SadProfile:
    """Dual SAD profile of ``target`` on any graph via its backward cluster."""
    loc = explore_local(g, target, cfg, horizon, backward=True, cap=cap)
    water = np.zeros(loc.gid.shape[0])
    water[0] = 1.0
    K.apply_events(water, loc.a, loc.b, loc.mu, True)
    nz = np.flatnonzero(water)
    return SadProfile({int(loc.gid[i]): float(water[i]) for i in nz}, target)


def forward_sad_at_root(g: Graph, cfg: ClockConfig, horizon: float, source: int,
                        cap: int | None = None) -> SadProfile:
    """Forward SAD profile of ``source`` at ``horizon``; entry v is xi_t(source, v)."""
    loc = explore_local(g, source, cfg, horizon, backward=False, cap=cap)
    water = np.zeros(loc.gid.shape[0])
    water[0] = 1.0
    K.apply_events(water, loc.a, loc.b, loc.mu, False)
    nz = np.flatnonzero(water)
    return SadProfile({int(loc.gid[i]): float(water[i]) for i in nz}, source)


@dataclass
class ContributionMatrix:
    entries: dict = field(default_factory=dict)
    horizon: float = 0.0
    row_sums: dict = field(default_factory=dict)
    col_sums: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.entries.get(key, 0.0)

    def to_csv(self, g: Graph, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "target", "distance", "xi", "bound"])
        for (u, v), x in sorted(self.entries.items()):
            d = g.distance(u, v)
            w.writerow([g.label(u), g.label(v), d, repr(float(x)), repr(1.0 / (d + 1))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def contribution_matrix(g: Graph, sources: Iterable[int], targets: Iterable[int],
                        seq: UpdateSequence, exact: bool = False) -> ContributionMatrix:
    """xi_t(u, v) for u in sources, v in targets, one dual SAD run per target.

    A forward SAD run per source supplies the row sums over the full support.
    """
    sources = list(sources)
    targets = list(targets)
    cm = ContributionMatrix(horizon=seq.horizon)
    for v in targets:
        dual = dual_contributions(g, v, seq, exact=exact)
        cm.col_sums[v] = dual.total()
        for u in sources:
            cm.entries[(u, v)] = dual[u]
    for u in sources:
        cm.row_sums[u] = run_sad(g, u, seq, exact=exact).total()
    return cm
