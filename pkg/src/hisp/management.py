"""Hypothesis pruning and merging."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import Hypothesis, MultiTargetConfiguration
from .lingauss import NumericalError, mahalanobis, moment_match

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PruneMergeConfig:
    prune_threshold: float = 1e-3
    merge_distance: float = 4.0
    max_hypotheses: int = 10_000_000
    window: int = 5

    def __post_init__(self):
        if not 0.0 < self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must be in (0, 1)")
        if self.merge_distance <= 0:
            raise ValueError("merge_distance must be positive")
        if self.max_hypotheses < 1:
            raise ValueError("max_hypotheses must be >= 1")


def _rank_key(h: Hypothesis):
    return (-h.weight, h.birth_time, h.id)


def prune(config: MultiTargetConfiguration, pm: PruneMergeConfig) -> MultiTargetConfiguration:
    kept = [h for h in config.hypotheses if h.weight > pm.prune_threshold]
    if len(kept) > pm.max_hypotheses:
        kept = sorted(kept, key=_rank_key)[:pm.max_hypotheses]
        kept.sort(key=lambda h: h.id)
    graveyard = tuple(d for d in config.graveyard if d.weight > pm.prune_threshold)
    return replace(config, hypotheses=tuple(kept), graveyard=graveyard)


def _merge_group(seed: Hypothesis, members: list[Hypothesis]) -> Hypothesis:
    group = [seed] + members
    state = moment_match([h.weight for h in group], [h.state for h in group])
    return replace(seed, state=state, weight=sum(h.weight for h in group))


def merge_densities(config: MultiTargetConfiguration, pm: PruneMergeConfig,
                    diagnostics: list | None = None) -> MultiTargetConfiguration:
    """Greedy Mahalanobis clustering seeded at the heaviest remaining hypothesis.

    A member joins a cluster only while the cluster's total weight stays at
    most one; the merged hypothesis keeps the seed's identity and path.
    """
    hyps = list(config.hypotheses)
    while True:
        merged = _merge_pass(hyps, pm, diagnostics)
        if len(merged) == len(hyps):
            break
        hyps = merged
    hyps.sort(key=lambda h: h.id)
    return replace(config, hypotheses=tuple(hyps))


def _merge_pass(hyps, pm, diagnostics):
    remaining = sorted(hyps, key=_rank_key)
    if not remaining:
        return []
    means = np.stack([h.state.mean for h in remaining])
    traces = np.array([np.trace(h.state.cov) for h in remaining])
    # cheap necessary condition for closeness: d^2 >= |dm|^2 / trace(pooled covariance)
    bound = pm.merge_distance ** 2
    alive = list(range(len(remaining)))
    out = []
    while alive:
        i = alive.pop(0)
        seed = remaining[i]
        idx = np.array(alive, dtype=int)
        near = set()
        if idx.size:
            diff = means[idx] - means[i]
            ok = np.einsum("ij,ij->i", diff, diff) < bound * 0.5 * (traces[idx] + traces[i])
            near = set(idx[ok].tolist())
        members, rest = [], []
        total = seed.weight
        for j in alive:
            h = remaining[j]
            close = False
            if j in near:
                try:
                    close = mahalanobis(seed.state, h.state) < pm.merge_distance
                except NumericalError:
                    close = False
            if close and total + h.weight <= 1.0:
                members.append(h)
                total += h.weight
            else:
                rest.append(j)
        alive = rest
        if not members:
            out.append(seed)
            continue
        try:
            out.append(_merge_group(seed, members))
        except (NumericalError, np.linalg.LinAlgError):
            if diagnostics is not None:
                diagnostics.append(("merge_failed", seed.id))
            log.warning("moment matching failed around hypothesis %s; left unmerged", seed.id)
            out.append(seed)
            out.extend(members)
    return out


def merge_same_path(config: MultiTargetConfiguration) -> MultiTargetConfiguration:
    """Merge hypotheses whose observation paths agree over the window.

    Groups whose summed weight would exceed one are left as they are.
    """
    groups: dict[tuple, list[Hypothesis]] = {}
    for h in config.hypotheses:
        groups.setdefault(h.window_path(config.frame, config.window), []).append(h)
    out = []
    for group in groups.values():
        if len(group) == 1 or sum(h.weight for h in group) > 1.0:
            out.extend(group)
            continue
        group.sort(key=_rank_key)
        try:
            out.append(_merge_group(group[0], group[1:]))
        except (NumericalError, np.linalg.LinAlgError):
            out.extend(group)
    out.sort(key=lambda h: h.id)
    return replace(config, hypotheses=tuple(out))
