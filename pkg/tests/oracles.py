"""Brute-force reference computations used by the tests.

Everything here is deliberately naive: plain loops in the linear domain,
no shared code with the production algorithms beyond the table inputs.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from hisp.core import Hypothesis
from hisp.lingauss import GaussianState


def make_hypothesis(hid, box, weight=1.0, cov_scale=25.0, velocity=(0.0, 0.0), feature=None):
    cx, cy, w, h = box
    mean = np.array([cx, cy, velocity[0], velocity[1], w, h], dtype=float)
    return Hypothesis(id=hid, state=GaussianState(mean, cov_scale * np.eye(6)), weight=weight,
                      path=(0,), path_start=0, origin=(0, hid), birth_time=0, feature=feature)


def enumerate_associations(table):
    """Exact marginals over injective association maps.

    Each hypothesis picks phi or one measurement it has a non-zero entry for;
    no two hypotheses share a measurement; every measurement left over is
    explained by the undetected population or clutter (factor C(z)).
    Returns ``{(k, j or None): probability}``.
    """
    n = len(table.rows)
    choices = [[None] + sorted(r.entries) for r in table.rows]
    totals = {}
    Z = 0.0
    for combo in itertools.product(*choices):
        used = [j for j in combo if j is not None]
        if len(used) != len(set(used)):
            continue
        w = 1.0
        for k, j in enumerate(combo):
            w *= table.rows[k].w_phi if j is None else table.rows[k].entries[j]
        for j in range(table.n_meas):
            if j not in used:
                w *= table.C[j]
        Z += w
        for k, j in enumerate(combo):
            totals[(k, j)] = totals.get((k, j), 0.0) + w
    return {key: val / Z for key, val in totals.items()}, n


def nested_external_weights(table):
    """Direct evaluation of the external weights by nested loops (linear domain).

    Returns ``(rows, rows_phi, u, u_phi, clutter)``: ``rows[k][j]`` for the
    non-zero entries, ``rows_phi[k]``, and per-measurement lists for the
    undetected population and clutter.
    """
    m = table.n_meas
    C = [float(c) for c in table.C]
    v = [float(x) for x in table.v]
    K = table.w_u_phi ** table.n_u
    for x in v:
        K *= 1.0 - x

    def prod_C(skip):
        p = 1.0
        for jj in range(m):
            if jj != skip:
                p *= C[jj]
        return p

    def others(skip_row, skip_meas):
        p = 1.0
        for r in table.rows:
            if r.index == skip_row:
                continue
            b = r.w_phi
            for jj, w in r.entries.items():
                if jj != skip_meas:
                    b += w / C[jj]
            p *= b
        return p

    rows = [{j: K * prod_C(j) * others(r.index, j) for j in r.entries} for r in table.rows]
    rows_phi = [K * prod_C(None) * others(r.index, None) for r in table.rows]
    u = [K / table.w_u_phi * prod_C(j) * others(None, j) for j in range(m)]
    u_phi = K / table.w_u_phi * prod_C(None) * others(None, None)
    clutter = [K / (1.0 - v[j]) * prod_C(j) * others(None, j) for j in range(m)]
    return rows, rows_phi, u, u_phi, clutter


def exhaustive_extraction(problem):
    """Best objective over all subsets that cover every coverable window
    measurement exactly once.

    Walks every include/exclude decision; only subsets with overlapping
    coverage are cut, no objective bound is used.
    """
    cands = problem.candidates
    target = set(problem.window_measurements) & {m for c in cands for m in c.covered}
    best = -math.inf

    def walk(i, seen, score):
        nonlocal best
        if i == len(cands):
            if seen == target:
                best = max(best, score)
            return
        walk(i + 1, seen, score)
        if not seen & cands[i].covered:
            walk(i + 1, seen | cands[i].covered, score + cands[i].log_weight)

    walk(0, frozenset(), 0.0)
    return best


def brute_external_weight(table, k, j):
    """External weight of row ``k`` taking measurement ``j`` (``None`` for phi),
    summed over every injective assignment of the other rows."""
    K = table.w_u_phi ** table.n_u
    for x in table.v:
        K *= 1.0 - float(x)
    others = [r for r in table.rows if r.index != k]
    choices = [[None] + [jj for jj in sorted(r.entries) if jj != j] for r in others]
    total = 0.0
    for combo in itertools.product(*choices):
        used = [jj for jj in combo if jj is not None]
        if len(used) != len(set(used)):
            continue
        w = 1.0
        for r, jj in zip(others, combo):
            w *= r.w_phi if jj is None else r.entries[jj] / table.C[jj]
        total += w
    prod_c = 1.0
    for jj in range(table.n_meas):
        if jj != j:
            prod_c *= float(table.C[jj])
    return K * prod_c * total
