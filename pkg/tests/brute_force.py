"""Loop-by-loop reference versions of the estimators, used to cross-check the vectorised code.

Everything here works on plain Python lists and floats, one subject and one
age at a time, in the same notation as the formulas.
"""
from __future__ import annotations

import numpy as np

from prevalent_cif.survival.cohort import Cohort, StudyDesign


def synthetic_cohort(rng: np.random.Generator, n: int, design: StudyDesign | None = None) -> Cohort:
    """Continuous-age cohort with delayed entry and censoring (no ties almost surely)."""
    design = design or StudyDesign(c_lower=40, c_upper=69, tau=80)
    v1, v2, d1, d2, r = [], [], [], [], []
    while len(r) < n:
        rec = rng.uniform(design.c_lower, design.c_upper)
        t1 = rng.uniform(20, 95) if rng.random() < 0.6 else np.inf
        t2 = t1 + rng.exponential(6.0) if np.isfinite(t1) else rng.uniform(30, 100)
        if t2 < rec:
            continue
        c = rec + rng.uniform(5, 25)
        x2 = min(t2, c)
        x1 = min(t1, x2)
        v1.append(x1)
        v2.append(x2)
        d1.append(int(t1 <= x2))
        d2.append(int(t2 <= c))
        r.append(rec)
    return Cohort(np.array(v1), np.array(v2), np.array(d1), np.array(d2), np.array(r), design)


def at_risk(entry, exit_, t):
    return sum(1 for a, b in zip(entry, exit_) if a <= t <= b)


def km(entry, exit_, event):
    """{event age: S(age)} by the product over distinct event ages."""
    ages = sorted({x for x, e in zip(exit_, event) if e})
    s, out = 1.0, {}
    for u in ages:
        d = sum(1 for x, e in zip(exit_, event) if e and x == u)
        s *= 1.0 - d / at_risk(entry, exit_, u)
        out[u] = s
    return out


def step_at(table, t, left=False):
    """Right-continuous (or left-limit) value of a {age: value} step function starting at 1."""
    value = 1.0
    for u in sorted(table):
        if u < t or (u == t and not left):
            value = table[u]
    return value


def aj_cif(c: Cohort, t: float) -> float:
    member = [not p for p in c.prevalent]
    entry = [x for x, m in zip(c.r, member) if m]
    exit_ = [x for x, m in zip(c.v1, member) if m]
    event = [bool(a or b) for a, b, m in zip(c.delta1, c.delta2, member) if m]
    cause = [bool(a) for a, m in zip(c.delta1, member) if m]
    s_first = km(entry, exit_, event)
    total = 0.0
    for u in sorted({x for x, k in zip(exit_, cause) if k}):
        if u > t:
            continue
        d1 = sum(1 for x, k in zip(exit_, cause) if k and x == u)
        total += step_at(s_first, u, left=True) * d1 / at_risk(entry, exit_, u)
    return total


def new_cif(c: Cohort, t: float) -> float:
    n = len(c)
    s2 = km(c.r, c.v2, c.delta2)
    total = 0.0
    for i in range(n):
        if c.delta1[i] and c.delta2[i] and c.v1[i] <= t:
            v = c.v2[i]
            total += step_at(s2, v, left=True) * n / at_risk(c.r, c.v2, v)
    return total / n


def tie_cif(c: Cohort, t: float) -> float:
    s2 = km(c.r, c.v2, c.delta2)
    total = 0.0
    for t2 in sorted(s2):
        d_f2 = step_at(s2, t2, left=True) - s2[t2]
        dead_here = [i for i in range(len(c)) if c.delta2[i] and c.v2[i] == t2]
        surv = 1.0
        for t1 in sorted({c.v1[i] for i in dead_here if c.delta1[i]}):
            if t1 > t:
                break
            events = sum(1 for i in dead_here if c.delta1[i] and c.v1[i] == t1)
            risk = sum(1 for i in dead_here if c.v1[i] >= t1)
            surv *= 1.0 - events / risk
        total += (1.0 - surv) * d_f2
    return total


def _aux_pair(entry, exit_, event, scale, s_table, v):
    """Per-subject (A_i(v), B_i(v)) for one target age v; Ybar is a count over `scale`."""
    ages = sorted(s_table)
    a_out, b_out = [], []
    ybar_v = at_risk(entry, exit_, v) / scale
    for e_in, e_out, ev in zip(entry, exit_, event):
        jump = 1.0 / (at_risk(entry, exit_, e_out) / scale) if (ev and e_out < v) else 0.0
        integral = 0.0
        for s in ages:
            if e_in <= s <= e_out and s < v and s_table[s] > 0:
                d = sum(1 for x, f in zip(exit_, event) if f and x == s)
                ybar = at_risk(entry, exit_, s) / scale
                integral += (step_at(s_table, s, left=True) / s_table[s]) * (d / scale) / ybar**2
        a_out.append(jump - integral)
        b_out.append(((1.0 if e_in <= v <= e_out else 0.0) - ybar_v) / ybar_v)
    return a_out, b_out


def influence_new(c: Cohort, t: float, include_auxiliary: bool = False) -> list:
    n = len(c)
    s2 = km(c.r, c.v2, c.delta2)
    g = new_cif(c, t)
    k = [0.0] * n
    for i in range(n):
        if c.delta1[i] and c.delta2[i]:
            v = c.v2[i]
            k[i] = step_at(s2, v, left=True) * n / at_risk(c.r, c.v2, v)
    psi = [k[i] * (c.v1[i] <= t) - g for i in range(n)]
    if not include_auxiliary:
        return psi
    for j in range(n):
        w = k[j] * (c.v1[j] <= t)
        if w == 0:
            continue
        a, b = _aux_pair(c.r, c.v2, c.delta2, n, s2, c.v2[j])
        for i in range(n):
            psi[i] -= w * (a[i] + b[i]) / n
    return psi


def influence_aj(c: Cohort, t: float, include_auxiliary: bool = False) -> list:
    n = len(c)
    member = [not p for p in c.prevalent]
    idx = [i for i in range(n) if member[i]]
    n0 = len(idx)
    entry = [c.r[i] for i in idx]
    exit_ = [c.v1[i] for i in idx]
    event = [bool(c.delta1[i] or c.delta2[i]) for i in idx]
    s_first = km(entry, exit_, event)
    k = [0.0] * n
    for i in idx:
        if c.delta1[i]:
            v = c.v1[i]
            k[i] = step_at(s_first, v, left=True) * n / at_risk(entry, exit_, v)
    g = sum(k[i] * (c.v1[i] <= t) for i in range(n)) / n
    pi_hat = n0 / n
    psi = [(k[i] * (c.v1[i] <= t) - g / pi_hat) if member[i] else 0.0 for i in range(n)]
    if not include_auxiliary:
        return psi
    for j in idx:
        w = k[j] * (c.v1[j] <= t)
        if w == 0:
            continue
        a, b = _aux_pair(entry, exit_, event, n0, s_first, c.v1[j])
        for pos, i in enumerate(idx):
            psi[i] -= w * (a[pos] + b[pos]) / n0
    return psi
