"""Per-period Markowitz problem over active MBSAs, as a second-order cone program.

The problem is assembled in the conic standard form

    minimize    obj @ x
    subject to  A @ x + s = b,   s in K

where K is a product of a zero cone (equalities), a nonnegative cone
(inequalities) and at most one second-order cone (the risk limit). The
variable vector is laid out as ``[h, q, c, u, v]`` with ``u >= |h - h_prev|``
and ``v >= (-h)_+`` the trade and shorting epigraph variables; the softened
variant appends ``w >= |P o (h - S q)|``.

All money quantities are divided by the portfolio value before solving so
that the pinned cash variable equals one; results are scaled back.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .core import ArbSnapshot
from .errors import DimensionError, SolverError, ValidationError

logger = logging.getLogger(__name__)

TIE_BREAK_WEIGHT = 1e-12
SNAP_FRACTION = 1e-9
BINDING_FRACTION = 1e-6


@dataclass(frozen=True)
class Tolerances:
    abs_frac: float = 1e-6  # tol_abs = abs_frac * c
    rel: float = 1e-6
    solver_eps: float = 1e-9
    max_iter: int = 200


@dataclass(frozen=True)
class MarkowitzInputs:
    snapshot: ArbSnapshot
    P: np.ndarray
    Sigma_root: np.ndarray
    kappa_trade: np.ndarray
    kappa_short: np.ndarray
    prev_q: np.ndarray
    prev_h: np.ndarray
    prev_cash: float
    gamma_trade: float = 1.0
    gamma_short: float = 1.0
    gamma_hold: float | None = None
    eta: float = 1.0
    sigma_per_period: float = 0.1 / np.sqrt(250)
    soften: bool = False

    def __post_init__(self):
        for name in ("P", "Sigma_root", "kappa_trade", "kappa_short", "prev_q", "prev_h"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, K = self.snapshot.S.shape
        if self.P.shape != (n,) or self.prev_h.shape != (n,):
            raise DimensionError("P and prev_h must have one entry per asset")
        if self.kappa_trade.shape != (n,) or self.kappa_short.shape != (n,):
            raise DimensionError("cost vectors must have one entry per asset")
        if self.prev_q.shape != (K,):
            raise DimensionError(f"prev_q has {self.prev_q.size} entries for {K} active MBSAs")
        if self.Sigma_root.shape != (K, K):
            raise DimensionError(f"Sigma_root has shape {self.Sigma_root.shape}, expected {(K, K)}")
        if self.eta < 1:
            raise ValidationError(f"eta must be >= 1, got {self.eta}")
        if not self.sigma_per_period > 0:
            raise ValidationError("sigma_per_period must be positive")
        if self.gamma_trade < 0 or self.gamma_short < 0 or (self.gamma_hold or 0) < 0:
            raise ValidationError("gamma weights must be nonnegative")
        if np.any(self.kappa_trade < 0) or np.any(self.kappa_short < 0):
            raise ValidationError("cost vectors must be nonnegative")

    @property
    def n_assets(self):
        return self.snapshot.S.shape[0]

    @property
    def n_arbs(self):
        return self.snapshot.S.shape[1]

    @property
    def value(self):
        """Pinned portfolio value c = c_{t-1} + p_t' q_{t-1}."""
        return float(self.prev_cash + self.snapshot.p @ self.prev_q)


@dataclass
class ConicProblem:
    objective: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list  # (kind, dim) with kind in {"zero", "nonneg", "soc"}
    layout: dict  # variable name -> slice
    row_blocks: dict  # constraint name -> slice of rows
    scale: float
    inputs: MarkowitzInputs
    soften: bool = False

    @property
    def n_vars(self):
        return self.A.shape[1]


@dataclass
class RebalanceResult:
    q: np.ndarray
    h: np.ndarray
    cash: float
    objective: float
    diagnostics: dict = field(default_factory=dict)
    binding: list = field(default_factory=list)


@dataclass
class ViolationReport:
    violations: dict
    tolerances: dict
    enforced: dict

    @property
    def passed(self):
        return all(
            self.violations[name] <= self.tolerances[name]
            for name in self.violations
            if self.enforced[name]
        )

    @property
    def max_violation(self):
        vals = [max(v, 0.0) for name, v in self.violations.items() if self.enforced[name]]
        return max(vals, default=0.0)

    def failures(self):
        return [
            name for name, v in self.violations.items()
            if self.enforced[name] and v > self.tolerances[name]
        ]


def _check_value(inputs):
    value = inputs.value
    if not value > 0:
        raise ValidationError(f"portfolio value must be positive to rebalance, got {value}")
    return value


def _assemble(inputs, soften):
    value = _check_value(inputs)
    snap = inputs.snapshot
    n, K = snap.S.shape
    S, P, p = snap.S, inputs.P, snap.p
    names = ["h", "q", "c", "u", "v"] + (["w"] if soften else [])
    sizes = {"h": n, "q": K, "c": 1, "u": n, "v": n, "w": n}
    layout, pos = {}, 0
    for name in names:
        layout[name] = slice(pos, pos + sizes[name])
        pos += sizes[name]
    N = pos

    def block(rows, parts):
        """Sparse row block from {var: matrix} pieces."""
        cols = []
        for name in names:
            piece = parts.get(name)
            cols.append(sp.csr_matrix((rows, sizes[name])) if piece is None else sp.csr_matrix(piece))
        return sp.hstack(cols, format="csr")

    I = sp.identity(n, format="csr")
    h_prev = inputs.prev_h / value

    eq_rows, eq_b, row_blocks = [], [], {}
    ineq_rows, ineq_b = [], []

    def add(target, bvec, name, mat, rhs):
        target.append(mat)
        bvec.append(np.atleast_1d(np.asarray(rhs, dtype=float)))
        row_blocks.setdefault(("zero" if target is eq_rows else "nonneg", name), mat.shape[0])

    if not soften:
        add(eq_rows, eq_b, "arb_to_asset", block(n, {"h": I, "q": -S}), np.zeros(n))
    add(eq_rows, eq_b, "cash_pin", block(1, {"c": np.ones((1, 1))}), 1.0)
    add(eq_rows, eq_b, "cash_neutral", block(1, {"q": p[None, :]}), 0.0)
    retired = np.flatnonzero(snap.xi <= 0)
    if retired.size:
        E = sp.csr_matrix((np.ones(retired.size), (np.arange(retired.size), retired)), shape=(retired.size, K))
        add(eq_rows, eq_b, "retired", block(retired.size, {"q": E}), np.zeros(retired.size))

    add(ineq_rows, ineq_b, "trade_up", block(n, {"h": I, "u": -I}), h_prev)
    add(ineq_rows, ineq_b, "trade_down", block(n, {"h": -I, "u": -I}), -h_prev)
    add(ineq_rows, ineq_b, "short_epi", block(n, {"h": -I, "v": -I}), np.zeros(n))
    add(ineq_rows, ineq_b, "short_nonneg", block(n, {"v": -I}), np.zeros(n))
    add(ineq_rows, ineq_b, "collateral",
        block(1, {"v": (inputs.eta - 1.0) * P[None, :], "c": -np.ones((1, 1))}), 0.0)
    live = np.flatnonzero(snap.xi > 0)
    if live.size:
        D = sp.csr_matrix((np.abs(p[live]), (np.arange(live.size), live)), shape=(live.size, K))
        xi_col = -snap.xi[live][:, None]
        add(ineq_rows, ineq_b, "size_upper", block(live.size, {"q": D, "c": xi_col}), np.zeros(live.size))
        add(ineq_rows, ineq_b, "size_lower", block(live.size, {"q": -D, "c": xi_col}), np.zeros(live.size))
    if soften:
        DP = sp.diags(P, format="csr")
        PS = DP @ sp.csr_matrix(S)
        add(ineq_rows, ineq_b, "hold_up", block(n, {"h": DP, "q": -PS, "w": -I}), np.zeros(n))
        add(ineq_rows, ineq_b, "hold_down", block(n, {"h": -DP, "q": PS, "w": -I}), np.zeros(n))

    blocks = [sp.vstack(eq_rows), sp.vstack(ineq_rows)]
    rhs = [np.concatenate(eq_b), np.concatenate(ineq_b)]
    cones = [("zero", blocks[0].shape[0]), ("nonneg", blocks[1].shape[0])]
    if K:
        soc_top = block(1, {"c": -inputs.sigma_per_period * np.ones((1, 1))})
        soc_body = block(K, {"q": -inputs.Sigma_root})
        blocks.append(sp.vstack([soc_top, soc_body]))
        rhs.append(np.zeros(K + 1))
        cones.append(("soc", K + 1))
    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(rhs)

    # row slices per named constraint, in assembly order
    slices, start = {}, 0
    for (_, name), rows in row_blocks.items():
        slices[name] = slice(start, start + rows)
        start += rows
    if K:
        slices["risk"] = slice(start, start + K + 1)

    obj = np.zeros(N)
    obj[layout["q"]] = -snap.alpha
    obj[layout["u"]] = inputs.gamma_trade * inputs.kappa_trade
    obj[layout["v"]] = inputs.gamma_short * inputs.kappa_short
    if inputs.gamma_trade == 0 or not np.any(inputs.kappa_trade > 0):
        # deterministic minimum-turnover choice among tied optima
        obj[layout["u"]] += TIE_BREAK_WEIGHT * P
    if inputs.gamma_short == 0 or not np.any(inputs.kappa_short > 0):
        obj[layout["v"]] += TIE_BREAK_WEIGHT * P
    if soften:
        obj[layout["w"]] = inputs.gamma_hold
    return ConicProblem(obj, A, b, cones, layout, slices, value, inputs, soften)


def build_problem(inputs):
    """Hard variant: holdings tied to MBSA positions by h = S q."""
    return _assemble(inputs, soften=False)


def soften_problem(inputs):
    """Softened variant: h = S q replaced by a gamma_hold-weighted l1 penalty."""
    if not (inputs.gamma_hold or 0) > 0:
        raise ValidationError("softened problem requires gamma_hold > 0")
    return _assemble(inputs, soften=True)


def build(inputs):
    return soften_problem(inputs) if inputs.soften else build_problem(inputs)


_CONES = {
    "zero": clarabel.ZeroConeT,
    "nonneg": clarabel.NonnegativeConeT,
    "soc": clarabel.SecondOrderConeT,
}


def objective_value(inputs, q, h, soften=None):
    """Objective of the rebalance problem evaluated from raw inputs, in USD."""
    soften = inputs.soften if soften is None else soften
    obj = (
        inputs.snapshot.alpha @ q
        - inputs.gamma_trade * inputs.kappa_trade @ np.abs(h - inputs.prev_h)
        - inputs.gamma_short * inputs.kappa_short @ np.maximum(-h, 0.0)
    )
    if soften:
        obj -= inputs.gamma_hold * np.abs(inputs.P * (h - inputs.snapshot.S @ q)).sum()
    return float(obj)


def _polish(problem, q, h):
    """Clean solver output in scaled units so hard constraints hold to rounding."""
    inputs = problem.inputs
    snap = inputs.snapshot
    p, xi = snap.p, snap.xi
    q = q.copy()
    q[xi <= 0] = 0.0
    q[np.abs(q * p) < SNAP_FRACTION] = 0.0
    free = xi > 0
    pf = p[free]
    if pf @ pf > 0:
        q[free] -= pf * (p @ q) / (pf @ pf)
    if q.size:
        risk = np.linalg.norm(inputs.Sigma_root @ q)
        if risk > inputs.sigma_per_period:
            q *= inputs.sigma_per_period / risk
    if not problem.soften:
        h = snap.S @ q
    return q, h


def solve(problem, tol=None):
    """Solve a :class:`ConicProblem` and audit the result with :func:`verify`.

    Raises
    ------
    SolverError
        If the solver does not report success, or the polished point fails
        the independent feasibility audit.
    """
    tol = tol or Tolerances()
    inputs = problem.inputs
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol.solver_eps
    settings.tol_gap_rel = tol.solver_eps
    settings.tol_feas = tol.solver_eps
    settings.max_iter = tol.max_iter
    N = problem.n_vars
    cones = [_CONES[kind](dim) for kind, dim in problem.cones if dim]
    started = time.perf_counter()
    solver = clarabel.DefaultSolver(
        sp.csc_matrix((N, N)), problem.objective, problem.A, problem.b, cones, settings
    )
    sol = solver.solve()
    elapsed = time.perf_counter() - started
    status = str(sol.status)
    if status not in ("Solved", "AlmostSolved"):
        raise SolverError(f"conic solver returned status {status}", status=status)

    x = np.asarray(sol.x)
    lay = problem.layout
    q, h = _polish(problem, x[lay["q"]], x[lay["h"]])
    scale = problem.scale
    q, h = q * scale, h * scale
    result = RebalanceResult(
        q=q,
        h=h,
        cash=scale * float(x[lay["c"]][0]),
        objective=0.0,
        diagnostics={"status": status, "iterations": int(sol.iterations), "solve_time": elapsed},
    )
    # c is pinned by an equality; use the exact value rather than the solver's
    result.cash = inputs.value
    result.objective = objective_value(inputs, q, h, problem.soften)
    report = verify(result, inputs, tol)
    result.diagnostics["max_violation"] = report.max_violation
    result.diagnostics["violations"] = report.violations
    result.binding = _binding(result, inputs)
    if not report.passed:
        raise SolverError(
            f"solution failed feasibility audit: {', '.join(report.failures())}", status=status
        )
    return result


def rebalance(inputs, tol=None):
    return solve(build(inputs), tol)


def verify(result, inputs, tol=None):
    """Recompute every constraint residual of a rebalance from raw inputs.

    Positive entries are violations, in USD. The arb-to-asset residual is
    reported for softened problems but not enforced.
    """
    tol = tol or Tolerances()
    snap = inputs.snapshot
    q, h, c = np.asarray(result.q, float), np.asarray(result.h, float), float(result.cash)
    p, xi = snap.p, snap.xi
    tol_abs = tol.abs_frac * abs(c)
    viol, tols = {}, {}

    viol["cash_pin"] = abs(c - inputs.value)
    tols["cash_pin"] = tol_abs
    viol["cash_neutral"] = abs(float(p @ q))
    tols["cash_neutral"] = tol_abs
    viol["arb_to_asset"] = float(np.abs(inputs.P * (h - snap.S @ q)).max(initial=0.0))
    tols["arb_to_asset"] = tol_abs
    viol["collateral"] = (inputs.eta - 1.0) * float(inputs.P @ np.maximum(-h, 0.0)) - c
    tols["collateral"] = tol_abs
    if q.size:
        viol["risk"] = float(np.linalg.norm(inputs.Sigma_root @ q)) - inputs.sigma_per_period * c
        tols["risk"] = tol.rel * inputs.sigma_per_period * c
        excess = np.abs(q) * np.abs(p) - xi * c - tol.rel * xi * c
        k = int(np.argmax(excess))
        viol["size_limit"] = float(np.abs(q[k]) * np.abs(p[k]) - xi[k] * c)
        tols["size_limit"] = tol.rel * xi[k] * c
    else:
        viol["risk"] = viol["size_limit"] = 0.0
        tols["risk"] = tols["size_limit"] = 0.0
    viol["positive_value"] = -c
    tols["positive_value"] = 0.0
    enforced = {name: True for name in viol}
    enforced["arb_to_asset"] = not inputs.soften
    return ViolationReport(viol, tols, enforced)


def _binding(result, inputs):
    c = result.cash
    snap = inputs.snapshot
    slack_tol = BINDING_FRACTION * c
    out = []
    if result.q.size:
        if inputs.sigma_per_period * c - np.linalg.norm(inputs.Sigma_root @ result.q) <= slack_tol * inputs.sigma_per_period:
            out.append("risk")
        gap = snap.xi * c - np.abs(result.q) * np.abs(snap.p)
        out += [f"size:{snap.active_ids[k]}" for k in np.flatnonzero((gap <= slack_tol) & (snap.xi > 0))]
    if inputs.eta > 1 and c - (inputs.eta - 1) * inputs.P @ np.maximum(-result.h, 0.0) <= slack_tol:
        out.append("collateral")
    return out


def hold_previous(inputs):
    """Fallback rebalance: keep prior MBSA positions, no optimization."""
    q = inputs.prev_q.copy()
    h = inputs.snapshot.S @ q
    return RebalanceResult(
        q=q,
        h=h,
        cash=inputs.value,
        objective=objective_value(inputs, q, h, soften=False),
        diagnostics={"status": "fallback_hold"},
    )
