"""Generic mixed-integer linear programs and an exact branch-and-bound solver.

The solver runs best-first branch-and-bound on the binary variables, bounding
each node with an LP relaxation (scipy's HiGHS backend). ``optimal`` and
``infeasible`` statuses are certificates: the search tree was exhausted.
Hitting a time or node limit yields an uncertified status carrying the
incumbent, if any.

Branching picks the most fractional binary, ties broken by lowest variable
index, so solves are deterministic for a fixed model.
"""

from __future__ import annotations

import heapq
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

try:  # vendored HiGHS binding: persistent models, warm-started re-solves
    from scipy.optimize._highspy import _core as _highs_core
except Exception:  # pragma: no cover - older scipy
    _highs_core = None

from .errors import MalformedModel, Unbounded

BINARY = "binary"
CONTINUOUS = "continuous"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"
ITER_LIMIT = "iter_limit"

LESS_EQUAL = "<="
GREATER_EQUAL = ">="
EQUAL = "="


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float


@dataclass
class Constraint:
    coeffs: tuple[tuple[int, float], ...]
    relation: str
    rhs: float
    name: str = ""


@dataclass
class MilpModel:
    """Variables, sparse linear constraints, and a linear objective."""

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    sense: str = "min"
    objective_constant: float = 0.0

    def add_var(self, name: str | None = None, kind: str = CONTINUOUS,
                lb: float = 0.0, ub: float = math.inf) -> int:
        idx = len(self.variables)
        if name is None:
            name = f"x{idx}"
        if kind == BINARY:
            lb, ub = 0.0, 1.0
        elif kind != CONTINUOUS:
            raise MalformedModel(f"unknown variable kind {kind!r}")
        if not lb <= ub:
            raise MalformedModel(f"variable {name!r} has empty bounds [{lb}, {ub}]")
        self.variables.append(Variable(name=name, kind=kind, lb=float(lb), ub=float(ub)))
        return idx

    def add_constraint(self, coeffs, relation: str, rhs: float, name: str = "") -> None:
        if relation not in (LESS_EQUAL, GREATER_EQUAL, EQUAL):
            raise MalformedModel(f"unknown relation {relation!r}")
        items = sorted(dict(coeffs).items()) if isinstance(coeffs, dict) else list(coeffs)
        merged: dict[int, float] = {}
        for j, c in items:
            if not (0 <= j < len(self.variables)):
                raise MalformedModel(f"constraint references undeclared variable {j}")
            if not math.isfinite(c):
                raise MalformedModel("constraint coefficient must be finite")
            merged[j] = merged.get(j, 0.0) + float(c)
        if not math.isfinite(rhs):
            raise MalformedModel("constraint rhs must be finite")
        if not name:
            name = f"c{len(self.constraints)}"
        self.constraints.append(
            Constraint(coeffs=tuple(sorted(merged.items())), relation=relation,
                       rhs=float(rhs), name=name)
        )

    def set_objective(self, coeffs, sense: str = "min", constant: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise MalformedModel(f"unknown sense {sense!r}")
        obj: dict[int, float] = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for j, c in items:
            if not (0 <= j < len(self.variables)):
                raise MalformedModel(f"objective references undeclared variable {j}")
            obj[j] = obj.get(j, 0.0) + float(c)
        self.objective = obj
        self.sense = sense
        self.objective_constant = float(constant)

    @property
    def binary_indices(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.kind == BINARY]

    def n_binaries(self) -> int:
        return len(self.binary_indices)


@dataclass
class MilpSolution:
    status: str
    values: np.ndarray | None
    objective: float | None
    bound_gap: float
    wall_time_s: float
    nodes: int = 0

    @property
    def is_certified(self) -> bool:
        return self.status in (OPTIMAL, INFEASIBLE)

    def value(self, idx: int) -> float:
        return float(self.values[idx])

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "values": None if self.values is None else [float(v) for v in self.values],
            "objective": self.objective,
            "bound_gap": self.bound_gap,
            "wall_time_s": self.wall_time_s,
            "nodes": self.nodes,
        }


class _LpRelaxation:
    """LP data shared across branch-and-bound nodes; only bounds change."""

    def __init__(self, model: MilpModel):
        n = len(model.variables)
        self.n = n
        c = np.zeros(n)
        for j, v in model.objective.items():
            c[j] = v
        self.flip = -1.0 if model.sense == "max" else 1.0
        self.c = self.flip * c

        ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
        for con in model.constraints:
            row = np.zeros(n)
            for j, v in con.coeffs:
                row[j] = v
            if con.relation == LESS_EQUAL:
                ub_rows.append(row)
                ub_rhs.append(con.rhs)
            elif con.relation == GREATER_EQUAL:
                ub_rows.append(-row)
                ub_rhs.append(-con.rhs)
            else:
                eq_rows.append(row)
                eq_rhs.append(con.rhs)
        self.A_ub = sparse.csr_matrix(np.array(ub_rows)) if ub_rows else None
        self.b_ub = np.array(ub_rhs) if ub_rhs else None
        self.A_eq = sparse.csr_matrix(np.array(eq_rows)) if eq_rows else None
        self.b_eq = np.array(eq_rhs) if eq_rhs else None
        self.base_bounds = [(v.lb, v.ub) for v in model.variables]
        self.base_lb = np.array([b[0] for b in self.base_bounds])
        self.base_ub = np.array([b[1] for b in self.base_bounds])
        # dense copies for the cheap activity pre-screen
        self._ub_dense = np.array(ub_rows) if ub_rows else None
        self._eq_dense = np.array(eq_rows) if eq_rows else None
        self._highs = None
        if _highs_core is not None and n > 0:
            self._highs = self._build_highs(model)

    def _build_highs(self, model: MilpModel):
        """One persistent HiGHS LP; nodes only change column bounds, so
        re-solves warm-start from the previous basis."""
        inf = _highs_core.kHighsInf
        n = self.n
        rows_lo, rows_hi = [], []
        starts, indices, values = [0], [], []
        for con in model.constraints:
            for j, v in con.coeffs:
                indices.append(j)
                values.append(v)
            starts.append(len(indices))
            if con.relation == LESS_EQUAL:
                rows_lo.append(-inf)
                rows_hi.append(con.rhs)
            elif con.relation == GREATER_EQUAL:
                rows_lo.append(con.rhs)
                rows_hi.append(inf)
            else:
                rows_lo.append(con.rhs)
                rows_hi.append(con.rhs)
        lp = _highs_core.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = len(model.constraints)
        lp.col_cost_ = self.c.copy()
        lp.col_lower_ = np.where(np.isfinite(self.base_lb), self.base_lb, -inf)
        lp.col_upper_ = np.where(np.isfinite(self.base_ub), self.base_ub, inf)
        lp.row_lower_ = np.array(rows_lo, dtype=float)
        lp.row_upper_ = np.array(rows_hi, dtype=float)
        lp.a_matrix_.format_ = _highs_core.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = np.array(starts, dtype=np.int32)
        lp.a_matrix_.index_ = np.array(indices, dtype=np.int32)
        lp.a_matrix_.value_ = np.array(values, dtype=float)
        h = _highs_core._Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        # tight LP tolerances keep MILP certificates meaningful
        h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        if h.passModel(lp) != _highs_core.HighsStatus.kOk:
            return None
        self._col_index = np.arange(n, dtype=np.int32)
        return h

    def obviously_infeasible(self, fixes: dict[int, float]) -> bool:
        """Activity-bound propagation: a constraint whose best achievable
        activity under the node's bounds still violates it proves the node
        infeasible without an LP call. Sound, never complete."""
        lb = self.base_lb.copy()
        ub = self.base_ub.copy()
        for j, val in fixes.items():
            lb[j] = ub[j] = val
        if self._ub_dense is not None:
            finite_lb = np.where(np.isfinite(lb), lb, 0.0)
            finite_ub = np.where(np.isfinite(ub), ub, 0.0)
            A = self._ub_dense
            neg = np.minimum(A, 0.0)
            pos = np.maximum(A, 0.0)
            lb_inf = (~np.isfinite(lb)).astype(float)
            ub_inf = (~np.isfinite(ub)).astype(float)
            unbounded = (pos @ lb_inf + (-neg) @ ub_inf) > 0
            min_activity = pos @ finite_lb + neg @ finite_ub
            if np.any(~unbounded & (min_activity > self.b_ub + 1e-9)):
                return True
        return False

    def solve(self, fixes: dict[int, float]):
        """Returns (status, x, objective_internal) with the min-sense value."""
        if self.n == 0:
            # only constant constraints can exist; evaluate them directly
            if self.b_ub is not None and np.any(self.b_ub < -1e-9):
                return "infeasible", None, math.inf
            if self.b_eq is not None and np.any(np.abs(self.b_eq) > 1e-9):
                return "infeasible", None, math.inf
            return "optimal", np.zeros(0), 0.0
        if self._highs is not None:
            return self._solve_highs(fixes)
        bounds = list(self.base_bounds)
        for j, val in fixes.items():
            bounds[j] = (val, val)
        res = linprog(self.c, A_ub=self.A_ub, b_ub=self.b_ub,
                      A_eq=self.A_eq, b_eq=self.b_eq, bounds=bounds,
                      method="highs")
        if res.status == 0:
            return "optimal", res.x, float(res.fun)
        if res.status == 2:
            return "infeasible", None, math.inf
        if res.status == 3:
            return "unbounded", None, -math.inf
        raise MalformedModel(f"LP relaxation failed: {res.message}")

    def _solve_highs(self, fixes: dict[int, float]):
        core = _highs_core
        inf = core.kHighsInf
        lb = np.where(np.isfinite(self.base_lb), self.base_lb, -inf).copy()
        ub = np.where(np.isfinite(self.base_ub), self.base_ub, inf).copy()
        for j, val in fixes.items():
            lb[j] = ub[j] = val
        h = self._highs
        h.changeColsBounds(self.n, self._col_index, lb, ub)
        h.run()
        status = h.getModelStatus()
        if status not in (core.HighsModelStatus.kOptimal,
                          core.HighsModelStatus.kInfeasible,
                          core.HighsModelStatus.kUnbounded):
            # warm start stalled or the outcome is ambiguous: restart cold
            h.clearSolver()
            h.run()
            status = h.getModelStatus()
        if status == core.HighsModelStatus.kOptimal:
            x = np.array(h.getSolution().col_value)
            return "optimal", x, float(h.getInfo().objective_function_value)
        if status == core.HighsModelStatus.kInfeasible:
            return "infeasible", None, math.inf
        if status == core.HighsModelStatus.kUnbounded:
            return "unbounded", None, -math.inf
        # last resort: the independent scipy path decides this node
        return self._solve_linprog_node(fixes)

    def _solve_linprog_node(self, fixes: dict[int, float]):
        bounds = list(self.base_bounds)
        for j, val in fixes.items():
            bounds[j] = (val, val)
        res = linprog(self.c, A_ub=self.A_ub, b_ub=self.b_ub,
                      A_eq=self.A_eq, b_eq=self.b_eq, bounds=bounds,
                      method="highs")
        if res.status == 0:
            return "optimal", res.x, float(res.fun)
        if res.status == 2:
            return "infeasible", None, math.inf
        if res.status == 3:
            return "unbounded", None, -math.inf
        raise MalformedModel(f"LP relaxation failed: {res.message}")


def _most_fractional(x, binaries, int_tol):
    """Most fractional binary index, ties by lowest index; None if integral."""
    best_j, best_frac = None, int_tol
    for j in binaries:
        frac = abs(x[j] - round(x[j]))
        if frac > best_frac + 1e-15:
            best_j, best_frac = j, frac
    return best_j


def solve(model: MilpModel, time_limit_s: float = 120.0,
          node_limit: int | None = None, feas_tol: float = 1e-7,
          int_tol: float = 1e-6, gap_tol: float = 1e-9,
          integral_objective: bool = False,
          first_feasible: bool = False,
          incumbent_hint=None) -> MilpSolution:
    """Solve to certified optimality or infeasibility (limits permitting).

    ``integral_objective`` lets the caller assert that the objective is
    integer-valued at every integral point, enabling bound rounding (a large
    win for cardinality objectives). ``first_feasible`` stops at the first
    incumbent (status ``iter_limit``, uncertified) for callers that only need
    some feasible point. ``incumbent_hint`` seeds the search with a known
    feasible point (validated before use) to prune early.
    """
    start = time.monotonic()
    lp = _LpRelaxation(model)
    binaries = model.binary_indices

    def tightened(bound):
        if integral_objective and math.isfinite(bound):
            return math.ceil(bound - 1e-9)
        return bound

    status, x, val = lp.solve({})
    nodes = 1
    if status == "unbounded":
        raise Unbounded("objective unbounded in the LP relaxation")
    if status == "infeasible":
        return MilpSolution(status=INFEASIBLE, values=None, objective=None,
                            bound_gap=0.0, wall_time_s=time.monotonic() - start,
                            nodes=nodes)

    incumbent = None
    incumbent_val = math.inf
    if incumbent_hint is not None:
        hint = np.asarray(incumbent_hint, dtype=float)
        hint_fixes = {j: float(round(hint[j])) for j in binaries}
        h_status, hx, hval = lp.solve(hint_fixes)
        nodes += 1
        if h_status == "optimal":
            incumbent, incumbent_val = hx, hval
    counter = 0
    heap = [(tightened(val), counter, {}, x)]
    exit_status = None

    def polish(fixes_int):
        """Re-solve with all binaries fixed to integers: exact vertex."""
        st, px, pval = lp.solve(fixes_int)
        if st != "optimal":
            return None
        return px, pval

    while heap:
        bound, _, fixes, x = heapq.heappop(heap)
        if bound >= incumbent_val - gap_tol:
            break  # best-first: nothing left can improve the incumbent
        if time.monotonic() - start > time_limit_s:
            exit_status = TIME_LIMIT
            break
        if node_limit is not None and nodes >= node_limit:
            exit_status = ITER_LIMIT
            break

        branch_j = _most_fractional(x, binaries, int_tol)
        if branch_j is None:
            fixes_int = {j: float(round(x[j])) for j in binaries}
            polished = polish(fixes_int)
            nodes += 1
            if polished is None:
                # Rounding at int_tol broke feasibility; branch on the least
                # integral binary to split the node exactly.
                branch_j = _most_fractional(x, binaries, 0.0)
                if branch_j is None:
                    continue  # fully fixed and infeasible: prune
            else:
                px, pval = polished
                if pval < incumbent_val - gap_tol:
                    incumbent, incumbent_val = px, pval
                    if first_feasible:
                        exit_status = ITER_LIMIT
                        break
                if pval > bound + 1e-8:
                    # Rounding moved the objective off the node bound, so a
                    # different completion may still beat the incumbent:
                    # split the node exactly instead of discarding it.
                    branch_j = _most_fractional(x, binaries, 1e-15)
                    if branch_j is None:
                        continue
                else:
                    continue

        for branch_val in (0.0, 1.0):
            child_fixes = dict(fixes)
            child_fixes[branch_j] = branch_val
            if lp.obviously_infeasible(child_fixes):
                nodes += 1
                continue
            st, cx, cval = lp.solve(child_fixes)
            nodes += 1
            if st == "unbounded":
                raise Unbounded("objective unbounded in the LP relaxation")
            if st != "optimal":
                continue
            cbound = tightened(cval)
            if cbound >= incumbent_val - gap_tol:
                continue
            counter += 1
            heapq.heappush(heap, (cbound, counter, child_fixes, cx))

    wall = time.monotonic() - start
    if exit_status is None:
        # Search tree exhausted: certified outcome.
        if incumbent is None:
            return MilpSolution(status=INFEASIBLE, values=None, objective=None,
                                bound_gap=0.0, wall_time_s=wall, nodes=nodes)
        values = np.array(incumbent)
        for j in binaries:
            values[j] = round(values[j])
        if not check_feasible(model, values, feas_tol=feas_tol):
            raise MalformedModel(
                "optimal certificate failed re-evaluation at feas_tol")
        obj = lp.flip * incumbent_val + model.objective_constant
        return MilpSolution(status=OPTIMAL, values=values, objective=obj,
                            bound_gap=0.0, wall_time_s=wall, nodes=nodes)

    best_bound = min((h[0] for h in heap), default=incumbent_val)
    if incumbent is None:
        return MilpSolution(status=exit_status, values=None, objective=None,
                            bound_gap=math.inf, wall_time_s=wall, nodes=nodes)
    values = np.array(incumbent)
    for j in binaries:
        values[j] = round(values[j])
    obj = lp.flip * incumbent_val + model.objective_constant
    gap = abs(incumbent_val - best_bound)
    return MilpSolution(status=exit_status, values=values, objective=obj,
                        bound_gap=gap, wall_time_s=wall, nodes=nodes)


def check_feasible(model: MilpModel, values, feas_tol: float = 1e-7) -> bool:
    """Re-evaluate every constraint and bound at the given point."""
    values = np.asarray(values, dtype=float)
    for j, v in enumerate(model.variables):
        if values[j] < v.lb - feas_tol or values[j] > v.ub + feas_tol:
            return False
    for con in model.constraints:
        lhs = sum(c * values[j] for j, c in con.coeffs)
        if con.relation == LESS_EQUAL and lhs > con.rhs + feas_tol:
            return False
        if con.relation == GREATER_EQUAL and lhs < con.rhs - feas_tol:
            return False
        if con.relation == EQUAL and abs(lhs - con.rhs) > feas_tol:
            return False
    return True


# --- LP-format export / import --------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def _terms(coeffs, variables) -> str:
    parts = []
    for j, c in coeffs:
        name = variables[j].name
        if not parts:
            parts.append(f"{_fmt(c)} {name}")
        elif c < 0:
            parts.append(f"- {_fmt(-c)} {name}")
        else:
            parts.append(f"+ {_fmt(c)} {name}")
    return " ".join(parts) if parts else "0"


def export_lp(model: MilpModel) -> str:
    """Serialize to LP file format with deterministic variable ordering."""
    lines = ["\\ equiprune MILP export"]
    lines.append("Maximize" if model.sense == "max" else "Minimize")
    obj_terms = _terms(tuple(sorted(model.objective.items())), model.variables)
    if model.objective_constant:
        k = model.objective_constant
        obj_terms += f" - {_fmt(-k)}" if k < 0 else f" + {_fmt(k)}"
    lines.append(f" obj: {obj_terms}")
    lines.append("Subject To")
    for con in model.constraints:
        rel = con.relation if con.relation != EQUAL else "="
        lines.append(f" {con.name}: {_terms(con.coeffs, model.variables)} {rel} {_fmt(con.rhs)}")
    lines.append("Bounds")
    for v in model.variables:
        if v.kind == BINARY:
            continue
        if v.lb == -math.inf and v.ub == math.inf:
            lines.append(f" {v.name} free")
        elif v.lb == -math.inf:
            lines.append(f" {v.name} <= {_fmt(v.ub)}")
        elif v.ub == math.inf:
            lines.append(f" {v.name} >= {_fmt(v.lb)}")
        else:
            lines.append(f" {_fmt(v.lb)} <= {v.name} <= {_fmt(v.ub)}")
    binaries = [v.name for v in model.variables if v.kind == BINARY]
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM_RE = re.compile(r"([+-]?)\s*(\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)(?:\s+([A-Za-z_][\w.]*))?")


def _parse_expr(text: str):
    """Parse 'c1 v1 + c2 v2 ... [+ const]' into (terms, constant)."""
    terms = []
    constant = 0.0
    pos = 0
    text = text.strip()
    if text == "0":
        return terms, 0.0
    while pos < len(text):
        m = _TERM_RE.match(text, pos)
        if m is None:
            raise MalformedModel(f"cannot parse expression at {text[pos:]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = sign * float(m.group(2))
        name = m.group(3)
        if name is None:
            constant += coef
        else:
            terms.append((name, coef))
        pos = m.end()
        while pos < len(text) and text[pos] in " \t":
            pos += 1
    return terms, constant


def parse_lp(text: str) -> MilpModel:
    """Parse LP text produced by :func:`export_lp` back into a model."""
    lines = [ln.strip() for ln in text.splitlines()
             if ln.strip() and not ln.strip().startswith("\\")]
    model = MilpModel()
    names: dict[str, int] = {}
    sense = "min"
    objective_line = None
    constraint_lines = []
    bound_lines = []
    binary_names: set[str] = set()
    section = None
    for ln in lines:
        low = ln.lower()
        if low in ("minimize", "maximize"):
            sense = "min" if low == "minimize" else "max"
            section = "objective"
            continue
        if low == "subject to":
            section = "constraints"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binaries", "binary"):
            section = "binaries"
            continue
        if low == "end":
            break
        if section == "objective":
            objective_line = ln.split(":", 1)[1] if ":" in ln else ln
        elif section == "constraints":
            constraint_lines.append(ln)
        elif section == "bounds":
            bound_lines.append(ln)
        elif section == "binaries":
            binary_names.update(ln.split())

    def var_index(name: str) -> int:
        if name not in names:
            names[name] = model.add_var(name=name, kind=CONTINUOUS,
                                        lb=-math.inf, ub=math.inf)
        return names[name]

    parsed_constraints = []
    for ln in constraint_lines:
        cname, body = ln.split(":", 1) if ":" in ln else ("", ln)
        for rel in (LESS_EQUAL, GREATER_EQUAL, EQUAL):
            if rel in body:
                lhs, rhs = body.rsplit(rel, 1)
                terms, const = _parse_expr(lhs)
                parsed_constraints.append(
                    (cname.strip(), terms, rel, float(rhs) - const))
                break
        else:
            raise MalformedModel(f"constraint without relation: {ln!r}")

    obj_terms, obj_const = _parse_expr(objective_line or "0")
    for name, _ in obj_terms:
        var_index(name)
    for _, terms, _, _ in parsed_constraints:
        for name, _ in terms:
            var_index(name)
    for name in sorted(binary_names):
        var_index(name)

    for ln in bound_lines:
        if ln.endswith(" free"):
            j = var_index(ln[:-5].strip())
            model.variables[j].lb, model.variables[j].ub = -math.inf, math.inf
            continue
        m = re.match(r"^(\S+)\s*(<=|>=)\s*(\S+)$", ln)
        if m:
            a, rel, b = m.groups()
            try:
                lo = float(a)
                j = var_index(b)
                if rel == "<=":
                    model.variables[j].lb = lo
                else:
                    model.variables[j].ub = lo
            except ValueError:
                j = var_index(a)
                if rel == "<=":
                    model.variables[j].ub = float(b)
                else:
                    model.variables[j].lb = float(b)
            continue
        m = re.match(r"^(\S+)\s*<=\s*(\S+)\s*<=\s*(\S+)$", ln)
        if m:
            lo, name, hi = m.groups()
            j = var_index(name)
            model.variables[j].lb = float(lo)
            model.variables[j].ub = float(hi)
            continue
        raise MalformedModel(f"cannot parse bound line {ln!r}")

    for name in binary_names:
        j = names[name]
        model.variables[j].kind = BINARY
        model.variables[j].lb, model.variables[j].ub = 0.0, 1.0

    for cname, terms, rel, rhs in parsed_constraints:
        model.add_constraint([(names[n], c) for n, c in terms], rel, rhs,
                             name=cname)
    model.set_objective({names[n]: c for n, c in obj_terms}, sense=sense,
                        constant=obj_const)
    return model
