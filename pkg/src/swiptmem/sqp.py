"""Sequential quadratic programming over the symbol distribution.

Each iteration linearizes the constraints around the current pmf, models the
objective with a quasi-Newton Hessian, and solves the resulting convex QP by
a primal active-set method. The objective gradient comes either from the
likelihood-ratio chain estimator or from an exact callable (used by the
memoryless baseline and the deterministic tests).

Conventions: the problem is a maximization. Constraints are written
``g1 = I_req - I(theta) <= 0``, ``g2 = E{x^2} - budget <= 0``,
``h = sum(theta) - 1 = 0`` with nonnegative inequality multipliers, so the
Lagrangian is ``P(theta) - l1*g1 - l2*g2 - l3*h`` and its gradient is
``grad_P + l1*grad_I - l2*x^2 - l3*1``. Nonnegativity of the pmf is enforced
through per-coordinate lower bounds on the QP step; the paper-level problem
statement leaves them implicit, but without them the iterates can leave the
simplex.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import chain as chn
from .awgn import IrChannel, MiPlan, QuadratureConfig, ap_gradient
from .constellation import Constellation, clean_pmf, entropy_tilted_pmf, second_moment, validate_pmf
from .errors import NumericFailure

_ELASTIC_PENALTY = 1e6


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the rate-power trade-off problem."""

    constellation: Constellation
    channel: IrChannel
    i_req: float
    power_budget: float
    model: object  # chain.EhModel or an object with value_and_gradient(theta)

    def __post_init__(self):
        s = self.constellation.size
        if not 0 <= self.i_req <= np.log2(s) + 1e-12:
            raise ValueError(f"i_req must lie in [0, log2({s})]")
        if not self.power_budget > 0:
            raise ValueError("power_budget must be > 0")


@dataclass
class SolverConfig:
    n_max: int = 4000
    gamma: float = 0.1  # reward-estimate step size
    alpha: float = 0.1  # likelihood-ratio forgetting factor
    chain_steps: int = 2000  # chain steps per gradient estimate
    step_tol: float = 1e-6
    kkt_tol: float = 1e-4
    trust_cap: float = 0.2  # max-norm cap on the step; disabled by paper_faithful_steps
    paper_faithful_steps: bool = False
    reset_direction: bool = False  # reset the f accumulator every iteration
    persist_chain: bool = True  # carry the chain state across iterations
    n_steps_growth: float = 1.5
    stall_window: int = 10  # iterations per stall check on the step norm
    max_chain_steps: int = 32000
    initial_state: float = 0.0
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)


class ExactObjective:
    """Deterministic objective with an exact gradient (no chain noise)."""

    def __init__(self, value_fn, grad_fn):
        self._value = value_fn
        self._grad = grad_fn

    @classmethod
    def linear(cls, q):
        q = np.asarray(q, dtype=float)
        return cls(lambda theta: float(theta @ q), lambda theta: q)

    def value_and_gradient(self, theta):
        return self._value(theta), np.asarray(self._grad(theta), dtype=float)


@dataclass
class QpProblem:
    """max g.δ + 0.5 δᵀHδ subject to the linearized constraints around theta."""

    grad: np.ndarray
    hessian: np.ndarray  # regularized, negative definite
    mi_grad: np.ndarray
    mi_slack: float  # I(theta) - I_req; >= 0 when theta is MI-feasible
    ap_grad: np.ndarray
    ap_slack: float  # budget - E{x^2}
    lower_bounds: np.ndarray  # step >= -theta


@dataclass
class QpSolution:
    step: np.ndarray
    multipliers: np.ndarray  # (mi, ap, simplex-equality)
    bound_multipliers: np.ndarray
    active: list
    relaxed: bool
    iterations: int

    @property
    def zeta(self):
        return self.multipliers


def regularize_hessian(h: np.ndarray) -> np.ndarray:
    """Shift the spectrum so the curvature model is strictly negative definite."""
    h = 0.5 * (h + h.T)
    eigs = np.linalg.eigvalsh(h)
    mu = max(0.0, float(eigs[-1]))
    eps = 1e-8 * max(1.0, float(np.max(np.abs(eigs))))
    return h - (mu + eps) * np.eye(h.shape[0])


def build_qp(grad, hessian, mi_val, mi_grad, ap_val, ap_grad, theta,
             spec: ProblemSpec) -> QpProblem:
    grad = np.asarray(grad, dtype=float)
    s = grad.size
    if hessian.shape != (s, s) or len(theta) != s:
        raise ValueError("inconsistent dimensions")
    return QpProblem(
        grad=grad,
        hessian=regularize_hessian(np.asarray(hessian, dtype=float)),
        mi_grad=np.asarray(mi_grad, dtype=float),
        mi_slack=float(mi_val - spec.i_req),
        ap_grad=np.asarray(ap_grad, dtype=float),
        ap_slack=float(spec.power_budget - ap_val),
        lower_bounds=-np.asarray(theta, dtype=float),
    )


def _active_set_min(q, c, a_eq, g_ineq, h_ineq, x0, max_changes):
    """Primal active-set method for min 0.5 xᵀQx + cᵀx, A_eq x = 0, Gx <= h.

    ``x0`` must be feasible. Each KKT system is solved through a symmetric
    indefinite factorization; ties in the blocking-constraint ratio are broken
    by the lowest constraint index. Returns (x, ineq_multipliers, eq_multiplier,
    working_set, changes).
    """
    n = q.shape[0]
    x = np.array(x0, dtype=float, copy=True)
    work = [j for j in range(h_ineq.size) if g_ineq[j] @ x > h_ineq[j] - 1e-12]
    changes = 0
    mult_ineq = np.zeros(h_ineq.size)
    mult_eq = 0.0
    while True:
        while True:
            rows = [a_eq] + [g_ineq[j] for j in work]
            a_mat = np.vstack(rows)
            m = a_mat.shape[0]
            kkt = np.block([[q, a_mat.T], [a_mat, np.zeros((m, m))]])
            rhs = np.concatenate([-(q @ x + c), np.zeros(m)])
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                    sol = scipy.linalg.solve(kkt, rhs, assume_a="sym")
                if not np.all(np.isfinite(sol)):
                    raise np.linalg.LinAlgError("non-finite KKT solution")
                resid = a_mat @ sol[:n]
                if np.max(np.abs(resid)) > 1e-8 * (1.0 + np.max(np.abs(sol[:n]))):
                    raise np.linalg.LinAlgError("KKT solution violates the working set")
                break
            except (np.linalg.LinAlgError, ValueError):
                # Linearly dependent working set: discard the most recently
                # added constraint and try again.
                if not work:
                    raise NumericFailure("KKT system solve failed")
                work.pop()
                changes += 1
                if changes > max_changes:
                    raise NumericFailure("active-set iteration exceeded the cycling guard")
        p = sol[:n]
        lam = sol[n:]
        if np.max(np.abs(p)) <= 1e-12:
            mult_eq = lam[0]
            mult_ineq = np.zeros(h_ineq.size)
            for pos, j in enumerate(work):
                mult_ineq[j] = lam[1 + pos]
            if not work or min(mult_ineq[j] for j in work) >= -1e-10:
                return x, mult_ineq, mult_eq, work, changes
            worst = min(work, key=lambda j: mult_ineq[j])
            work.remove(worst)
            changes += 1
        else:
            alpha = 1.0
            blocking = -1
            for j in range(h_ineq.size):
                if j in work:
                    continue
                g_p = g_ineq[j] @ p
                if g_p > 1e-14:
                    ratio = (h_ineq[j] - g_ineq[j] @ x) / g_p
                    if ratio < alpha - 1e-14:
                        alpha = max(ratio, 0.0)
                        blocking = j
            x = x + alpha * p
            if blocking >= 0:
                work.append(blocking)
                changes += 1
        if changes > max_changes:
            raise NumericFailure("active-set iteration exceeded the cycling guard")


def solve_qp(qp: QpProblem) -> QpSolution:
    """Solve the subproblem; fall back to an elastic relaxation when infeasible.

    The step starts from zero, which is feasible whenever the current pmf is.
    If the linearized mutual-information constraint cannot be met even in
    principle, it is softened with a large penalty slack and the solution is
    flagged.
    """
    s = qp.grad.size
    q = -qp.hessian  # SPD after regularization
    c = -qp.grad
    a_eq = np.ones((1, s))
    g_rows = [-qp.mi_grad, qp.ap_grad] + [-row for row in np.eye(s)]
    g_ineq = np.vstack(g_rows)
    h_ineq = np.concatenate([[qp.mi_slack, qp.ap_slack], -qp.lower_bounds])
    max_changes = 10 * (s + 2)

    feasible_start = qp.mi_slack >= -1e-12 and qp.ap_slack >= -1e-12
    if feasible_start:
        x, mult, mult_eq, work, n_iter = _active_set_min(
            q, c, a_eq, g_ineq, h_ineq, np.zeros(s), max_changes
        )
        relaxed = False
    else:
        # Elastic mode: one slack per possibly-violated row, heavy linear
        # penalty plus a whiff of curvature to keep the QP strictly convex.
        n_ext = s + 2
        q_ext = np.zeros((n_ext, n_ext))
        q_ext[:s, :s] = q
        q_ext[s:, s:] = np.eye(2) * (_ELASTIC_PENALTY * 1e-6)
        c_ext = np.concatenate([c, [_ELASTIC_PENALTY, _ELASTIC_PENALTY]])
        a_eq_ext = np.zeros((1, n_ext))
        a_eq_ext[0, :s] = 1.0
        rows = []
        rows.append(np.concatenate([-qp.mi_grad, [-1.0, 0.0]]))
        rows.append(np.concatenate([qp.ap_grad, [0.0, -1.0]]))
        for i in range(s):
            e = np.zeros(n_ext)
            e[i] = -1.0
            rows.append(e)
        for j in range(2):
            e = np.zeros(n_ext)
            e[s + j] = -1.0
            rows.append(e)
        g_ext = np.vstack(rows)
        h_ext = np.concatenate([[qp.mi_slack, qp.ap_slack], -qp.lower_bounds, [0.0, 0.0]])
        x0 = np.zeros(n_ext)
        x0[s] = max(0.0, -qp.mi_slack)
        x0[s + 1] = max(0.0, -qp.ap_slack)
        x_ext, mult_ext, mult_eq, work, n_iter = _active_set_min(
            q_ext, c_ext, a_eq_ext, g_ext, h_ext, x0, 10 * (n_ext + 2)
        )
        x = x_ext[:s]
        mult = mult_ext[: 2 + s]
        relaxed = True

    names = {0: "mi", 1: "ap"}
    active = [names.get(j, f"bound[{j - 2}]") for j in sorted(work) if j < 2 + s]
    return QpSolution(
        step=x,
        multipliers=np.array([mult[0], mult[1], mult_eq]),
        bound_multipliers=mult[2: 2 + s].copy(),
        active=active,
        relaxed=relaxed,
        iterations=n_iter,
    )


def bfgs_update(h: np.ndarray, delta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Damped rank-two quasi-Newton update.

    Works for both curvature conventions: a positive-definite model stays
    positive definite and a negative-definite model stays negative definite.
    When the raw curvature pair would break definiteness, the gradient
    difference is blended toward ``H @ delta`` (Powell damping).
    """
    delta = np.asarray(delta, dtype=float)
    y = np.asarray(y, dtype=float)
    h_d = h @ delta
    d_h_d = float(delta @ h_d)
    if d_h_d == 0.0 or not np.isfinite(d_h_d):
        return h
    sign = 1.0 if d_h_d > 0 else -1.0
    y_d = float(y @ delta)
    if sign * y_d < 0.2 * sign * d_h_d:
        phi = 0.8 * d_h_d / (d_h_d - y_d)
        y = phi * y + (1.0 - phi) * h_d
        y_d = float(y @ delta)
    return h - np.outer(h_d, h_d) / d_h_d + np.outer(y, y) / y_d


@dataclass
class Solution:
    theta: np.ndarray
    p_avg: float
    mutual_info: float
    trace: list
    converged: bool
    iterations: int
    diagnostics: dict


TRACE_COLUMNS = ("k", "p_tilde", "mi_bits", "step_norm", "kkt_residual", "active")


def write_trace_csv(trace, path):
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            fh.write(
                "%d,%.17g,%.17g,%.17g,%.17g,%s\n"
                % (
                    row["k"],
                    row["p_tilde"],
                    row["mi_bits"],
                    row["step_norm"],
                    row["kkt_residual"],
                    ";".join(row["active"]),
                )
            )


def initial_pmf(spec: ProblemSpec) -> np.ndarray:
    """Uniform pmf, entropy-projected onto the average-power budget if needed."""
    return entropy_tilted_pmf(spec.constellation, spec.power_budget)


def _restore_mi_feasibility(theta, plan, i_req, anchor, tol=1e-3):
    """Blend toward the max-entropy anchor until the MI constraint holds again."""
    if plan.mutual_information(theta) >= i_req - tol:
        return theta
    lo, hi = 0.0, 1.0
    if plan.mutual_information(anchor) < i_req - tol:
        return theta  # anchor cannot help; leave as is
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        blend = clean_pmf((1 - mid) * theta + mid * anchor)
        if plan.mutual_information(blend) >= i_req - 0.5 * tol:
            hi = mid
        else:
            lo = mid
    return clean_pmf((1 - hi) * theta + hi * anchor)


def solve(spec: ProblemSpec, cfg: SolverConfig, rng: np.random.Generator) -> Solution:
    """Run the full iterative algorithm and return the final distribution.

    Per iteration: estimate the objective gradient (chain walk or exact),
    evaluate the mutual information and its gradient, solve the QP, update
    the pmf, the multipliers and the curvature model. Terminates when the
    step norm and the stationarity residual fall under their tolerances.
    """
    c = spec.constellation
    plan = MiPlan(c, spec.channel, cfg.quadrature)
    ap_grad_vec = ap_gradient(c)
    s = c.size

    theta = initial_pmf(spec)
    anchor = theta.copy()
    hessian = -np.eye(s)
    lam = np.zeros(3)
    exact = hasattr(spec.model, "value_and_gradient")
    est = chn.EstimatorState.fresh(s, cfg.gamma, cfg.alpha)
    state = chn.ChainState(xi=cfg.initial_state)
    n_steps = cfg.chain_steps

    trace = []
    prev_grad_l = None
    prev_delta = None
    best_feasible = None
    best_power = -np.inf
    converged = False
    relax_streak = 0
    step_history = []
    obj_scale = None
    p_val = 0.0
    mi_val = plan.mutual_information(theta)

    k = 0
    for k in range(1, cfg.n_max + 1):
        if exact:
            p_val, p_grad = spec.model.value_and_gradient(theta)
        else:
            if cfg.reset_direction:
                est = est.reset_direction()
            if not cfg.persist_chain:
                state = chn.ChainState(xi=cfg.initial_state)
            out = chn.estimate_gradient(spec.model, theta, n_steps, est, state, rng)
            p_val, p_grad, est, state = out.p_avg, out.direction, out.estimator, out.state
        # The reward gradient lives on the physical power scale (watts), which
        # can sit many decades away from the unit curvature model; normalize
        # once so steps, tolerances and the BFGS model are well conditioned.
        if obj_scale is None:
            obj_scale = max(float(np.max(np.abs(p_grad))), 1e-300)
        elif float(np.max(np.abs(p_grad))) > 100.0 * obj_scale:
            obj_scale = float(np.max(np.abs(p_grad)))
            hessian = -np.eye(s)
            prev_grad_l = None
        p_grad = p_grad / obj_scale
        mi_val = plan.mutual_information(theta)
        mi_grad = plan.mi_gradient(theta)
        ap_val = second_moment(c, theta)

        grad_l = p_grad + lam[0] * mi_grad - lam[1] * ap_grad_vec - lam[2]
        if prev_grad_l is not None and prev_delta is not None:
            y = grad_l - prev_grad_l
            hessian = bfgs_update(hessian, prev_delta, y)
        prev_grad_l = grad_l

        qp = build_qp(p_grad, hessian, mi_val, mi_grad, ap_val, ap_grad_vec, theta, spec)
        try:
            sol = solve_qp(qp)
        except NumericFailure:
            # A degenerate curvature model can stall the active set; restart it.
            hessian = -np.eye(s)
            qp = build_qp(p_grad, hessian, mi_val, mi_grad, ap_val, ap_grad_vec, theta, spec)
            sol = solve_qp(qp)
        delta = sol.step
        relax_streak = relax_streak + 1 if sol.relaxed else 0

        step_norm = float(np.linalg.norm(delta))
        if not cfg.paper_faithful_steps:
            inf_norm = float(np.max(np.abs(delta))) if delta.size else 0.0
            if inf_norm > cfg.trust_cap:
                delta = delta * (cfg.trust_cap / inf_norm)

        kkt_res = float(
            np.max(
                np.abs(
                    p_grad
                    + sol.multipliers[0] * mi_grad
                    - sol.multipliers[1] * ap_grad_vec
                    - sol.multipliers[2]
                    + sol.bound_multipliers
                )
            )
        )
        trace.append(
            {
                "k": k,
                "p_tilde": p_val,
                "mi_bits": mi_val,
                "step_norm": step_norm,
                "kkt_residual": kkt_res,
                "active": sol.active,
            }
        )

        feasible = mi_val >= spec.i_req - 1e-3 and ap_val <= spec.power_budget + 1e-8
        if feasible and p_val > best_power:
            best_power = p_val
            best_feasible = theta.copy()

        if step_norm < cfg.step_tol and kkt_res < cfg.kkt_tol and not sol.relaxed:
            converged = True
            break

        proposal = theta + delta
        worst = float(-np.min(proposal)) if proposal.size else 0.0
        if worst > 1e-6 or abs(proposal.sum() - 1.0) > 1e-6:
            # The QP step drifted off the simplex beyond numerical slop;
            # discard it and restart the curvature model.
            hessian = -np.eye(s)
            prev_grad_l = None
            prev_delta = None
            continue
        theta = clean_pmf(np.maximum(proposal, 0.0) / max(proposal.sum(), 1e-12))
        lam = sol.multipliers
        prev_delta = delta

        if not exact:
            # Variance reduction: when a whole window of iterations stops
            # shrinking the step, spend more chain steps per gradient.
            step_history.append(step_norm)
            w = cfg.stall_window
            if len(step_history) >= 2 * w and len(step_history) % w == 0:
                recent = min(step_history[-w:])
                older = min(step_history[-2 * w: -w])
                if recent >= 0.95 * older:
                    n_steps = int(min(n_steps * cfg.n_steps_growth, cfg.max_chain_steps))

    diagnostics = {"relax_streak": relax_streak, "final_chain_steps": n_steps}
    mi_final = plan.mutual_information(theta)
    if mi_final < spec.i_req - 1e-3:
        if best_feasible is not None:
            theta = best_feasible
            diagnostics["fell_back_to_best_feasible"] = True
        else:
            theta = _restore_mi_feasibility(theta, plan, spec.i_req, anchor)
            diagnostics["blended_for_feasibility"] = True
        mi_final = plan.mutual_information(theta)

    if exact:
        p_final = spec.model.value_and_gradient(theta)[0]
    else:
        p_final = p_val
    return Solution(
        theta=theta,
        p_avg=float(p_final),
        mutual_info=float(mi_final),
        trace=trace,
        converged=converged,
        iterations=k,
        diagnostics=diagnostics,
    )
