"""Primal-dual interior-point solver for the market-clearing program.

The program is solved in non-dimensional form as

    min  f(x) = -J_EV(x)
    s.t. c(x) = 0,   h(x) - t = 0,   x_L <= x <= x_U,   h_L <= t <= h_U

where h collects the general inequality functions (compressor discharge
pressure and consumer energy).  Each iteration takes a Newton step on the
log-barrier KKT conditions.  The symmetric indefinite system is factored
with LAPACK's Bunch-Kaufman routine and regularized until its inertia is
(n, m, 0).  A filter line search with second-order correction accepts
steps, and a Levenberg-Marquardt feasibility phase serves as restoration.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.optimize import lsq_linear

from .nlp import NlpProblem, ObjectiveBreakdown, Units
from .scaling import ScalingBasis, redimensionalize_solution, scale_problem

log = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class SolveOptions:
    kkt_tolerance: float = 1e-8
    max_iterations: int = 200
    mu_init: float = 0.1
    regularization_floor: float = 1e-20
    initialization: str = "default"
    bound_push: float = 1e-2
    bound_relax: float = 1e-10
    scale: bool = True

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initialization not in ("default",):
            raise ValueError(f"unknown initialization profile {self.initialization!r}")


class SolverError(RuntimeError):
    pass


# names of the multiplier families, keyed by constraint block
DUAL_NAMES = {
    "weymouth": "mu",
    "ng_balance": "lambda_ng",
    "h2_balance": "lambda_h2",
    "continuity": "omega_e",
    "slack": "beta_e",
    "compressor": "theta_e",
    "fixed_demand": "chi_f",
    "p_min": "beta_l",
    "gamma_min": "omega_l",
    "gamma_max": "omega_u",
    "discharge": "theta_u",
    "alpha_min": "theta_cl",
    "alpha_max": "theta_cu",
    "s_ng_min": "chi_ng_l",
    "s_ng_max": "chi_ng_u",
    "s_h2_min": "chi_h2_l",
    "s_h2_max": "chi_h2_u",
    "demand_min": "chi_l",
    "demand_max": "chi_u",
    "flow_min": "nu",
}


@dataclass
class Solution:
    """Primal and dual solution of an :class:`NlpProblem`.

    ``x``, ``y`` and ``z`` are in the units of ``problem`` (SI for solutions
    returned by :func:`solve`).  ``y`` holds equality multipliers and ``z``
    holds inequality-row multipliers, both in the Lagrangian
    -J_EV + y.c + z.g, so y on the NG balance is the marginal value of gas.
    """

    problem: NlpProblem
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: SolveStatus
    iterations: int
    kkt_residual: float
    basis: Optional[ScalingBasis] = None
    history: list = field(default_factory=list)
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def primal(self) -> dict:
        return self.problem.split(self.x)

    def duals(self) -> dict:
        return extract_duals(self.problem, self.y, self.z)

    @property
    def objective(self) -> ObjectiveBreakdown:
        return self.problem.objective_breakdown(self.x)


def extract_duals(p: NlpProblem, y, z) -> dict:
    """Named multiplier arrays.

    Upper supply limits that are absent (unbounded supply) report 0 so that
    every family has one entry per supplier.
    """
    out = {}
    for block, s in p.eq.items():
        out[DUAL_NAMES[block]] = np.asarray(y[s], float).copy()
    for block, s in p.ineq.items():
        out[DUAL_NAMES[block]] = np.asarray(z[s], float).copy()
    D = p.data
    for name, cap in (("chi_ng_u", D.ng_max), ("chi_h2_u", D.h2_max)):
        full = np.zeros(len(cap))
        full[np.isfinite(cap)] = out[name]
        out[name] = full
    return out


def basis_for_problem(p: NlpProblem) -> ScalingBasis:
    D = p.data
    P0 = float(D.slack_pressure[0]) if len(D.slack_pressure) else float(np.max(D.p_max))
    a0 = (D.v_h2 * D.v_ng) ** 0.25
    return ScalingBasis(P0=P0, a0=a0, R0=D.r_ng)


def solve(p: NlpProblem, opts: SolveOptions | None = None) -> Solution:
    """Solve ``p``; returns a Solution in the units of ``p``."""
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    if opts.scale and p.data.units == Units():
        basis = basis_for_problem(p)
        scaled = scale_problem(p, basis)
        sol = _InteriorPoint(scaled, opts).run()
        sol = redimensionalize_solution(sol, basis, si_problem=p)
        sol.basis = basis
    else:
        sol = _InteriorPoint(p, opts).run()
    sol.solve_time = time.perf_counter() - t0
    return sol


# ---------------------------------------------------------------------------
# initial point


def initial_point(p: NlpProblem, opts: SolveOptions | None = None) -> np.ndarray:
    """Interior starting point in the units of ``p``.

    Pressures sit at the slack pressure, boost ratios at 1, concentrations at
    the bound midpoint clipped to half the upper bound.  Withdrawals start at
    10% of their bounds and are routed to the consumers along a breadth-first
    tree grown from the supply nodes; edges off the tree carry a small flow.
    """
    D = p.data
    x = np.zeros(p.n)
    v = p.split(x)
    one_kg = 1.0 / D.units.flow
    v["P"][:] = np.max(D.slack_pressure) if len(D.slack_pressure) else np.max(D.p_min)
    gmid = np.minimum(0.5 * (D.gamma_min + D.gamma_max), 0.5 * D.gamma_max)
    gmid = np.maximum(gmid, D.gamma_min)
    v["gamma_node"][:] = gmid
    v["gamma_edge"][:] = gmid[D.edge_from]
    v["alpha"][:] = 1.0
    v["s_ng"][:] = np.where(np.isfinite(D.ng_max), 0.1 * D.ng_max, one_kg)
    v["s_h2"][:] = np.where(np.isfinite(D.h2_max), 0.1 * D.h2_max, one_kg)
    R = p.calorific(gmid[D.cons_node])
    v["d"][:] = np.where(D.cons_fixed, D.cons_max, 0.1 * D.cons_max) / R

    # route withdrawals on a BFS tree rooted at the supply nodes
    n_nodes = D.n_nodes
    out_edges = [[] for _ in range(n_nodes)]
    for e, (i, j) in enumerate(zip(D.edge_from, D.edge_to)):
        out_edges[i].append((e, j))
    roots = sorted(set(D.ng_node.tolist()) | set(D.h2_node.tolist()) | set(D.slack_node.tolist()))
    parent = [-1] * n_nodes
    seen = [False] * n_nodes
    queue = list(roots)
    for r in roots:
        seen[r] = True
    k = 0
    while k < len(queue):
        i = queue[k]
        k += 1
        for e, j in out_edges[i]:
            if not seen[j]:
                seen[j] = True
                parent[j] = e
                queue.append(j)
    flow = np.zeros(D.n_edges)
    for m, j in enumerate(D.cons_node):
        node = j
        while parent[node] >= 0:
            e = parent[node]
            flow[e] += v["d"][m]
            node = D.edge_from[e]
    small = 1e-2 * max(one_kg, float(flow.max(initial=0.0)))
    flow[flow <= 0] = small
    v["phi"][:] = flow
    return x


# ---------------------------------------------------------------------------
# core algorithm


def _inertia(ldu, ipiv, tol):
    """(n_pos, n_neg, n_zero) of the block-diagonal factor from dsytrf."""
    n = len(ipiv)
    pos = neg = zero = 0
    k = 0
    while k < n:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if abs(d) <= tol:
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            det = a * c - b * b
            if abs(det) <= tol * max(abs(a), abs(c), abs(b), tol):
                zero += 1
                if a + c > 0:
                    pos += 1
                else:
                    neg += 1
            elif det < 0:
                pos += 1
                neg += 1
            elif a + c > 0:
                pos += 2
            else:
                neg += 2
            k += 2
    return pos, neg, zero


class _InteriorPoint:
    # filter line-search constants
    gamma_theta = 1e-5
    gamma_phi = 1e-8
    s_theta = 1.1
    s_phi = 2.3
    eta_phi = 1e-8
    delta = 1.0
    kappa_eps = 10.0
    kappa_sigma = 1e10

    def __init__(self, p: NlpProblem, opts: SolveOptions):
        self.p = p
        self.opts = opts
        D = p.data
        xl, xu = p.variable_bounds()
        hl, hu = p.general_bounds()
        # concentrations that no hydrogen reaches are fixed at 0 and their
        # rows dropped; kept in, they lose all gradient once flow stops
        zero_x, drop_c = p.hydrogen_free_structure()
        drop_g = np.zeros(0, dtype=int)
        self.empty = not np.any(D.cons_max > 0)
        if self.empty:
            # nothing can be withdrawn: every flow is 0 and the balances vanish
            v, e = p.var, p.eq
            zero_x = np.r_[zero_x, np.arange(v["phi"].start, v["phi"].stop),
                           np.arange(v["s_ng"].start, v["s_ng"].stop),
                           np.arange(v["s_h2"].start, v["s_h2"].stop),
                           np.arange(v["d"].start, v["d"].stop)]
            drop_c = np.r_[drop_c, np.arange(e["ng_balance"].start, e["ng_balance"].stop),
                           np.arange(e["h2_balance"].start, e["h2_balance"].stop),
                           np.arange(e["fixed_demand"].start, e["fixed_demand"].stop)]
            drop_g = np.flatnonzero(np.array(p.general_kind) == "demand")
        self.zero_x = np.unique(zero_x).astype(int)
        self.drop_c = np.unique(drop_c).astype(int)
        self.drop_g = drop_g
        # variables and general rows with equal bounds leave no interior
        fixed = np.flatnonzero(np.isfinite(xl) & (xl == xu))
        self.fix_x = np.setdiff1d(fixed, self.zero_x)
        self.x_const = np.zeros(p.n)
        self.x_const[self.fix_x] = xl[self.fix_x]
        self.keep_x = np.setdiff1d(np.arange(p.n), np.r_[self.zero_x, self.fix_x])
        self.keep_c = np.setdiff1d(np.arange(p.m_eq), self.drop_c)
        self.xl, self.xu, self.hl, self.hu = xl, xu, hl, hu
        hl = np.where(np.isin(np.arange(p.n_general), drop_g), np.nan, hl)
        kept = ~np.isnan(hl)
        eq_h = kept & np.isfinite(hl) & (hl == hu)
        self.gt = np.flatnonzero(kept & ~eq_h)
        self.gf = np.flatnonzero(eq_h)
        self.h_const = hl[self.gf]
        self.nx = len(self.keep_x)
        self.me = len(self.keep_c)
        self.ng = len(self.gt)
        self.nw = self.nx + self.ng
        self.m = self.me + self.ng + len(self.gf)
        L = np.concatenate([xl[self.keep_x], hl[self.gt]])
        U = np.concatenate([xu[self.keep_x], hu[self.gt]])
        r = opts.bound_relax
        fl, fu = np.isfinite(L), np.isfinite(U)
        L[fl] -= r * np.maximum(1.0, np.abs(L[fl]))
        U[fu] += r * np.maximum(1.0, np.abs(U[fu]))
        self.L, self.U = L, U
        self.iL = np.flatnonzero(fl)
        self.iU = np.flatnonzero(fu)
        self.history = []
        self._lwork = None

    # -- evaluations --------------------------------------------------------
    def full_x(self, w):
        x = self.x_const.copy()
        x[self.keep_x] = w[: self.nx]
        return x

    def full_multipliers(self, lam):
        """Equality and general-row multipliers in the layout of the problem."""
        y = np.zeros(self.p.m_eq)
        y[self.keep_c] = lam[: self.me]
        gw = np.zeros(self.p.n_general)
        gw[self.gt] = lam[self.me : self.me + self.ng]
        gw[self.gf] = lam[self.me + self.ng :]
        return y, gw

    def f(self, w):
        return -self.p.objective_breakdown(self.full_x(w)).j_ev

    def grad_f(self, w):
        g = np.zeros(self.nw)
        g[: self.nx] = -self.p.objective_gradient(self.full_x(w))[self.keep_x]
        return g

    def cons(self, w):
        x, t = self.full_x(w), w[self.nx :]
        h = self.p.general(x)
        return np.concatenate([self.p.constraints(x)[self.keep_c], h[self.gt] - t,
                               h[self.gf] - self.h_const])

    def jac(self, w):
        x = self.full_x(w)
        Jc = self.p.jacobian(x).tocsr()[self.keep_c][:, self.keep_x]
        Jh = self.p.general_jacobian(x).tocsr()[:, self.keep_x]
        A = np.zeros((self.m, self.nw))
        A[: self.me, : self.nx] = Jc.toarray()
        A[self.me :, : self.nx] = Jh[np.r_[self.gt, self.gf]].toarray()
        A[self.me + np.arange(self.ng), self.nx + np.arange(self.ng)] = -1.0
        return A

    def hess(self, w, lam):
        y, gw = self.full_multipliers(lam)
        H = np.zeros((self.nw, self.nw))
        Hx = self.p.lagrangian_hessian(self.full_x(w), y, general_w=gw)
        H[: self.nx, : self.nx] = Hx.tocsr()[self.keep_x][:, self.keep_x].toarray()
        return H

    def barrier(self, w, mu):
        sL = w[self.iL] - self.L[self.iL]
        sU = self.U[self.iU] - w[self.iU]
        if np.any(sL <= 0) or np.any(sU <= 0):
            return np.inf
        return self.f(w) - mu * (np.sum(np.log(sL)) + np.sum(np.log(sU)))

    # -- starting point -----------------------------------------------------
    def _push(self, w):
        k1 = k2 = self.opts.bound_push
        L, U = self.L, self.U
        w = w.copy()
        both = np.isfinite(L) & np.isfinite(U)
        lo_only = np.isfinite(L) & ~np.isfinite(U)
        up_only = ~np.isfinite(L) & np.isfinite(U)
        span = np.where(both, U - L, np.inf)
        pl = np.minimum(k1 * np.maximum(1.0, np.abs(L)), k2 * span)
        pu = np.minimum(k1 * np.maximum(1.0, np.abs(U)), k2 * span)
        i = both
        w[i] = np.clip(w[i], L[i] + pl[i], U[i] - pu[i])
        i = lo_only
        w[i] = np.maximum(w[i], L[i] + pl[i])
        i = up_only
        w[i] = np.minimum(w[i], U[i] - pu[i])
        return w

    def _start(self):
        x0 = initial_point(self.p, self.opts)[self.keep_x]
        w = np.concatenate([x0, np.zeros(self.ng)])
        w = self._push(w)  # pushes x into the box
        w[self.nx :] = self.p.general(self.full_x(w))[self.gt]
        return self._push(w)

    def _ls_multipliers(self, w, zL, zU):
        A = self.jac(w)
        r = self.grad_f(w)
        r[self.iL] -= zL
        r[self.iU] += zU
        lam, *_ = np.linalg.lstsq(A.T, -r, rcond=None)
        if np.max(np.abs(lam), initial=0.0) > 1e3:
            lam[:] = 0.0
        return lam

    # -- linear algebra -----------------------------------------------------
    def _factor(self, K, detect_zero=True, scale=None):
        n = K.shape[0]
        if self._lwork is None:
            self._lwork = max(1, 32 * n)
        ldu, ipiv, info = lapack.dsytrf(K, lower=1, lwork=self._lwork)
        if info < 0:
            raise SolverError(f"dsytrf argument error {info}")
        if scale is None:
            scale = max(1.0, np.max(np.abs(np.diag(ldu)), initial=0.0))
        pos, neg, zero = _inertia(ldu, ipiv, 1e-13 * scale if detect_zero else 0.0)
        if info > 0:
            zero = max(zero, 1)
        return ldu, ipiv, (pos, neg, zero)

    def _solve_kkt(self, H, Sigma, A, mu):
        nw, m = self.nw, self.m
        K = np.zeros((nw + m, nw + m))
        K[:nw, :nw] = H
        K[np.arange(nw), np.arange(nw)] += Sigma
        K[nw:, :nw] = A
        dw, dc = 0.0, 0.0
        base = K.copy()

        def build(dw, dc):
            Kt = base.copy()
            Kt[np.arange(nw), np.arange(nw)] += dw
            Kt[np.arange(nw, nw + m), np.arange(nw, nw + m)] -= dc
            return Kt

        ldu, ipiv, (pos, neg, zero) = self._factor(build(0.0, 0.0))
        if pos == nw and neg == m and zero == 0:
            return ldu, ipiv, 0.0
        # zero pivots are judged against the unregularized matrix, not the shifted one
        scale = max(1.0, np.max(np.abs(np.diag(ldu)), initial=0.0))
        if zero > 0 or neg < m:
            dc = 1e-8 * mu**0.25
        last = getattr(self, "_dw_last", 0.0)
        dw = 1e-4 if last == 0.0 else max(self.opts.regularization_floor, last / 3.0)
        while dw < 1e40:
            ldu, ipiv, (pos, neg, zero) = self._factor(build(dw, dc), detect_zero=dc == 0.0, scale=scale)
            if pos == nw and neg == m and zero == 0:
                self._dw_last = dw
                return ldu, ipiv, dw
            if dc == 0.0 and (zero > 0 or neg < m):
                dc = 1e-8 * mu**0.25
                continue
            dw *= 100.0 if last == 0.0 else 8.0
        raise SolverError("inertia correction failed")

    @staticmethod
    def _backsolve(ldu, ipiv, rhs):
        sol, info = lapack.dsytrs(ldu, ipiv, rhs, lower=1)
        if info != 0:
            raise SolverError(f"dsytrs failed ({info})")
        return sol

    # -- step-length helpers ------------------------------------------------
    @staticmethod
    def _max_step(s, ds, tau):
        neg = ds < 0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(-tau * s[neg] / ds[neg])))

    # -- restoration --------------------------------------------------------
    def _restore(self, w, filt, theta_max):
        """Reduce constraint violation by damped Gauss-Newton steps."""
        theta0 = np.sum(np.abs(self.cons(w)))
        rho = 1e-4
        for _ in range(200):
            c = self.cons(w)
            th = np.sum(np.abs(c))
            if th <= 0.9 * theta0 and self._filter_ok(filt, th, self.f(w)) and th <= theta_max:
                return w, True
            A = self.jac(w)
            dist = np.full(self.nw, 1.0)
            dl = w - self.L
            du = self.U - w
            dist = np.minimum(dist, np.where(np.isfinite(dl), dl, 1.0))
            dist = np.minimum(dist, np.where(np.isfinite(du), du, 1.0))
            As = A * dist
            g = As.T @ c
            if np.max(np.abs(g)) < 1e-14 * max(1.0, th):
                return w, False
            while rho < 1e12:
                M = As.T @ As + rho * np.eye(self.nw)
                v = np.linalg.solve(M, -g)
                dwv = dist * v
                a = min(
                    self._max_step(dl[self.iL], dwv[self.iL], 0.99),
                    self._max_step(du[self.iU], -dwv[self.iU], 0.99),
                )
                wt = w + a * dwv
                if np.sum(np.abs(self.cons(wt))) < th:
                    w = wt
                    rho = max(1e-8, rho / 10.0)
                    break
                rho *= 10.0
            else:
                return w, False
        return w, False

    @staticmethod
    def _filter_ok(filt, th, ph):
        return all(th < ft or ph < fp for ft, fp in filt)

    # -- main loop ----------------------------------------------------------
    def run(self) -> Solution:
        p, opts = self.p, self.opts
        tol = opts.kkt_tolerance
        iL, iU, L, U = self.iL, self.iU, self.L, self.U
        w = self._start()
        zL = np.ones(len(iL))
        zU = np.ones(len(iU))
        lam = self._ls_multipliers(w, zL, zU)
        mu = opts.mu_init
        mu_min = tol / 10.0
        filt = []
        theta_max = theta_min = None
        status = SolveStatus.ITERATION_LIMIT
        err = np.inf
        it = 0
        n_short = 0  # consecutive short steps
        watch = None  # snapshot taken before a watchdog step
        for it in range(opts.max_iterations + 1):
            c = self.cons(w)
            A = self.jac(w)
            g = self.grad_f(w)
            sL = w[iL] - L[iL]
            sU = U[iU] - w[iU]
            gl = g + A.T @ lam
            gl[iL] -= zL
            gl[iU] += zU
            err_stat = np.max(np.abs(gl), initial=0.0)
            err_feas = np.max(np.abs(c), initial=0.0)
            comp = max(np.max(np.abs(sL * zL), initial=0.0), np.max(np.abs(sU * zU), initial=0.0))
            err = max(err_stat, err_feas, comp)
            self.history.append(
                {"iter": it, "mu": mu, "kkt": err, "stationarity": err_stat,
                 "feasibility": err_feas, "complementarity": comp}
            )
            if err <= tol:
                status = SolveStatus.OPTIMAL
                break
            if self.empty and err_feas <= tol and not np.any(g):
                # constant objective: any feasible point is optimal with zero multipliers
                lam, zL, zU = np.zeros_like(lam), np.zeros_like(zL), np.zeros_like(zU)
                err = err_feas
                self.history[-1].update(kkt=err, stationarity=0.0, complementarity=0.0)
                status = SolveStatus.OPTIMAL
                break
            if it == opts.max_iterations:
                break
            # barrier parameter update
            def e_mu(mu_):
                cm = max(
                    np.max(np.abs(sL * zL - mu_), initial=0.0),
                    np.max(np.abs(sU * zU - mu_), initial=0.0),
                )
                return max(err_stat, err_feas, cm)

            while mu > mu_min and e_mu(mu) <= self.kappa_eps * mu:
                mu = max(mu_min, min(0.2 * mu, mu**1.5))
                filt = []
                theta_max = None
            theta = np.sum(np.abs(c))
            if theta_max is None:
                theta_max = 1e4 * max(1.0, theta)
                theta_min = 1e-4 * max(1.0, theta)

            # watchdog: judge the relaxed steps against the saved iterate
            if watch is not None:
                if watch["mu"] != mu or self._progress(watch, theta, self.barrier(w, mu)):
                    watch = None
                    n_short = 0
                else:
                    watch["left"] -= 1
                    if watch["left"] == 0:
                        w, lam, zL, zU, filt = watch["state"]
                        watch = None
                        n_short = -10
                        self.history[-1].update(watchdog="reverted")
                        continue

            # Newton step
            H = self.hess(w, lam)
            Sigma = np.zeros(self.nw)
            Sigma[iL] += zL / sL
            Sigma[iU] += zU / sU
            ldu, ipiv, dw_reg = self._solve_kkt(H, Sigma, A, mu)
            gphi = g.copy()
            gphi[iL] -= mu / sL
            gphi[iU] += mu / sU
            rhs = -np.concatenate([gphi + A.T @ lam, c])
            sol = self._backsolve(ldu, ipiv, rhs)
            dx = sol[: self.nw]
            dlam = sol[self.nw :]
            dzL = mu / sL - zL - zL / sL * dx[iL]
            dzU = mu / sU - zU + zU / sU * dx[iU]
            tau = max(0.99, 1.0 - mu)
            a_max = min(self._max_step(sL, dx[iL], tau), self._max_step(sU, -dx[iU], tau))
            a_z = min(self._max_step(zL, dzL, tau), self._max_step(zU, dzU, tau))

            # filter line search
            phi0 = self.barrier(w, mu)
            gpd = float(gphi @ dx)
            tiny = np.max(np.abs(dx) / (1.0 + np.abs(w)), initial=0.0) < 10 * np.finfo(float).eps
            accepted = False
            f_type = False
            alpha = a_max
            if tiny:
                accepted, f_type = True, True
                w_new = w + alpha * dx
            elif n_short >= 5 and watch is None:
                # full step without the filter test, undone if no progress follows
                watch = {"mu": mu, "theta": theta, "phi": phi0, "left": 3,
                         "state": (w, lam, zL, zU, list(filt))}
                accepted, f_type = True, True
                w_new = w + alpha * dx
            else:
                if gpd < 0:
                    a_min = 0.05 * min(
                        self.gamma_theta,
                        self.gamma_phi * theta / -gpd,
                        self.delta * theta**self.s_theta / (-gpd) ** self.s_phi,
                    )
                    if theta > theta_min:
                        a_min = 0.05 * min(self.gamma_theta, self.gamma_phi * theta / -gpd)
                else:
                    a_min = 0.05 * self.gamma_theta
                first = True
                while alpha >= a_min:
                    wt = w + alpha * dx
                    ok, ft = self._acceptable(wt, mu, theta, phi0, gpd, alpha, filt,
                                              theta_max, theta_min)
                    if ok:
                        accepted, f_type, w_new = True, ft, wt
                        break
                    if first:
                        first = False
                        th_t = np.sum(np.abs(self.cons(wt)))
                        if th_t >= theta:
                            w_soc = self._soc(w, alpha, c, wt, ldu, ipiv, gphi, A, lam, sL, sU, tau)
                            if w_soc is not None:
                                ok, ft = self._acceptable(w_soc, mu, theta, phi0, gpd, alpha,
                                                          filt, theta_max, theta_min)
                                if ok:
                                    accepted, f_type, w_new = True, ft, w_soc
                                    break
                    alpha *= 0.5
            if not accepted:
                filt.append(((1 - self.gamma_theta) * theta, phi0 - self.gamma_phi * theta))
                w_new, ok = self._restore(w, filt, theta_max)
                if not ok:
                    status = SolveStatus.INFEASIBLE
                    w = w_new
                    break
                w = w_new
                zL = np.minimum(zL, 1e3 * np.maximum(mu, 1.0))
                zU = np.minimum(zU, 1e3 * np.maximum(mu, 1.0))
                lam = self._ls_multipliers(w, zL, zU)
                self.history[-1].update(alpha=0.0, restoration=True, reg=dw_reg)
                continue
            if not f_type:
                filt.append(((1 - self.gamma_theta) * theta, phi0 - self.gamma_phi * theta))
            w = w_new
            lam = lam + alpha * dlam
            zL = zL + a_z * dzL
            zU = zU + a_z * dzU
            # keep bound multipliers within a factor of the primal-dual estimate
            sL = w[iL] - L[iL]
            sU = U[iU] - w[iU]
            k = self.kappa_sigma
            zL = np.clip(zL, mu / (k * sL), k * mu / sL)
            zU = np.clip(zU, mu / (k * sU), k * mu / sU)
            n_short = n_short + 1 if alpha < 0.01 * a_max else 0
            self.history[-1].update(alpha=alpha, alpha_z=a_z, reg=dw_reg)
            log.debug("iter %d mu %.2e err %.3e alpha %.3f", it, mu, err, alpha)

        return self._package(w, lam, zL, zU, status, it, err)

    def _progress(self, watch, th, ph):
        return (
            th <= (1 - self.gamma_theta) * watch["theta"]
            or ph <= watch["phi"] - self.gamma_phi * watch["theta"]
        ) and th <= 1e2 * max(watch["theta"], 1e-8)

    def _acceptable(self, wt, mu, theta, phi0, gpd, alpha, filt, theta_max, theta_min):
        """Filter test; returns (accepted, armijo_type)."""
        ph = self.barrier(wt, mu)
        if not np.isfinite(ph):
            return False, False
        th = np.sum(np.abs(self.cons(wt)))
        if th > theta_max or not self._filter_ok(filt, th, ph):
            return False, False
        switching = gpd < 0 and alpha * (-gpd) ** self.s_phi > self.delta * theta**self.s_theta
        if theta <= theta_min and switching:
            return ph <= phi0 + self.eta_phi * alpha * gpd, True
        if th <= (1 - self.gamma_theta) * theta or ph <= phi0 - self.gamma_phi * theta:
            return True, False
        return False, False

    def _soc(self, w, alpha, c, wt, ldu, ipiv, gphi, A, lam, sL, sU, tau):
        c_soc = alpha * c + self.cons(wt)
        rhs = -np.concatenate([gphi + A.T @ lam, c_soc])
        sol = self._backsolve(ldu, ipiv, rhs)
        d = sol[: self.nw]
        a = min(self._max_step(sL, d[self.iL], tau), self._max_step(sU, -d[self.iU], tau))
        if a < 1.0:
            return None
        return w + d

    def _stationarity(self, x, y, gw):
        p = self.p
        r = -p.objective_gradient(x) + p.jacobian(x).T @ y
        if p.n_general:
            r = r + p.general_jacobian(x).T @ gw
        return r

    def _recover(self, x, y, gw):
        """Multipliers of dropped rows and of variables held out of the iterate.

        They must make the held-out variables stationary.  Equality rows
        and two-sided general rows are free in sign; a bound multiplier may
        only push away from a bound the variable sits on.
        """
        p = self.p
        cols = np.union1d(self.zero_x, self.fix_x)
        if len(cols) == 0:
            return y, gw, {}
        r = self._stationarity(x, y, gw)[cols]
        blocks, lo, hi = [], [], []
        if len(self.drop_c):
            blocks.append(p.jacobian(x).tocsr()[self.drop_c][:, cols].toarray().T)
            lo.append(np.full(len(self.drop_c), -np.inf))
            hi.append(np.full(len(self.drop_c), np.inf))
        if len(self.drop_g):
            blocks.append(p.general_jacobian(x).tocsr()[self.drop_g][:, cols].toarray().T)
            lo.append(np.where(np.isfinite(self.hl[self.drop_g]), -np.inf, 0.0))
            hi.append(np.where(np.isfinite(self.hu[self.drop_g]), np.inf, 0.0))
        # bound multipliers v = zL - zU; the h2-free concentrations get none
        # because their lower bound is implied by the dropped balance
        bnd = np.setdiff1d(cols, p.hydrogen_free_structure()[0])
        at_lo = np.isfinite(self.xl[bnd]) & (x[bnd] == self.xl[bnd])
        at_hi = np.isfinite(self.xu[bnd]) & (x[bnd] == self.xu[bnd])
        blocks.append(-(cols[:, None] == bnd[None, :]).astype(float))
        lo.append(np.where(at_hi, -np.inf, 0.0))
        hi.append(np.where(at_lo, np.inf, 0.0))
        A = np.hstack(blocks)
        lo, hi = np.concatenate(lo), np.concatenate(hi)
        free = lo < hi
        sol = np.zeros(A.shape[1])
        if np.any(free):
            if np.all(np.isinf(lo[free])) and np.all(np.isinf(hi[free])):
                sol[free] = np.linalg.lstsq(A[:, free], -r, rcond=None)[0]
            else:
                # a tiny ridge picks the smallest multipliers when they are not unique
                Af = A[:, free]
                ridge = 1e-8 * np.eye(Af.shape[1])
                sol[free] = lsq_linear(np.vstack([Af, ridge]), np.r_[-r, np.zeros(Af.shape[1])],
                                       bounds=(lo[free], hi[free]), tol=1e-14).x
        y, gw = y.copy(), gw.copy()
        k = len(self.drop_c)
        y[self.drop_c] = sol[:k]
        gw[self.drop_g] = sol[k : k + len(self.drop_g)]
        return y, gw, dict(zip(bnd.tolist(), sol[k + len(self.drop_g) :]))

    def _package(self, w, lam, zL, zU, status, it, err) -> Solution:
        p = self.p
        x = self.full_x(w)
        y, gw = self.full_multipliers(lam)
        y, gw, v = self._recover(x, y, gw)
        col = np.full(p.n, -1)
        col[self.keep_x] = np.arange(self.nx)
        slot = np.full(p.n_general, -1)
        slot[self.gt] = self.nx + np.arange(self.ng)
        posL = np.full(self.nw, -1)
        posL[self.iL] = np.arange(len(self.iL))
        posU = np.full(self.nw, -1)
        posU[self.iU] = np.arange(len(self.iU))
        z = np.zeros(p.m_ineq)
        for r, row in enumerate(p.ineq_rows):
            if row.kind == "bound":
                k = col[row.var]
                held = v.get(row.var, 0.0)  # zL - zU
            else:
                k = slot[row.func]
                held = -gw[row.func]  # zL - zU for a general row
            if k < 0:
                z[r] = max(held if row.side == "lower" else -held, 0.0)
            elif row.side == "lower":
                z[r] = zL[posL[k]] if posL[k] >= 0 else 0.0
            else:
                z[r] = zU[posU[k]] if posU[k] >= 0 else 0.0
        return Solution(
            problem=p,
            x=x,
            y=y,
            z=z,
            status=status,
            iterations=it,
            kkt_residual=float(err),
            history=self.history,
        )
