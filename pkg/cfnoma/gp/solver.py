"""Barrier interior-point method for geometric programs in log-domain form.

With x = exp(y) a posynomial becomes a log-sum-exp of affine functions of y,
so the program is convex. Phase I minimizes a common slack s over all
inequality rows (the log-variable box included) until a strictly feasible
point appears; phase II follows the central path with damped Newton steps,
keeping the monomial equalities through the KKT system.
"""
import logging
import math
from typing import Mapping, Optional, Tuple

import numpy as np
from scipy import optimize

from ..config.types import SolverSettings
from ..errors import DomainError, GPInfeasibleError, GPNumericalError, GPUnboundedError
from .types import GPProblem, GPSolution, KKTReport, StackedPosynomials


logger = logging.getLogger(__name__)

ARMIJO = 0.01
SHRINK = 0.5
CENTERING_TOL = 1e-10
# relative precision of φ; decrements below it cannot be resolved by a line search
ROUNDING = 1e-13
# λ² below which Newton converges quadratically
QUADRATIC_REGION = 0.1
MIN_STEP = 1e-12
MAX_CENTERING_STEPS = 200
# a stalled line search is accepted as centred below this Newton decrement
STALL_TOL = 1e-6
ACTIVE_WINDOW = 1e-4
BOX_MARGIN = 1e-3


class _Barrier:
    def __init__(self, problem: GPProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        self.names = list(problem.variables)
        index = {v: i for i, v in enumerate(self.names)}
        n = self.n = len(self.names)

        self.obj = StackedPosynomials.build([problem.objective], index)
        self.cons = StackedPosynomials.build(problem.inequalities, index)

        box = settings.log_box
        self.lo = np.full(n, -box)
        self.hi = np.full(n, box)
        self.declared_lo = np.zeros(n, dtype=bool)
        self.declared_hi = np.zeros(n, dtype=bool)
        for name, (lo, hi) in problem.bounds.items():
            j = index[name]
            if lo is not None:
                self.lo[j], self.declared_lo[j] = math.log(lo), True
            if hi is not None:
                self.hi[j], self.declared_hi[j] = math.log(hi), True

        # bound rows G·y + g ≤ 0
        self.G = np.vstack([np.eye(n), -np.eye(n)])
        self.g = np.concatenate([-self.hi, self.lo])

        self.E = np.zeros((len(problem.equalities), n))
        self.h = np.zeros(len(problem.equalities))
        for k, mono in enumerate(problem.equalities):
            for v, e in mono.exps:
                self.E[k, index[v]] = e
            self.h[k] = math.log(mono.coef)

        self.m = self.cons.count + 2 * n
        self.iterations = 0

    # -- evaluation -------------------------------------------------------

    def rows(self, y: np.ndarray) -> np.ndarray:
        F, _ = self.cons.lse(y)
        return np.concatenate([F, self.G @ y + self.g])

    def _value(self, z: np.ndarray, t: float, phase1: bool) -> Optional[float]:
        y = z[: self.n]
        s = z[self.n] if phase1 else 0.0
        vals = self.rows(y) - s
        if not np.all(vals < 0):
            return None
        barrier = -np.sum(np.log(-vals))
        if phase1:
            return t * s + barrier
        F0, _ = self.obj.lse(y)
        return t * F0[0] + barrier

    def _derivatives(self, z: np.ndarray, t: float, phase1: bool) -> Tuple[float, np.ndarray, np.ndarray]:
        n = self.n
        y = z[:n]
        s = z[n] if phase1 else 0.0
        F, w = self.cons.lse(y)
        Jc = self.cons.jacobian(w)
        vals = np.concatenate([F, self.G @ y + self.g]) - s
        d = -1.0 / vals
        J = np.vstack([Jc, self.G])

        grad_y = J.T @ d
        hess_yy = self.cons.weighted_hessian(w, Jc, d[: self.cons.count]) + J.T @ ((d**2)[:, None] * J)
        barrier = -np.sum(np.log(-vals))

        if phase1:
            grad = np.append(grad_y, t - d.sum())
            hess = np.zeros((n + 1, n + 1))
            hess[:n, :n] = hess_yy
            hess[:n, n] = hess[n, :n] = -J.T @ d**2
            hess[n, n] = np.sum(d**2)
            return t * s + barrier, grad, hess

        F0, w0 = self.obj.lse(y)
        J0 = self.obj.jacobian(w0)
        H0 = self.obj.weighted_hessian(w0, J0, np.ones(1))
        return t * F0[0] + barrier, t * J0[0] + grad_y, t * H0 + hess_yy

    def _newton_step(self, z: np.ndarray, grad: np.ndarray, hess: np.ndarray, phase1: bool) -> np.ndarray:
        if self.E.shape[0] == 0:
            try:
                return np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                return np.linalg.lstsq(hess, -grad, rcond=None)[0]
        E = np.hstack([self.E, np.zeros((self.E.shape[0], 1))]) if phase1 else self.E
        r = E @ z + self.h
        p, nz = E.shape[0], z.size
        kkt = np.zeros((nz + p, nz + p))
        kkt[:nz, :nz] = hess
        kkt[:nz, nz:] = E.T
        kkt[nz:, :nz] = E
        rhs = np.concatenate([-grad, -r])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        return sol[:nz]

    def _line_search(
        self, z: np.ndarray, dz: np.ndarray, phi: float, slope: float, decrement: float, t: float, phase1: bool
    ) -> Optional[float]:
        """Backtracking step length, or None when no step improves φ."""
        noise = ROUNDING * (1.0 + abs(phi))
        alpha = 1.0
        while alpha > MIN_STEP:
            value = self._value(z + alpha * dz, t, phase1)
            if value is not None:
                if value <= phi + ARMIJO * alpha * slope:
                    return alpha
                # inside the quadratic region a feasible full step is taken even if φ only moves by rounding
                if alpha == 1.0 and decrement < QUADRATIC_REGION and value <= phi + noise:
                    return alpha
            alpha *= SHRINK
        return None

    def center(self, z: np.ndarray, t: float, phase1: bool) -> Tuple[np.ndarray, bool]:
        """Newton iterations at fixed t. The flag reports a strictly feasible
        point found during phase I."""
        phase = "I" if phase1 else "II"
        for _ in range(MAX_CENTERING_STEPS):
            self.iterations += 1
            if self.iterations > self.settings.max_newton_iters:
                raise GPNumericalError(
                    f"no convergence within {self.settings.max_newton_iters} Newton iterations", phase=phase
                )
            phi, grad, hess = self._derivatives(z, t, phase1)
            dz = self._newton_step(z, grad, hess, phase1)
            decrement = max(float(dz @ hess @ dz), 0.0)
            # λ²/2 bounds the gap to the centre in units of φ, which carries t·F0
            if decrement / 2 <= max(CENTERING_TOL, ROUNDING * (1.0 + abs(phi))):
                return z, False

            alpha = self._line_search(z, dz, phi, float(grad @ dz), decrement, t, phase1)
            if alpha is None:
                if decrement / 2 <= STALL_TOL:
                    logger.debug(f"Line search stalled at t={t:.3g} with decrement {decrement:.3e}, accepting")
                    return z, False
                raise GPNumericalError("line search stalled", phase=phase, decrement=decrement)
            z = z + alpha * dz
            if phase1 and np.all(self.rows(z[: self.n]) < 0):
                return z, True

        if decrement / 2 <= STALL_TOL:
            return z, False
        raise GPNumericalError(
            f"centering did not settle within {MAX_CENTERING_STEPS} Newton steps", phase=phase, decrement=decrement
        )

    # -- phases -----------------------------------------------------------

    def _schedule(self, tol: float):
        """Barrier weights 1/μ0, mu_factor/μ0, ... capped at the first t with m/t ≤ tol."""
        final = self.m / tol
        t = min(1.0 / self.settings.mu0, final)
        while True:
            yield t
            if t >= final:
                return
            t = min(t * self.settings.mu_factor, final)

    def phase_one(self, tol: float, start: Optional[np.ndarray] = None) -> np.ndarray:
        if start is not None:
            y = np.clip(np.asarray(start, dtype=float), self.lo + BOX_MARGIN, self.hi - BOX_MARGIN)
            if self.E.shape[0]:
                # nearest point of the equality plane
                y = y - np.linalg.lstsq(self.E, self.E @ y + self.h, rcond=None)[0]
        elif self.E.shape[0]:
            y = np.linalg.lstsq(self.E, -self.h, rcond=None)[0]
        else:
            y = np.clip(np.zeros(self.n), self.lo, self.hi)
        rows = self.rows(y)
        if np.all(rows < 0):
            return y

        z = np.append(y, rows.max() + 1.0)
        for t in self._schedule(tol):
            z, found = self.center(z, t, phase1=True)
            if found:
                logger.debug(f"Phase I found a strictly feasible point after {self.iterations} Newton steps")
                return z[: self.n]

        slack = float(z[self.n])
        if slack > tol:
            F, _ = self.cons.lse(z[: self.n])
            violations = {label: float(f) for label, f in zip(self.problem.labels, F) if f > 0}
            raise GPInfeasibleError(
                f"phase I slack stays at {slack:.3e}",
                certificate={"slack": slack, "violations": violations},
            )
        raise GPNumericalError("no strictly feasible point", slack=slack)

    def phase_two(self, y: np.ndarray, tol: float) -> Tuple[np.ndarray, float]:
        for t in self._schedule(tol):
            y, _ = self.center(y, t, phase1=False)
        return y, t


def solve_gp(
    problem: GPProblem,
    tol: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
    start: Optional[Mapping[str, float]] = None,
) -> GPSolution:
    """Solve to a duality gap of `tol` in the log objective.

    `start` is an optional positive guess; missing variables start at 1.
    Phase I is skipped when the guess is strictly feasible.
    """
    settings = settings or SolverSettings()
    tol = settings.tol if tol is None else tol
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")

    barrier = _Barrier(problem, settings)
    guess = None
    if start is not None:
        guess = np.array([math.log(start[v]) if start.get(v, 0) > 0 else 0.0 for v in barrier.names])
    y = barrier.phase_one(tol, guess)
    y, t = barrier.phase_two(y, tol)

    pinned_hi = (y >= barrier.hi - BOX_MARGIN) & ~barrier.declared_hi
    pinned_lo = (y <= barrier.lo + BOX_MARGIN) & ~barrier.declared_lo
    if np.any(pinned_hi | pinned_lo):
        pinned = [barrier.names[j] for j in np.flatnonzero(pinned_hi | pinned_lo)]
        raise GPUnboundedError(f"objective keeps improving at the log box for {pinned}", variables=pinned)

    values = dict(zip(barrier.names, np.exp(y).tolist()))
    F, _ = barrier.cons.lse(y)
    multipliers = {label: float(1.0 / (t * -f)) for label, f in zip(problem.labels, F)}
    objective = problem.objective(values)
    logger.debug(
        f"GP solved: {barrier.n} variables, {len(problem.inequalities)} inequalities, "
        f"{len(problem.equalities)} equalities, objective={objective:.6g}, Newton steps={barrier.iterations}"
    )
    return GPSolution(
        values=values,
        objective=objective,
        newton_iterations=barrier.iterations,
        duality_gap=barrier.m / t,
        multipliers=multipliers,
    )


def verify_kkt(
    problem: GPProblem,
    candidate: Mapping[str, float],
    tol: float = 1e-6,
    settings: Optional[SolverSettings] = None,
) -> KKTReport:
    """First-order optimality residuals of the log-transformed program at `candidate`."""
    barrier = _Barrier(problem, settings or SolverSettings())
    try:
        x = np.array([candidate[v] for v in barrier.names], dtype=float)
    except KeyError as e:
        raise DomainError(f"candidate misses variable {e}")
    if np.any(x <= 0):
        raise DomainError("candidate must be strictly positive")
    y = np.log(x)

    F, w = barrier.cons.lse(y)
    Jc = barrier.cons.jacobian(w)
    bound_rows = barrier.G @ y + barrier.g
    F0, w0 = barrier.obj.lse(y)
    g0 = barrier.obj.jacobian(w0)[0]

    # only declared bounds take part; the log box is solver plumbing
    declared = np.concatenate([barrier.declared_hi, barrier.declared_lo])
    primal = float(max(0.0, np.max(np.expm1(F), initial=0.0), np.max(np.expm1(bound_rows[declared]), initial=0.0)))
    equality = float(np.max(np.abs(barrier.E @ y + barrier.h), initial=0.0))

    labels = list(problem.labels)
    bound_labels = [f"bound:{v}:upper" for v in barrier.names] + [f"bound:{v}:lower" for v in barrier.names]
    rows = np.concatenate([F, bound_rows])
    grads = np.vstack([Jc, barrier.G])
    eligible = np.concatenate([np.ones(F.size, dtype=bool), declared])
    active = np.flatnonzero(eligible & (rows >= -ACTIVE_WINDOW))

    columns = [grads[active].T]
    if barrier.E.shape[0]:
        columns += [barrier.E.T, -barrier.E.T]
    A = np.hstack(columns) if columns else np.zeros((barrier.n, 0))
    if A.shape[1] == 0:
        stationarity, lam = float(np.linalg.norm(g0)), np.zeros(0)
    else:
        coeffs, stationarity = optimize.nnls(A, -g0)
        lam = coeffs[: active.size]
    slackness = float(np.max(np.abs(lam * rows[active]), initial=0.0))

    all_labels = labels + bound_labels
    return KKTReport(
        primal_residual=primal,
        equality_residual=equality,
        stationarity=float(stationarity),
        complementary_slackness=slackness,
        active=[all_labels[i] for i in active],
    )
