"""Successive convex approximation of the sum-rate problem for fixed clustering.

Each iteration lower-bounds ln(1+κ) and upper-bounds √V(κ) by tangents in
ln κ, lower-bounds every SINR numerator by an AM-GM monomial around the
current powers, and solves the resulting geometric program.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from opentelemetry import trace

from .config.types import PowerSettings, SolverSettings, SystemConfig
from .errors import DegenerateApproximationError, DomainError, GPError, InfeasibleScenarioError, UnreachableRateError
from .gp import GPProblem, Monomial, Posynomial, solve_gp, square_of_sum
from .network import ClusteringState, NetworkState
from .rate import LN2, RateParams, asr, effective_sinrs, fbc_rate, qos_sinr, rate_objective


logger = logging.getLogger(__name__)
tracer = trace.get_tracer("cfnoma")

QOS_SLACK = 1e-6
WARM_MARGIN = 1e-3


def p_var(m: int, n: int) -> str:
    return f"p[{m},{n}]"


def k_var(n: int) -> str:
    return f"k[{n}]"


@dataclass(frozen=True)
class BoundCoeffs:
    rho: float
    chi: float
    rho_hat: float
    chi_hat: float
    w: float


def bound_coeffs(kappa_bar: float, a_n: float, eta: float) -> BoundCoeffs:
    """Tangents of ln(1+κ) and √(1-(1+κ)⁻²) in ln κ at κ̄."""
    if not kappa_bar > 0:
        raise DomainError(f"kappa_bar must be positive, got {kappa_bar}")
    k = float(kappa_bar)
    rho = k / (1.0 + k)
    chi = math.log1p(k) - rho * math.log(k)
    rho_hat = k / ((1.0 + k) ** 2 * math.sqrt(k * k + 2.0 * k))
    chi_hat = math.sqrt(1.0 - (1.0 + k) ** -2) - rho_hat * math.log(k)
    return BoundCoeffs(rho, chi, rho_hat, chi_hat, (eta / LN2) * (rho - a_n * rho_hat))


def monomial_approx(p_bar: np.ndarray, theta: np.ndarray, L: int) -> Tuple[float, np.ndarray]:
    """c and exponents a with Σ_m √(L p_m θ_m) ≥ c ∏_m (L p_m θ_m)^{a_m}, tight at p̄."""
    terms = np.sqrt(L * np.asarray(p_bar, dtype=float) * np.asarray(theta, dtype=float))
    zeta = terms.sum()
    if zeta <= 0:
        raise DegenerateApproximationError("every p̄·θ term is zero")
    weights = terms / zeta
    support = weights > 0
    c = float(np.exp(-np.sum(weights[support] * np.log(weights[support]))))
    return c, weights / 2.0


def denominator_posynomial(
    n: int, u: int, clustering: ClusteringState, net: NetworkState, config: SystemConfig
) -> Posynomial:
    """SINR-bound denominator of UE n's signal at observer u, over variables p[m,k]."""
    L, c = config.antennas_per_ap, config.sic_coeff
    beta_u = net.beta[:, u]
    sqrt_theta_u = np.sqrt(net.theta[:, u])
    terms: List[Monomial] = [Monomial.const(1.0)]
    for k in range(net.num_ues):
        terms.extend(Monomial(beta_u[m], {p_var(m, k): 1.0}) for m in range(net.num_aps))

    residual = 2.0 - 2.0 * c
    for k in net.ordered_members(clustering.pi[n]):
        if k == n:
            continue
        scale = L if net.rank[k] < net.rank[n] else L * residual
        if scale <= 0:
            continue
        roots = [Monomial(sqrt_theta_u[m], {p_var(m, k): 0.5}) for m in range(net.num_aps)]
        terms.extend(square_of_sum(roots) * scale)
    return Posynomial(terms)


@dataclass(frozen=True)
class ScaState:
    P: np.ndarray
    kappa: np.ndarray
    coeffs: List[BoundCoeffs]
    approximations: Dict[Tuple[int, int], Tuple[float, np.ndarray]]
    iteration: int = 0
    history: Tuple[float, ...] = ()

    @classmethod
    def at(
        cls,
        P: np.ndarray,
        clustering: ClusteringState,
        net: NetworkState,
        config: SystemConfig,
        iteration: int = 0,
        history: Tuple[float, ...] = (),
    ) -> "ScaState":
        params = RateParams.from_config(config)
        kappa = effective_sinrs(P, clustering, net, config)
        coeffs = [bound_coeffs(max(k, 1e-300), params.a, params.eta) for k in kappa]
        approximations = {}
        for n, u in sic_pairs(clustering, net):
            approximations[(n, u)] = monomial_approx(P[:, n], net.theta[:, u], config.antennas_per_ap)
        return cls(P=P, kappa=kappa, coeffs=coeffs, approximations=approximations, iteration=iteration, history=history)

    def surrogate(self, kappa: np.ndarray, params: RateParams) -> float:
        """Tangent-bound value of the unclamped sum rate at κ (frozen UEs use the exact rate)."""
        total = 0.0
        for n, (k, bc) in enumerate(zip(kappa, self.coeffs)):
            if bc.w <= 0:
                total += float(rate_objective(k, params))
            else:
                total += (params.eta / LN2) * (
                    (bc.rho - params.a * bc.rho_hat) * math.log(k) + bc.chi - params.a * bc.chi_hat
                )
        return total


def sic_pairs(clustering: ClusteringState, net: NetworkState) -> List[Tuple[int, int]]:
    """(signal, observer) pairs with the observer decoded no later than the signal."""
    pairs = []
    for g in range(clustering.num_clusters):
        order = list(net.ordered_members(g))
        for j, n in enumerate(order):
            pairs.extend((int(n), int(u)) for u in order[: j + 1])
    return pairs


def denominator_posynomials(
    clustering: ClusteringState, net: NetworkState, config: SystemConfig
) -> Dict[Tuple[int, int], Posynomial]:
    """Denominators of every SIC pair, fixed for a given clustering."""
    return {(n, u): denominator_posynomial(n, u, clustering, net, config) for n, u in sic_pairs(clustering, net)}


def _sinr_constraint(n, u, state, denominators, net, config) -> Posynomial:
    c, a = state.approximations[(n, u)]
    L = config.antennas_per_ap
    exps = {p_var(m, n): 2.0 * a[m] for m in range(net.num_aps) if a[m] > 0}
    coef = c**2 * float(np.prod([(L * net.theta[m, u]) ** (2.0 * a[m]) for m in range(net.num_aps) if a[m] > 0]))
    numerator = Monomial(coef, exps)
    return denominators[(n, u)] * (Monomial.var(k_var(n)) / numerator)


def _power_constraints(problem: GPProblem, clustering, net, config) -> None:
    p_max = config.max_dl_power
    M, N = net.num_aps, net.num_ues
    for m in range(M):
        problem.add(Posynomial(Monomial(1.0 / p_max, {p_var(m, n): 1.0}) for n in range(N)), f"ap-power[{m}]")
    for g in range(clustering.num_clusters):
        order = net.ordered_members(g)
        for earlier, later in zip(order[:-1], order[1:]):
            for m in range(M):
                problem.add(
                    Monomial(1.0, {p_var(m, earlier): 1.0, p_var(m, later): -1.0}), f"sic-order[{m},{earlier},{later}]"
                )


def _power_bounds(net: NetworkState, config: SystemConfig, floor: float) -> Dict[str, Tuple[float, float]]:
    p_max = config.max_dl_power
    return {p_var(m, n): (floor * p_max, p_max) for m in range(net.num_aps) for n in range(net.num_ues)}


def build_gp_subproblem(
    state: ScaState,
    clustering: ClusteringState,
    net: NetworkState,
    config: SystemConfig,
    qos: np.ndarray,
    settings: Optional[PowerSettings] = None,
    denominators: Optional[Dict[Tuple[int, int], Posynomial]] = None,
) -> GPProblem:
    settings = settings or PowerSettings()
    if denominators is None:
        denominators = denominator_posynomials(clustering, net, config)
    objective = Monomial.const(1.0)
    equalities = []
    for n, bc in enumerate(state.coeffs):
        if bc.w > 0:
            objective = objective * Monomial.var(k_var(n), -bc.w)
        else:
            frozen = max(state.kappa[n], qos[n])
            equalities.append(Monomial(1.0 / frozen, {k_var(n): 1.0}))

    problem = GPProblem(objective=Posynomial.of(objective), equalities=equalities,
                        bounds=_power_bounds(net, config, settings.power_floor))
    for n, u in sic_pairs(clustering, net):
        problem.add(_sinr_constraint(n, u, state, denominators, net, config), f"sinr[{n}@{u}]")
    for n in range(net.num_ues):
        if qos[n] > 0:
            problem.add(Monomial(qos[n], {k_var(n): -1.0}), f"qos[{n}]")
    _power_constraints(problem, clustering, net, config)
    return problem


def _warm_start(P: np.ndarray, kappa: np.ndarray, net: NetworkState) -> Dict[str, float]:
    """Current powers with every κ just under its SINR, strictly inside the SINR constraints."""
    start = {p_var(m, n): float(P[m, n]) for m in range(net.num_aps) for n in range(net.num_ues)}
    start.update({k_var(n): float(kappa[n]) * (1.0 - WARM_MARGIN) for n in range(net.num_ues) if kappa[n] > 0})
    return start


def _extract_power(values: Dict[str, float], net: NetworkState) -> np.ndarray:
    P = np.empty((net.num_aps, net.num_ues))
    for m in range(net.num_aps):
        for n in range(net.num_ues):
            P[m, n] = values[p_var(m, n)]
    return P


def initial_power(clustering: ClusteringState, net: NetworkState, config: SystemConfig) -> np.ndarray:
    net.require(clustering)
    rank = np.zeros(net.num_ues)
    for g in range(clustering.num_clusters):
        order = net.ordered_members(g)
        rank[order] = np.arange(1, order.size + 1)
    share = config.max_dl_power * rank / rank.sum()
    return np.tile(share, (net.num_aps, 1))


def enforce_sic_order(P: np.ndarray, clustering: ClusteringState, net: NetworkState) -> np.ndarray:
    """Per AP and cluster, hand the larger powers to the later-decoded members."""
    net.require(clustering)
    out = P.copy()
    for g in range(clustering.num_clusters):
        order = net.ordered_members(g)
        if order.size > 1:
            out[:, order] = np.sort(P[:, order], axis=1)
    return out


def _sanitize(P: np.ndarray, config: SystemConfig, floor: float) -> np.ndarray:
    p_max = config.max_dl_power
    P = np.clip(np.asarray(P, dtype=float), floor * p_max, p_max)
    totals = P.sum(axis=1, keepdims=True)
    return P * np.minimum(1.0, p_max / totals)


@dataclass
class FeasibilityReport:
    feasible: bool
    slack: float
    power: Optional[np.ndarray] = None
    shortfall: Dict[int, float] = field(default_factory=dict)
    iterations: int = 0


def _shortfall(P, clustering, net, config, params) -> Dict[int, float]:
    required = config.min_rate_per_use() * config.bandwidth
    if P is None:
        achieved = np.zeros(net.num_ues)
    else:
        achieved = np.asarray(fbc_rate(effective_sinrs(P, clustering, net, config), params)) * config.bandwidth
    return {n: float(required[n] - achieved[n]) for n in range(net.num_ues) if achieved[n] < required[n] * (1 - QOS_SLACK)}


def feasibility_phase(
    clustering: ClusteringState,
    net: NetworkState,
    config: SystemConfig,
    P0: Optional[np.ndarray] = None,
    settings: Optional[PowerSettings] = None,
    solver: Optional[SolverSettings] = None,
) -> FeasibilityReport:
    """Minimize a common QoS slack s ≥ 1 by repeated convexification; s = 1 means every UE meets its requirement."""
    settings = settings or PowerSettings()
    params = RateParams.from_config(config)
    net.require(clustering)
    try:
        qos = qos_sinr(config, params)
    except UnreachableRateError as e:
        logger.warning(f"Rate requirement unreachable: {e.reason}")
        return FeasibilityReport(feasible=False, slack=math.inf, shortfall=_shortfall(None, clustering, net, config, params))

    P = _sanitize(initial_power(clustering, net, config) if P0 is None else P0, config, settings.power_floor)
    P = enforce_sic_order(P, clustering, net)
    denominators = denominator_posynomials(clustering, net, config)
    slack = math.inf
    for it in range(1, settings.feasibility_max_iter + 1):
        state = ScaState.at(P, clustering, net, config)
        problem = GPProblem(objective=Posynomial.of(Monomial.var("s")),
                            bounds={**_power_bounds(net, config, settings.power_floor), "s": (1.0, None)})
        for n, u in sic_pairs(clustering, net):
            problem.add(_sinr_constraint(n, u, state, denominators, net, config), f"sinr[{n}@{u}]")
        for n in range(net.num_ues):
            if qos[n] > 0:
                problem.add(Monomial(qos[n], {k_var(n): -1.0, "s": -1.0}), f"qos[{n}]")
        _power_constraints(problem, clustering, net, config)
        start = _warm_start(P, state.kappa, net)
        need = qos[qos > 0] / np.maximum(state.kappa[qos > 0] * (1.0 - WARM_MARGIN), 1e-300)
        start["s"] = max(1.0, float(need.max(initial=1.0))) * (1.0 + WARM_MARGIN)
        try:
            solution = solve_gp(problem, tol=settings.gp_tol, settings=solver, start=start)
        except GPError as e:
            logger.warning(f"Feasibility GP failed at iteration {it}: {e.reason}")
            break
        P = _extract_power(solution.values, net)
        previous, slack = slack, solution.values["s"]
        logger.debug(f"Feasibility iteration {it}: slack={slack:.6g}")
        if slack <= 1.0 + settings.feasibility_tol:
            return FeasibilityReport(feasible=True, slack=slack, power=P, iterations=it)
        if previous - slack <= settings.feasibility_tol * previous:
            break

    return FeasibilityReport(
        feasible=False,
        slack=slack,
        power=P,
        shortfall=_shortfall(P, clustering, net, config, params),
        iterations=it,
    )


@dataclass
class SpaResult:
    power: np.ndarray
    kappa: np.ndarray
    history: List[float]
    iterations: int
    termination: str
    bound_violations: int = 0


def spa(
    P0: np.ndarray,
    clustering: ClusteringState,
    net: NetworkState,
    config: SystemConfig,
    settings: Optional[PowerSettings] = None,
    solver: Optional[SolverSettings] = None,
) -> SpaResult:
    settings = settings or PowerSettings()
    params = RateParams.from_config(config)
    net.require(clustering)

    with tracer.start_as_current_span("spa.run") as span:
        span.set_attribute("ues", net.num_ues)
        span.set_attribute("clusters", clustering.num_clusters)
        try:
            qos = qos_sinr(config, params)
        except UnreachableRateError as e:
            report = feasibility_phase(clustering, net, config, settings=settings, solver=solver)
            raise InfeasibleScenarioError(e.reason, shortfall=report.shortfall)

        P = enforce_sic_order(_sanitize(P0, config, settings.power_floor), clustering, net)
        if np.any(effective_sinrs(P, clustering, net, config) < qos * (1 - QOS_SLACK)):
            report = feasibility_phase(clustering, net, config, P0=P, settings=settings, solver=solver)
            if not report.feasible:
                raise InfeasibleScenarioError(
                    f"QoS unreachable for {len(report.shortfall)} UE(s), slack {report.slack:.4g}",
                    shortfall=report.shortfall,
                )
            P = report.power

        denominators = denominator_posynomials(clustering, net, config)
        objective = asr(P, clustering, net, config)
        history = [objective]
        violations = 0
        termination = "max-iter"
        iterations = 0
        logger.info(f"SPA start: ASR={objective:.6f} bits/use, {net.num_ues} UEs in {clustering.num_clusters} clusters")

        for it in range(1, settings.max_iter + 1):
            iterations = it
            with tracer.start_as_current_span("spa.iteration") as it_span:
                it_span.set_attribute("iteration", it)
                state = ScaState.at(P, clustering, net, config, iteration=it, history=tuple(history))
                problem = build_gp_subproblem(state, clustering, net, config, qos, settings, denominators)
                try:
                    solution = solve_gp(
                        problem, tol=settings.gp_tol, settings=solver, start=_warm_start(P, state.kappa, net)
                    )
                except GPError as e:
                    logger.warning(f"SPA iteration {it}: GP failed ({e.error}: {e.reason}), keeping current power")
                    termination = "solver-failure"
                    break

                P_new = _extract_power(solution.values, net)
                kappa_new = np.array([solution.values[k_var(n)] for n in range(net.num_ues)])
                objective_new = asr(P_new, clustering, net, config)

                unclamped = float(np.sum(rate_objective(effective_sinrs(P_new, clustering, net, config), params)))
                if state.surrogate(kappa_new, params) > unclamped + 1e-9 * max(1.0, abs(unclamped)):
                    violations += 1
                    logger.warning(f"SPA iteration {it}: surrogate exceeds the true objective at the GP solution")

                it_span.set_attribute("asr", objective_new)
                if objective_new < objective:
                    # a drop within ξ is solver noise at the fixed point
                    if objective - objective_new <= settings.xi * max(abs(objective), 1e-300):
                        termination = "converged"
                    else:
                        logger.warning(
                            f"SPA iteration {it}: rejected ascent step ({objective_new:.6f} < {objective:.6f})"
                        )
                        termination = "rejected-step"
                    break

                change = abs(objective_new - objective) / max(abs(objective), 1e-300)
                P, objective = P_new, objective_new
                history.append(objective)
                logger.debug(f"SPA iteration {it}: ASR={objective:.6f}, relative change {change:.3e}")
                if change < settings.xi:
                    termination = "converged"
                    break

        span.set_attribute("iterations", iterations)
        span.set_attribute("termination", termination)
        logger.info(f"SPA stop after {iterations} iteration(s) ({termination}): ASR={objective:.6f} bits/use")
        return SpaResult(
            power=P,
            kappa=effective_sinrs(P, clustering, net, config),
            history=history,
            iterations=iterations,
            termination=termination,
            bound_violations=violations,
        )
