"""Finite-blocklength rates and the closed-form SINR lower bound."""
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize, special

from .config.types import SystemConfig
from .errors import DomainError, OrderingViolationError, UnreachableRateError
from .network import ClusteringState, NetworkState


logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
SINR_CAP = 1e12

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class RateParams:
    eta: float
    tau_d: int
    epsilon: float
    qinv: float

    @classmethod
    def create(cls, eta: float, tau_d: int, epsilon: float) -> "RateParams":
        if not 0 < eta < 1:
            raise DomainError(f"eta must lie in (0, 1), got {eta}")
        if tau_d <= 0:
            raise DomainError(f"tau_d must be positive, got {tau_d}")
        return cls(eta=eta, tau_d=tau_d, epsilon=epsilon, qinv=q_inverse(epsilon))

    @classmethod
    def from_config(cls, config: SystemConfig) -> "RateParams":
        return cls.create(config.eta, config.data_len, config.epsilon)

    @property
    def a(self) -> float:
        return self.qinv / math.sqrt(self.eta * self.tau_d)


@dataclass(frozen=True)
class SinrBreakdown:
    desired: float
    inter_cluster: float
    intra_pre_sic: float
    residual_sic: float
    beamform_uncertainty: float
    noise: float = 1.0

    @property
    def interference(self) -> float:
        return (
            self.inter_cluster
            + self.intra_pre_sic
            + self.residual_sic
            + self.beamform_uncertainty
            + self.noise
        )

    @property
    def sinr(self) -> float:
        return self.desired / self.interference


def q_function(x: ArrayLike) -> ArrayLike:
    return 0.5 * special.erfc(np.asarray(x) / math.sqrt(2.0))


def q_inverse(epsilon: float) -> float:
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    return float(math.sqrt(2.0) * special.erfcinv(2.0 * epsilon))


def dispersion(gamma: ArrayLike) -> ArrayLike:
    return 1.0 - (1.0 + np.asarray(gamma, dtype=float)) ** -2


def rate_objective(gamma: ArrayLike, params: RateParams) -> ArrayLike:
    """Unclamped rate (bits per channel use); negative below the zero-rate threshold."""
    gamma = np.asarray(gamma, dtype=float)
    return params.eta * np.log2(1.0 + gamma) - np.sqrt(
        params.eta * dispersion(gamma) / params.tau_d
    ) * params.qinv / LN2


def fbc_rate(gamma: ArrayLike, params: RateParams) -> ArrayLike:
    rate = np.maximum(rate_objective(gamma, params), 0.0)
    return float(rate) if np.ndim(rate) == 0 else rate


def nats_rate(gamma: ArrayLike, params: RateParams) -> ArrayLike:
    """max(ln(1+γ) - a·√V(γ), 0), the per-UE term of a cluster's rate variable."""
    gamma = np.asarray(gamma, dtype=float)
    value = np.maximum(np.log1p(gamma) - params.a * np.sqrt(dispersion(gamma)), 0.0)
    return float(value) if value.ndim == 0 else value


def zero_rate_threshold(params: RateParams, cap: float = SINR_CAP) -> float:
    if params.qinv <= 0:
        return 0.0
    lo = 1e-12
    if rate_objective(lo, params) >= 0:
        return 0.0
    if rate_objective(cap, params) <= 0:
        raise UnreachableRateError("rate stays nonpositive up to the SINR cap", cap=cap)
    return float(optimize.brentq(lambda g: rate_objective(g, params), lo, cap, xtol=1e-300, rtol=1e-15, maxiter=500))


def rate_inverse(target_rate: float, params: RateParams, cap: float = SINR_CAP) -> float:
    if target_rate < 0:
        raise DomainError(f"target rate must be nonnegative, got {target_rate}")
    gamma0 = zero_rate_threshold(params, cap)
    if target_rate == 0:
        return gamma0
    if rate_objective(cap, params) < target_rate:
        raise UnreachableRateError(
            f"target rate {target_rate:.6g} exceeds the rate at the SINR cap", target=target_rate, cap=cap
        )
    return float(
        optimize.brentq(
            lambda g: rate_objective(g, params) - target_rate, gamma0, cap, xtol=1e-300, rtol=1e-15, maxiter=500
        )
    )


def qos_sinr(config: SystemConfig, params: RateParams) -> np.ndarray:
    """Minimum SINR per UE implied by the configured rate requirements."""
    targets = config.min_rate_per_use()
    cache = {}
    out = np.empty(targets.size)
    for n, target in enumerate(targets):
        if target not in cache:
            cache[target] = 0.0 if target == 0 else rate_inverse(float(target), params)
        out[n] = cache[target]
    return out


def cluster_sinr_block(
    p_cols: np.ndarray,
    theta_cols: np.ndarray,
    beta_cols: np.ndarray,
    total_power: np.ndarray,
    L: int,
    c: float,
) -> np.ndarray:
    """Pairwise SINR bounds for one cluster whose columns are in SIC order.

    Entry [i, j] is the bound for member j's signal observed at member i;
    entries with i > j are +inf. `total_power` is the per-AP sum of all
    UEs' powers (length M).
    """
    coherent = L * (np.sqrt(theta_cols).T @ np.sqrt(p_cols)) ** 2
    all_ues = beta_cols.T @ total_power
    earlier = np.cumsum(coherent, axis=1) - coherent
    later = coherent.sum(axis=1, keepdims=True) - np.cumsum(coherent, axis=1)
    denominator = all_ues[:, None] + earlier + (2.0 - 2.0 * c) * later + 1.0
    block = coherent / denominator
    block[np.tril_indices(block.shape[0], k=-1)] = np.inf
    return block


def cluster_sinr_matrix(
    g: int, P: np.ndarray, clustering: ClusteringState, net: NetworkState, config: SystemConfig
) -> np.ndarray:
    net.require(clustering)
    order = net.ordered_members(g)
    return cluster_sinr_block(
        P[:, order],
        net.theta[:, order],
        net.beta[:, order],
        P.sum(axis=1),
        config.antennas_per_ap,
        config.sic_coeff,
    )


def effective_sinrs(
    P: np.ndarray, clustering: ClusteringState, net: NetworkState, config: SystemConfig
) -> np.ndarray:
    net.require(clustering)
    gammas = np.zeros(net.num_ues)
    total = P.sum(axis=1)
    for g in range(clustering.num_clusters):
        order = net.ordered_members(g)
        if order.size == 0:
            continue
        block = cluster_sinr_block(
            P[:, order], net.theta[:, order], net.beta[:, order], total,
            config.antennas_per_ap, config.sic_coeff,
        )
        gammas[order] = block.min(axis=0)
    return gammas


def union_sinrs(
    P: np.ndarray, clustering: ClusteringState, net: NetworkState, config: SystemConfig
) -> np.ndarray:
    """1/Σ_u (1/γ̄ᵘₙ) over each UE's SIC observers.

    Unlike the min over observers, this stays below E⁻¹{1/min_u γᵘₙ} when the
    minimum is taken inside every channel realization, because
    max_u 1/γᵘ ≤ Σ_u 1/γᵘ. Equal to `effective_sinrs` for a UE with a single
    observer.
    """
    net.require(clustering)
    gammas = np.zeros(net.num_ues)
    total = P.sum(axis=1)
    for g in range(clustering.num_clusters):
        order = net.ordered_members(g)
        if order.size == 0:
            continue
        block = cluster_sinr_block(
            P[:, order], net.theta[:, order], net.beta[:, order], total,
            config.antennas_per_ap, config.sic_coeff,
        )
        with np.errstate(divide="ignore"):
            gammas[order] = 1.0 / (1.0 / block).sum(axis=0)
    return gammas


def sinr_breakdown(
    n: int,
    u: int,
    P: np.ndarray,
    clustering: ClusteringState,
    net: NetworkState,
    config: SystemConfig,
) -> SinrBreakdown:
    net.require(clustering)
    if clustering.pi[n] != clustering.pi[u]:
        raise DomainError(f"UE {u} does not share a cluster with UE {n}")
    if net.rank[u] > net.rank[n]:
        raise OrderingViolationError(f"observer UE {u} is decoded after UE {n}", signal=int(n), observer=int(u))

    L, c = config.antennas_per_ap, config.sic_coeff
    sqrt_theta_u = np.sqrt(net.theta[:, u])
    beta_u = net.beta[:, u]

    def coherent(k: int) -> float:
        return L * float(np.sqrt(P[:, k]) @ sqrt_theta_u) ** 2

    inter = pre = residual = 0.0
    for k in range(net.num_ues):
        spill = float(P[:, k] @ beta_u)
        if k == n:
            continue
        if clustering.pi[k] != clustering.pi[n]:
            inter += spill
        elif net.rank[k] < net.rank[n]:
            pre += spill + coherent(k)
        else:
            residual += spill + (2.0 - 2.0 * c) * coherent(k)

    return SinrBreakdown(
        desired=coherent(n),
        inter_cluster=inter,
        intra_pre_sic=pre,
        residual_sic=residual,
        beamform_uncertainty=float(P[:, n] @ beta_u),
    )


def pairwise_sinr_lb(n, u, P, clustering, net, config) -> float:
    return sinr_breakdown(n, u, P, clustering, net, config).sinr


def effective_sinr_lb(n, P, clustering, net, config) -> float:
    net.require(clustering)
    g = clustering.pi[n]
    observers = [u for u in net.ordered_members(g) if net.rank[u] <= net.rank[n]]
    return min(pairwise_sinr_lb(n, u, P, clustering, net, config) for u in observers)


def lb_rate(n, P, clustering, net, config) -> float:
    return fbc_rate(effective_sinr_lb(n, P, clustering, net, config), RateParams.from_config(config))


def lb_rates(P, clustering, net, config) -> np.ndarray:
    return fbc_rate(effective_sinrs(P, clustering, net, config), RateParams.from_config(config))


def asr(P, clustering, net, config) -> float:
    """Sum of lower-bound rates over real UEs, bits per channel use."""
    return float(np.sum(lb_rates(P, clustering, net, config)))


def asr_bps(P, clustering, net, config) -> float:
    return asr(P, clustering, net, config) * config.bandwidth


def union_lb_rates(P, clustering, net, config) -> np.ndarray:
    return fbc_rate(union_sinrs(P, clustering, net, config), RateParams.from_config(config))
