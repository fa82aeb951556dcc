"""Deployment geometry, large-scale fading, pilot statistics and UE ordering."""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import numpy as np

from .config.types import PathLossModel, SystemConfig
from .errors import DomainError
from .seeding import substream


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClusteringState:
    """Cluster index per real UE.

    Virtual UE of cluster g is node N + g in graph terms; it has no
    column here since it carries zero power and zero rate.
    """

    pi: np.ndarray
    num_clusters: int

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.int64).copy()
        if pi.ndim != 1 or pi.size == 0:
            raise DomainError("cluster vector must be one-dimensional and nonempty")
        if pi.min() < 0 or pi.max() >= self.num_clusters:
            raise DomainError(
                f"cluster indices must lie in [0, {self.num_clusters})", pi=pi.tolist()
            )
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_matrix(cls, x: np.ndarray) -> "ClusteringState":
        x = np.asarray(x)
        if not np.all(x.sum(axis=0) == 1) or not np.isin(x, (0, 1)).all():
            raise DomainError("each UE column of the assignment matrix needs exactly one 1")
        return cls(pi=np.argmax(x, axis=0), num_clusters=x.shape[0])

    @property
    def num_ues(self) -> int:
        return int(self.pi.size)

    @property
    def x(self) -> np.ndarray:
        x = np.zeros((self.num_clusters, self.num_ues), dtype=np.int64)
        x[self.pi, np.arange(self.num_ues)] = 1
        return x

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.pi == g)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.pi, minlength=self.num_clusters)

    def virtual_node(self, g: int) -> int:
        return self.num_ues + g

    def moved(self, moves: dict) -> "ClusteringState":
        pi = self.pi.copy()
        for ue, g in moves.items():
            pi[ue] = g
        return ClusteringState(pi=pi, num_clusters=self.num_clusters)

    def key(self) -> bytes:
        return self.pi.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusteringState):
            return NotImplemented
        return self.num_clusters == other.num_clusters and np.array_equal(self.pi, other.pi)

    def __hash__(self) -> int:
        return hash((self.num_clusters, self.key()))


@dataclass(frozen=True, eq=False)
class NetworkState:
    ap_positions: np.ndarray
    ue_positions: np.ndarray
    beta: np.ndarray
    clustering: Optional[ClusteringState] = None
    theta: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    order: Optional[np.ndarray] = None
    rank: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def num_aps(self) -> int:
        return self.beta.shape[0]

    @property
    def num_ues(self) -> int:
        return self.beta.shape[1]

    def assign(self, clustering: ClusteringState, config: SystemConfig) -> "NetworkState":
        """Pilot statistics and SIC ordering for `clustering`."""
        if clustering.num_ues != self.num_ues:
            raise DomainError(
                f"clustering covers {clustering.num_ues} UEs, network has {self.num_ues}"
            )
        theta = pilot_gain_theta(self.beta, clustering, config.pilot_power, clustering.num_clusters)
        omega = effective_gain_omega(theta, config.antennas_per_ap)
        order = order_by_omega(omega)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return replace(self, clustering=clustering, theta=theta, omega=omega, order=order, rank=rank)

    def require(self, clustering: ClusteringState) -> None:
        if self.theta is None or self.clustering is None:
            raise DomainError("network state has no pilot statistics; call assign() first")
        if self.clustering != clustering:
            raise DomainError("network state was assigned for a different clustering")

    def ordered_members(self, g: int) -> np.ndarray:
        """Members of cluster g, strongest (earliest decoded) first."""
        members = self.clustering.members(g)
        return members[np.argsort(self.rank[members], kind="stable")]


def path_loss_three_slope(
    distance: Union[float, np.ndarray], model: PathLossModel = PathLossModel()
) -> Union[float, np.ndarray]:
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise DomainError("distance must be nonnegative")
    ref = model.reference_m
    d0 = model.d0_m / ref
    d1 = model.d1_m / ref
    # clip keeps log10 finite; the flat branch covers everything below d0
    dn = np.maximum(d / ref, d0)
    far = -model.l_bar_db - 35 * np.log10(dn)
    mid = -model.l_bar_db - 15 * np.log10(d1) - 20 * np.log10(dn)
    near = -model.l_bar_db - 15 * np.log10(d1) - 20 * np.log10(d0)
    pl = np.where(dn > d1, far, np.where(dn > d0, mid, near))
    return float(pl) if pl.ndim == 0 else pl


def generate_deployment(config: SystemConfig, seed: Optional[int] = None) -> NetworkState:
    seed = config.rng_seed if seed is None else seed
    rng = substream(seed, "deployment")
    ap_positions = rng.uniform(0.0, config.area_side, size=(config.num_aps, 2))
    ue_positions = rng.uniform(0.0, config.area_side, size=(config.num_ues, 2))

    distances = np.linalg.norm(ap_positions[:, None, :] - ue_positions[None, :, :], axis=-1)
    shadowing = substream(seed, "shadowing").normal(
        0.0, config.shadow_sigma_db, size=(config.num_aps, config.num_ues)
    )
    beta = 10 ** ((path_loss_three_slope(distances, config.path_loss) + shadowing) / 10)
    logger.debug(
        f"Deployment seed={seed}: M={config.num_aps} N={config.num_ues}, "
        f"beta range [{beta.min():.3e}, {beta.max():.3e}]"
    )
    return NetworkState(ap_positions=ap_positions, ue_positions=ue_positions, beta=beta)


def cluster_load(beta: np.ndarray, clustering: ClusteringState) -> np.ndarray:
    """Per-AP sum of β over each cluster's members, shape M x G."""
    return beta @ clustering.x.T


def pilot_gain_theta(
    beta: np.ndarray, clustering: ClusteringState, p_p: float, G: int
) -> np.ndarray:
    load = cluster_load(beta, clustering)
    return G * p_p * beta**2 / (1.0 + G * p_p * load[:, clustering.pi])


def theta_for_members(beta: np.ndarray, members: np.ndarray, p_p: float, G: int) -> np.ndarray:
    """θ columns of `members` if they formed one cluster, shape M x len(members)."""
    cols = beta[:, members]
    return G * p_p * cols**2 / (1.0 + G * p_p * cols.sum(axis=1, keepdims=True))


def effective_gain_omega(theta: np.ndarray, L: int) -> np.ndarray:
    return L**2 * np.sqrt(theta).sum(axis=0) ** 2 + L * theta.sum(axis=0)


def order_by_omega(omega: np.ndarray, index: Optional[np.ndarray] = None) -> np.ndarray:
    """Positions sorted by descending Ω, ties by ascending index."""
    omega = np.asarray(omega)
    index = np.arange(omega.size) if index is None else np.asarray(index)
    return np.lexsort((index, -omega))


def effective_gain_order(theta: np.ndarray, L: int) -> np.ndarray:
    return order_by_omega(effective_gain_omega(theta, L))


def balanced_sizes(N: int, G: int) -> List[int]:
    return [N // G + (1 if g < N % G else 0) for g in range(G)]
