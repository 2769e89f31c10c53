"""Choosing which public examples to send for labelling.

Five strategies share one result type: ``random``, ``entropy`` and
``margin`` (uncertainty sampling), ``onlypublic`` (cluster the most
uncertain public points in PCA space of the model's embeddings and take the
points nearest each centroid) and ``nearprivate`` (rank uncertain public
points by a Laplace-noised count of uncertain private points that are their
nearest neighbour in DP-PCA space).

Only ``nearprivate`` reads private data, so it is the only strategy that
appends to the privacy ledger.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, ParameterError
from .model import forward, log_softmax
from .numerics import kmeans, nearest, pca_fit, project, seeded_rng
from .privacy.mechanisms import dp_pca, laplace_mechanism

METHODS = ("random", "entropy", "margin", "onlypublic", "nearprivate")
UNCERTAINTY = ("entropy", "margin")


@dataclass(frozen=True)
class SelectionConfig:
    n_labeled: int = 100
    k_uncertain: int | None = None  # defaults to 5 * n_labeled
    n_components: int = 8
    n_cluster: int | None = None  # defaults to n_labeled // n_each
    n_each: int = 1
    uncertainty: str = "entropy"
    eps_dppca: float = 0.5
    eps_support: float = 0.5
    delta_dppca: float = 1e-6
    seed: int = 0
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.n_labeled < 0:
            raise ParameterError("n_labeled must be non-negative")
        if self.uncertainty not in UNCERTAINTY:
            raise ParameterError(f"uncertainty must be one of {UNCERTAINTY}")
        if self.k < self.n_labeled:
            raise ParameterError(f"k_uncertain={self.k} must be at least n_labeled={self.n_labeled}")
        if self.n_components < 1 or self.n_each < 1:
            raise ParameterError("n_components and n_each must be positive")
        if self.eps_dppca < 0 or self.eps_support < 0:
            raise ParameterError("privacy budgets must be non-negative")

    @property
    def k(self) -> int:
        return 5 * self.n_labeled if self.k_uncertain is None else self.k_uncertain

    @property
    def clusters(self) -> int:
        return self.n_labeled // self.n_each if self.n_cluster is None else self.n_cluster

    @property
    def selection_cost(self) -> float:
        return self.eps_dppca + self.eps_support

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SelectionResult:
    method: str
    chosen: np.ndarray
    scores: np.ndarray
    candidates: np.ndarray | None = None
    raw_counts: np.ndarray | None = None
    noisy_counts: np.ndarray | None = None
    privacy_spent: tuple = (0.0, 0.0)
    ledger_entries: list = field(default_factory=list)

    def pollution_fraction(self, public) -> float:
        if len(self.chosen) == 0:
            return 0.0
        return float(public.pollution[self.chosen].sum()) / len(self.chosen)

    def to_manifest(self, config=None, public=None) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        out = {
            "method": self.method,
            "config": config,
            "chosen": lst(self.chosen),
            "diagnostics": {
                "scores": lst(self.scores),
                "candidates": lst(self.candidates),
                "raw_counts": lst(self.raw_counts),
                "noisy_counts": lst(self.noisy_counts),
            },
            "privacy_spent": {"epsilon": self.privacy_spent[0], "delta": self.privacy_spent[1]},
            "ledger_entries": [e.to_dict() for e in self.ledger_entries],
        }
        if public is not None:
            out["pollution_fraction"] = self.pollution_fraction(public)
        return out


def uncertainty_scores(logits, method="entropy") -> np.ndarray:
    """Per-row uncertainty of softmax(logits); larger means more uncertain.

    ``entropy`` is the Shannon entropy in nats; ``margin`` is minus the gap
    between the two largest class probabilities.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError("logits must be (n, num_classes) with num_classes >= 2")
    logp = log_softmax(logits)
    probs = np.exp(logp)
    if method == "entropy":
        return -np.sum(probs * logp, axis=1)
    if method == "margin":
        top2 = np.sort(probs, axis=1)[:, -2:]
        return -(top2[:, 1] - top2[:, 0])
    raise ParameterError(f"unknown uncertainty method {method!r}")


def most_uncertain(scores, k) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index."""
    return np.argsort(-np.asarray(scores), kind="stable")[:k]


def _check_count(n_labeled, n_pool):
    if n_labeled > n_pool:
        raise ParameterError(f"cannot choose {n_labeled} of {n_pool} examples")
    if n_labeled < 0:
        raise ParameterError("n_labeled must be non-negative")


def select_random(n_public, n_labeled, seed) -> SelectionResult:
    _check_count(n_labeled, n_public)
    chosen = seeded_rng(seed).choice(n_public, size=n_labeled, replace=False)
    return SelectionResult("random", np.asarray(chosen, dtype=np.int64), np.zeros(n_labeled))


def select_uncertain(params, public, n_labeled, method="entropy") -> SelectionResult:
    _check_count(n_labeled, len(public))
    scores = uncertainty_scores(forward(params, public.features).logits, method)
    chosen = most_uncertain(scores, n_labeled)
    return SelectionResult(method, chosen, scores[chosen])


def take_center_points(points, clustering, candidate_ids, n_each, n_total) -> np.ndarray:
    """Positions (into ``points``) of the ``n_each`` members nearest each centroid.

    Clusters are visited in index order; members are ranked by distance to
    their centroid, ties to the lower candidate id.  Short clusters give up
    all members, and the shortfall is filled with the unchosen points closest
    to any centroid.
    """
    d2 = np.sum((points - clustering.centroids[clustering.assignment]) ** 2, axis=1)
    picked = []
    for c in range(len(clustering.centroids)):
        members = np.flatnonzero(clustering.assignment == c)
        order = np.lexsort((candidate_ids[members], d2[members]))
        picked.extend(members[order[:n_each]].tolist())
    deficit = n_total - len(picked)
    if deficit > 0:
        rest = np.setdiff1d(np.arange(len(points)), picked)
        order = np.lexsort((candidate_ids[rest], d2[rest]))
        picked.extend(rest[order[:deficit]].tolist())
    return np.asarray(picked[:n_total], dtype=np.int64)


def select_onlypublic(params, public, cfg: SelectionConfig) -> SelectionResult:
    """Cluster-diverse uncertain public points; touches no private data."""
    n_labeled = cfg.n_labeled
    if cfg.clusters * cfg.n_each != n_labeled:
        raise ParameterError(
            f"n_cluster * n_each = {cfg.clusters} * {cfg.n_each} must equal n_labeled = {n_labeled}"
        )
    k = min(cfg.k, len(public))
    _check_count(n_labeled, k)
    if n_labeled == 0:
        return SelectionResult("onlypublic", np.zeros(0, dtype=np.int64), np.zeros(0))
    out = forward(params, public.features)
    p = min(cfg.n_components, out.embedding.shape[1])
    basis = pca_fit(out.embedding, p)
    scores = uncertainty_scores(out.logits, cfg.uncertainty)
    candidates = most_uncertain(scores, k)
    projected = project(out.embedding[candidates], basis)
    clustering = kmeans(projected, cfg.clusters, seed=cfg.seed, max_iter=cfg.kmeans_max_iter)
    picked = take_center_points(projected, clustering, candidates, cfg.n_each, n_labeled)
    chosen = candidates[picked]
    return SelectionResult("onlypublic", chosen, scores[chosen], candidates=candidates)


def assign_neighbors(private_points, public_points) -> np.ndarray:
    """How many private rows have each public row as their nearest neighbour."""
    private_points = np.asarray(private_points, dtype=np.float64)
    public_points = np.asarray(public_points, dtype=np.float64)
    if private_points.ndim != 2 or public_points.ndim != 2 or private_points.shape[1] != public_points.shape[1]:
        raise DimensionError("private and public points must be 2-D with the same width")
    if len(private_points) == 0 or len(public_points) == 0:
        raise DimensionError("both point sets must be non-empty")
    idx, _ = nearest(private_points, public_points)
    return np.bincount(idx, minlength=len(public_points))


def select_nearprivate(params, private, public, cfg: SelectionConfig, rng, ledger) -> SelectionResult:
    """Uncertain public points with the most (noised) uncertain private neighbours.

    Spends ``eps_dppca`` (Gaussian, with ``delta_dppca``) on the projection
    and ``eps_support`` (Laplace) on the neighbour counts.  Picking the
    uncertain private subset itself is not charged separately.
    """
    if private is None or private.features is None:
        raise ContractError("nearprivate needs the private training data")
    if not (cfg.eps_dppca > 0 and cfg.eps_support > 0):
        raise ParameterError("nearprivate needs positive eps_dppca and eps_support")
    k_pub = min(cfg.k, len(public))
    k_priv = min(cfg.k, len(private))
    _check_count(cfg.n_labeled, k_pub)
    rng = seeded_rng(rng)
    start = len(ledger)

    priv_out = forward(params, private.features)
    p = min(cfg.n_components, priv_out.embedding.shape[1])
    basis = dp_pca(priv_out.embedding, p, cfg.eps_dppca, cfg.delta_dppca, rng, ledger, label="nearprivate/dp_pca")
    priv_scores = uncertainty_scores(priv_out.logits, cfg.uncertainty)
    priv_cand = most_uncertain(priv_scores, k_priv)
    pub_out = forward(params, public.features)
    pub_scores = uncertainty_scores(pub_out.logits, cfg.uncertainty)
    candidates = most_uncertain(pub_scores, k_pub)

    s_train = project(priv_out.embedding[priv_cand], basis)
    s_public = project(pub_out.embedding[candidates], basis)
    raw = assign_neighbors(s_train, s_public)
    noisy = laplace_mechanism(raw, cfg.eps_support, rng, ledger, label="nearprivate/support")

    order = np.lexsort((candidates, -noisy))[: cfg.n_labeled]
    chosen = candidates[order]
    return SelectionResult(
        "nearprivate",
        chosen,
        pub_scores[chosen],
        candidates=candidates,
        raw_counts=raw,
        noisy_counts=noisy,
        privacy_spent=(cfg.eps_dppca + cfg.eps_support, cfg.delta_dppca),
        ledger_entries=list(ledger.entries[start:]),
    )


def select(method, params, public, cfg: SelectionConfig, private=None, rng=None, ledger=None) -> SelectionResult:
    """Dispatch to one of the five strategies by name."""
    if method == "random":
        return select_random(len(public), cfg.n_labeled, cfg.seed if rng is None else rng)
    if method in UNCERTAINTY:
        return select_uncertain(params, public, cfg.n_labeled, method)
    if method == "onlypublic":
        return select_onlypublic(params, public, cfg)
    if method == "nearprivate":
        if ledger is None:
            raise ContractError("nearprivate must record its spending in a ledger")
        return select_nearprivate(params, private, public, cfg, cfg.seed if rng is None else rng, ledger)
    raise ParameterError(f"unknown selection method {method!r}")
