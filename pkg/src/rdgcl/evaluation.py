"""Top-k ranking metrics, diversity, robustness analyses and spectral diagnostics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .graph import InteractionSet, SparseOperator, spmm
from .model import RDGConfig, euler_integrate

log = logging.getLogger(__name__)


@dataclass
class RankedLists:
    """Top-k item lists per user. ``items[u]`` may be shorter than k when few candidates remain."""

    k: int
    items: list[np.ndarray]

    def at(self, k: int) -> list[np.ndarray]:
        if k > self.k:
            raise ValueError(f"lists were ranked to depth {self.k}, cannot evaluate @{k}")
        return [lst[:k] for lst in self.items]


def _user_sets(test: InteractionSet) -> list[np.ndarray]:
    return test.user_items


def rank_all(final: np.ndarray, train: InteractionSet, k: int, chunk: int = 1024) -> RankedLists:
    """Score every (user, item) by inner product, mask train items, keep the top k.

    Ties resolve to the lower item index.
    """
    nu, ni = train.num_users, train.num_items
    user_emb = final[:nu]
    item_emb = final[nu:nu + ni]
    lists: list[np.ndarray] = []
    deg = train.user_degree
    for start in range(0, nu, chunk):
        stop = min(start + chunk, nu)
        scores = user_emb[start:stop] @ item_emb.T
        sel = (train.users >= start) & (train.users < stop)
        scores[train.users[sel] - start, train.items[sel]] = -np.inf
        depth = min(k, ni)
        order = np.argsort(-scores, axis=1, kind="stable")[:, :depth]
        for row, u in enumerate(range(start, stop)):
            lists.append(order[row, :min(k, ni - deg[u])].copy())
    return RankedLists(k, lists)


def recall_at_k(lists: RankedLists, test: InteractionSet, k: int) -> float:
    per_user = []
    for rec, rel in zip(lists.at(k), _user_sets(test)):
        if rel.size:
            per_user.append(np.isin(rec, rel).sum() / rel.size)
    return float(np.mean(per_user)) if per_user else 0.0


def ndcg_at_k(lists: RankedLists, test: InteractionSet, k: int) -> float:
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    per_user = []
    for rec, rel in zip(lists.at(k), _user_sets(test)):
        if rel.size:
            hits = np.isin(rec, rel)
            dcg = float(np.sum(discounts[:rec.size][hits]))
            idcg = float(np.sum(discounts[:min(rel.size, k)]))
            per_user.append(dcg / idcg)
    return float(np.mean(per_user)) if per_user else 0.0


def coverage_at_k(lists: RankedLists, num_items: int, k: int) -> float:
    if num_items <= 0:
        raise ValueError("empty catalog")
    rec = lists.at(k)
    seen = np.unique(np.concatenate(rec)) if rec else np.empty(0)
    return seen.size / num_items


def novelty_at_k(lists: RankedLists, popularity: np.ndarray, num_users: int, k: int) -> float:
    """Mean normalized self-information -log2(pop/|U|)/log2|U| over recommended slots."""
    if num_users < 2:
        raise ValueError("novelty needs at least two users")
    rec = [r for r in lists.at(k) if r.size]
    if not rec:
        return 0.0
    pop = np.asarray(popularity, dtype=float)[np.concatenate(rec)]
    with np.errstate(divide="ignore"):
        info = -np.log2(pop / num_users) / np.log2(num_users)
    info[pop == 0] = 1.0
    return float(np.mean(np.minimum(info, 1.0)))


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a <= 0 or b <= 0 else 2.0 * a * b / (a + b)


def harmonic_means(recall: float, coverage: float, novelty: float) -> tuple[float, float]:
    return harmonic_mean(recall, coverage), harmonic_mean(recall, novelty)


def decomposed_recall(lists: RankedLists, test: InteractionSet, groups: np.ndarray, k: int) -> np.ndarray:
    """Per item-group share of recall: |rec^(g) ∩ test| / |test|, averaged over users."""
    groups = np.asarray(groups)
    n_groups = int(groups.max()) + 1 if groups.size else 0
    totals = np.zeros(n_groups)
    n_users = 0
    for rec, rel in zip(lists.at(k), _user_sets(test)):
        if rel.size:
            n_users += 1
            hits = rec[np.isin(rec, rel)]
            totals += np.bincount(groups[hits], minlength=n_groups) / rel.size
    return totals / n_users if n_users else totals


def item_popularity_groups(train: InteractionSet, n_groups: int = 3) -> np.ndarray:
    """Equal-count item groups by train degree, least popular first; ties by index."""
    order = np.lexsort((np.arange(train.num_items), train.popularity))
    groups = np.empty(train.num_items, dtype=np.int64)
    for g, chunk in enumerate(np.array_split(order, n_groups)):
        groups[chunk] = g
    return groups


def user_sparsity_groups(train: InteractionSet, cuts: Sequence[float] = (0.80, 0.95)) -> np.ndarray:
    """0 = bottom 80% of users by degree, 1 = 80-95%, 2 = top 5%; ties by index."""
    n = train.num_users
    if n < 3:
        raise ValueError("need at least three users for sparsity groups")
    order = np.lexsort((np.arange(n), train.user_degree))
    bounds = [0] + [int(round(c * n)) for c in cuts] + [n]
    groups = np.empty(n, dtype=np.int64)
    for g in range(len(bounds) - 1):
        groups[order[bounds[g]:bounds[g + 1]]] = g
    return groups


def group_recall(lists: RankedLists, test: InteractionSet, user_groups: np.ndarray, k: int) -> list[float]:
    out = []
    rec_k = lists.at(k)
    sets = _user_sets(test)
    for g in range(int(user_groups.max()) + 1):
        vals = [np.isin(rec_k[u], sets[u]).sum() / sets[u].size
                for u in np.flatnonzero(user_groups == g) if sets[u].size]
        out.append(float(np.mean(vals)) if vals else 0.0)
    return out


def inject_noise(train: InteractionSet, ratio: float, rng: np.random.Generator,
                 max_rounds: int = 100) -> InteractionSet:
    """Add floor(ratio * |train|) uniformly random unobserved pairs."""
    if ratio == 0:
        return train
    if not 0 < ratio <= 0.1:
        raise ValueError(f"noise ratio must lie in (0, 0.1], got {ratio}")
    # the epsilon keeps e.g. 0.003 * 1000 from flooring to 2
    n_new = int(math.floor(ratio * len(train) + 1e-9))
    if n_new == 0:
        return train
    free = train.num_users * train.num_items - len(train)
    if n_new > free:
        raise ValueError(f"cannot place {n_new} noise pairs: only {free} unobserved pairs")
    chosen: dict[int, None] = {}
    for _ in range(max_rounds):
        need = n_new - len(chosen)
        if need == 0:
            break
        u = rng.integers(0, train.num_users, size=2 * need)
        v = rng.integers(0, train.num_items, size=2 * need)
        ok = ~train.contains(u, v)
        for code in (u[ok] * train.num_items + v[ok]):
            if len(chosen) == n_new:
                break
            chosen.setdefault(int(code))
    if len(chosen) < n_new:
        raise ValueError(f"placed only {len(chosen)} of {n_new} noise pairs after {max_rounds} rounds")
    codes = np.fromiter(chosen, dtype=np.int64)
    return train.with_pairs(codes // train.num_items, codes % train.num_items)


def dirichlet_energy(e: np.ndarray, lap: SparseOperator) -> float:
    """trace(EᵀL̃E) / N."""
    return float(np.sum(e * spmm(lap, e)) / e.shape[0])


EFFECT_THRESHOLDS = ((0.5, "medium"), (0.2, "small"))


def cohens_d(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    pooled = math.sqrt(((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2))
    diff = float(a.mean() - b.mean())
    if pooled == 0:
        if diff == 0:
            return 0.0
        raise ZeroDivisionError("zero pooled standard deviation")
    return diff / pooled


def effect_label(d: float) -> str:
    for bound, name in EFFECT_THRESHOLDS:
        if abs(d) >= bound:
            return name
    return "negligible"


def delta_response(gamma):
    """Gain of the 2γ - γ² filter over the plain γ filter: γ(1 - γ)."""
    gamma = np.asarray(gamma, dtype=float)
    return gamma * (1.0 - gamma)


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    max_filter_error: float
    max_orthonormality_error: float
    eigenvalues_in_range: bool
    delta_positive_on_open_interval: bool
    delta_peak: float
    delta_at_endpoints: tuple[float, float]
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (self.eigenvalues_in_range and self.delta_positive_on_open_interval
                and self.max_filter_error < self.tol
                and abs(self.delta_peak - 0.25) <= 1e-12
                and self.delta_at_endpoints == (0.0, 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = self.eigenvalues.tolist()
        d["passed"] = self.passed
        return d


def spectral_check(adj: SparseOperator, lap: SparseOperator | None = None, tol: float = 1e-8) -> SpectralReport:
    """Verify that one unit Euler step with α=1 scales each eigenvector of Ã by 2γ - γ²."""
    if adj.dim > 256:
        raise ValueError("spectral_check is limited to N <= 256")
    if lap is None:
        from .graph import build_laplacian
        lap = build_laplacian(adj)
    try:
        gamma, vecs = np.linalg.eigh(adj.to_dense())
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    cfg = RDGConfig(alpha=1.0, terminal_time=1.0, steps=1, dim=adj.dim)
    out = euler_integrate(cfg, lap, adj, vecs).final
    filter_err = float(np.max(np.abs(out - vecs * (2 * gamma - gamma ** 2))))
    ortho_err = float(np.max(np.abs(vecs.T @ vecs - np.eye(adj.dim))))
    in_range = bool(np.all(gamma > -1 - 1e-10) and np.all(gamma <= 1 + 1e-10))
    inner = gamma[(gamma > 0) & (gamma < 1)]
    grid = np.linspace(0, 1, 1001)[1:-1]
    positive = bool(np.all(delta_response(inner) > 0) and np.all(delta_response(grid) > 0))
    return SpectralReport(
        eigenvalues=gamma,
        max_filter_error=filter_err,
        max_orthonormality_error=ortho_err,
        eigenvalues_in_range=in_range,
        delta_positive_on_open_interval=positive,
        delta_peak=float(delta_response(0.5)),
        delta_at_endpoints=(float(delta_response(0.0)), float(delta_response(1.0))),
        tol=tol,
    )


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    coverage: dict[int, float] = field(default_factory=dict)
    novelty: dict[int, float] = field(default_factory=dict)
    h_rc: dict[int, float] = field(default_factory=dict)
    h_rn: dict[int, float] = field(default_factory=dict)
    item_group_recall: dict[int, list[float]] = field(default_factory=dict)
    user_group_recall: dict[int, list[float]] = field(default_factory=dict)
    dirichlet_energy: list[float] = field(default_factory=list)

    def flat(self) -> dict[str, float]:
        """Metric name -> value, e.g. ``recall@20``, ``item_group0_recall@20``."""
        out: dict[str, float] = {}
        for k in self.ks:
            for name in ("recall", "ndcg", "coverage", "novelty", "h_rc", "h_rn"):
                out[f"{name}@{k}"] = getattr(self, name)[k]
            for g, v in enumerate(self.item_group_recall.get(k, [])):
                out[f"item_group{g}_recall@{k}"] = v
            for g, v in enumerate(self.user_group_recall.get(k, [])):
                out[f"user_group{g}_recall@{k}"] = v
        for i, v in enumerate(self.dirichlet_energy):
            out[f"dirichlet_energy_t{i}"] = v
        return out

    def to_dict(self) -> dict:
        def keyed(d):
            return {str(k): v for k, v in d.items()}
        return {
            "ks": list(self.ks),
            "recall": keyed(self.recall),
            "ndcg": keyed(self.ndcg),
            "coverage": keyed(self.coverage),
            "novelty": keyed(self.novelty),
            "h_rc": keyed(self.h_rc),
            "h_rn": keyed(self.h_rn),
            "item_group_recall": keyed(self.item_group_recall),
            "user_group_recall": keyed(self.user_group_recall),
            "dirichlet_energy": list(self.dirichlet_energy),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(final: np.ndarray, train: InteractionSet, test: InteractionSet, ks: Sequence[int] = (20, 40),
             energy_series: Sequence[float] = ()) -> MetricsReport:
    ks = tuple(sorted(set(int(k) for k in ks)))
    lists = rank_all(final, train, max(ks))
    item_groups = item_popularity_groups(train)
    user_groups = user_sparsity_groups(train) if train.num_users >= 3 else None
    report = MetricsReport(ks=ks, dirichlet_energy=[float(x) for x in energy_series])
    for k in ks:
        r = recall_at_k(lists, test, k)
        report.recall[k] = r
        report.ndcg[k] = ndcg_at_k(lists, test, k)
        report.coverage[k] = coverage_at_k(lists, train.num_items, k)
        report.novelty[k] = novelty_at_k(lists, train.popularity, train.num_users, k)
        report.h_rc[k], report.h_rn[k] = harmonic_means(r, report.coverage[k], report.novelty[k])
        report.item_group_recall[k] = decomposed_recall(lists, test, item_groups, k).tolist()
        if user_groups is not None:
            report.user_group_recall[k] = group_recall(lists, test, user_groups, k)
    return report
