"""Ordered subspace clustering and dictionary distillation.

Training never needs hand-marked pattern boundaries. Each training run is
embedded as a block-Hankel matrix, its columns are clustered into the
union of subspaces that generated them, and clusters are mapped to classes
by how long (or when) they occur in the run. A cluster that still mixes
two maneuvers is clustered again.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from numpy.typing import NDArray
from scipy import linalg
from scipy.sparse import csgraph
from sklearn.cluster import KMeans

from .errors import (AmbiguityError, ConfigError, DivergenceError, FormatError,
                     ParameterError, TrainingError)
from .hankel_embedding import Standardizer, TrainingMatrix, embed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OscParams:
    lambda1: float = 0.1
    lambda2: float = 1.0
    rho: float = 10.0
    tol: float = 1e-4
    max_iter: int = 300
    check_every: int = 10       # iterations between stopping-rule evaluations

    def __post_init__(self):
        if not self.lambda1 >= 0:
            raise ParameterError("lambda1 must be >= 0")
        if not self.lambda2 > 0:
            raise ParameterError("lambda2 must be > 0")
        if not (self.rho > 0 and self.tol > 0):
            raise ParameterError("rho and tol must be > 0")
        if self.max_iter < 1 or self.check_every < 1:
            raise ParameterError("max_iter and check_every must be >= 1")


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    Z: NDArray
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: NDArray = field(repr=False)
    raw_objective: NDArray = field(repr=False, default=None)


def build_R(n: int) -> NDArray:
    """``n x (n-1)`` lower-bidiagonal differencing matrix (-1 diagonal, +1 below)."""
    if n < 2:
        raise ParameterError(f"R needs at least 2 columns, got {n}")
    R = np.zeros((n, n - 1))
    j = np.arange(n - 1)
    R[j, j] = -1.0
    R[j + 1, j] = 1.0
    return R


def _times_R(Z: NDArray) -> NDArray:
    return np.diff(Z, axis=1)


def _times_Rt(B: NDArray) -> NDArray:
    out = np.zeros((B.shape[0], B.shape[1] + 1))
    out[:, :-1] -= B
    out[:, 1:] += B
    return out


def osc_objective(X: NDArray, Z: NDArray, lambda1: float, lambda2: float) -> float:
    E = X - X @ Z
    return (0.5 * _sq(E) + lambda1 * np.abs(Z).sum()
            + lambda2 * np.linalg.norm(_times_R(Z), axis=0).sum())


def _sq(A: NDArray) -> float:
    a = A.ravel()
    return float(a @ a)


def _soft(A: NDArray, t: float) -> NDArray:
    return A - np.clip(A, -t, t)


def _column_shrink(A: NDArray, t: float) -> NDArray:
    norms = np.linalg.norm(A, axis=0)
    scale = np.maximum(0.0, 1.0 - t / np.maximum(norms, 1e-300))
    return A * scale


def osc_solve(X, params: OscParams | None = None) -> CoefficientMatrix:
    """Ordered subspace clustering coefficients by ADMM.

    Minimizes ``1/2 ||X - XZ||_F^2 + lambda1 ||Z||_1 + lambda2 ||ZR||_{1,2}``
    with ``diag(Z) = 0``, splitting ``J = Z`` (sparse copy, zero diagonal)
    and ``S = ZR`` (column-shrunk differences).

    ADMM iterates are not monotone in the objective, so the exposed iterate
    is an incumbent: it moves to the new sparse copy ``J`` only when that
    does not increase the objective. ``objective`` traces the incumbent,
    ``raw_objective`` every ``J``; the returned ``Z`` is the final incumbent.

    The Z-update solves ``(X'X + rho I) Z + rho Z RR' = C``. RR' is the path
    graph Laplacian, diagonalized by the orthonormal DCT-II, and X'X has
    rank at most ``m = rows(X)``, so each solve costs O(m N^2).
    """
    if isinstance(X, TrainingMatrix):
        X = X.X
    p = params or OscParams()
    X = np.asarray(X, dtype=float)
    m, N = X.shape
    if N < 3:
        raise ParameterError(f"OSC needs at least 3 columns, got {N}")
    rho, l1, l2 = p.rho, p.lambda1, p.lambda2

    G = X.T @ X
    mu = 2.0 - 2.0 * np.cos(np.pi * np.arange(N) / N)   # eigenvalues of RR'
    q = 1.0 / (rho * (1.0 + mu))                          # Q = (rho (I + RR'))^-1
    a, Ua = np.linalg.eigh(X @ X.T)
    a = np.maximum(a, 0.0)
    denom = 1.0 + a[:, None] * q[None, :]

    def dct_rows(B):
        return sfft.dct(B, type=2, norm="ortho", axis=1, overwrite_x=True)

    def idct_rows(B):
        return sfft.idct(B, type=2, norm="ortho", axis=1, overwrite_x=True)

    # Everything right of the DCT commutes with left products, so the
    # Z-update stays in the transformed domain between one forward and one
    # inverse transform.
    UaX = Ua.T @ X
    XtUa = UaX.T
    J = np.zeros((N, N))
    S = np.zeros((N, N - 1))
    U = np.zeros((N, N))
    V = np.zeros((N, N - 1))
    best, best_f = J, osc_objective(X, J, l1, l2)
    history, raw = [best_f], [best_f]
    converged = False
    r_norm = s_norm = np.inf
    it = 0
    for it in range(1, p.max_iter + 1):
        C = J - U
        SV = S - V
        C[:, :-1] -= SV
        C[:, 1:] += SV
        C *= rho
        C += G
        Zhat = dct_rows(C)
        Zhat *= q
        Bhat = UaX @ Zhat
        Bhat /= denom
        corr = XtUa @ Bhat
        corr *= q
        Zhat -= corr
        Z = idct_rows(Zhat)

        check = it % p.check_every == 0 or it == p.max_iter
        J_old, S_old = J, S
        J = _soft(Z + U, l1 / rho)
        np.fill_diagonal(J, 0.0)
        ZR = _times_R(Z)
        S = _column_shrink(ZR + V, l2 / rho)
        U += Z
        U -= J
        V += ZR
        V -= S

        f = osc_objective(X, J, l1, l2)
        if not np.isfinite(f):
            raise DivergenceError(it)
        raw.append(f)
        if f <= best_f:
            best, best_f = J, f
        history.append(best_f)

        if not check:
            continue
        if not (np.isfinite(U).all() and np.isfinite(V).all()):
            raise DivergenceError(it)
        r_norm = np.sqrt(_sq(Z - J) + _sq(ZR - S))
        s_norm = rho * np.sqrt(_sq(J - J_old) + _sq(_times_Rt(S - S_old)))
        eps_pri = p.tol * max(np.sqrt(_sq(Z) + _sq(ZR)), np.sqrt(_sq(J) + _sq(S)), 1e-12)
        eps_dual = p.tol * max(rho * np.sqrt(_sq(U) + _sq(_times_Rt(V))), 1e-12)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break
    return CoefficientMatrix(best, converged, it, float(r_norm), float(s_norm),
                             np.asarray(history), np.asarray(raw))


def build_affinity(Z: NDArray) -> NDArray:
    """Symmetric nonnegative affinity ``|Z| + |Z'|`` with zero diagonal."""
    if isinstance(Z, CoefficientMatrix):
        Z = Z.Z
    Z = np.asarray(Z, dtype=float)
    if not np.isfinite(Z).all():
        raise ParameterError("coefficient matrix has non-finite entries")
    W = np.abs(Z) + np.abs(Z.T)
    np.fill_diagonal(W, 0.0)
    return W


def _first_appearance(labels: NDArray) -> NDArray:
    """Relabel so cluster ids follow their first occurrence in time."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(order), dtype=int)
    remap[order] = np.arange(len(order))
    return remap[np.searchsorted(np.unique(labels), labels)]


def spectral_cluster(W: NDArray, k: int, seed: int = 0, n_init: int = 20,
                     return_isolated: bool = False):
    """Normalized-cuts labels for the nodes of an affinity graph.

    Labels are renumbered by first appearance along the node order. Nodes
    with zero degree take the label of the nearest connected node in time
    and are reported with a warning.
    """
    W = np.asarray(W, dtype=float)
    N = W.shape[0]
    if k < 2:
        raise ParameterError(f"need at least 2 clusters, got {k}")
    if k > N:
        raise ParameterError(f"{k} clusters requested for {N} nodes")
    if not np.any(W):
        raise ParameterError("affinity graph has no edges")
    if k == N:
        labels = np.arange(N)
        return (labels, np.array([], dtype=int)) if return_isolated else labels

    deg = W.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0)
    live = np.flatnonzero(deg > 0)
    if isolated.size:
        warnings.warn(f"{isolated.size} zero-degree node(s) assigned by temporal neighbor: "
                      f"{isolated.tolist()[:10]}", RuntimeWarning, stacklevel=2)
    Wl = W[np.ix_(live, live)]
    n_comp, _ = csgraph.connected_components(Wl > 0, directed=False)
    if n_comp > k:
        warnings.warn(f"affinity graph has {n_comp} components for {k} clusters",
                      RuntimeWarning, stacklevel=2)
    kk = min(k, len(live))
    d = 1.0 / np.sqrt(deg[live])
    L = np.eye(len(live)) - d[:, None] * Wl * d[None, :]
    L = 0.5 * (L + L.T)
    _, vecs = linalg.eigh(L, subset_by_index=[0, kk - 1])
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    emb = vecs / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=kk, n_init=n_init, random_state=seed).fit(emb)
    labels = np.empty(N, dtype=int)
    labels[live] = km.labels_
    for i in isolated:
        labels[i] = labels[live[np.argmin(np.abs(live - i))]]
    labels = _first_appearance(labels)
    return (labels, isolated) if return_isolated else labels


# --------------------------------------------------------------------------
# schedules and distillation


@dataclass
class ClusterPass:
    """One clustering pass of a training run.

    ``assign`` lists what each cluster becomes, clusters sorted by ``order``:
    ``"duration"`` (longest total duration first) or ``"time"`` (earliest
    sustained appearance first). An entry is a class name, ``None`` to
    discard the cluster, or another ``ClusterPass`` to re-cluster it.
    """

    k: int
    assign: list
    order: str = "duration"

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"a pass needs k >= 2, got {self.k}")
        if len(self.assign) != self.k:
            raise ConfigError(f"pass with k={self.k} has {len(self.assign)} assignments")
        if self.order not in ("duration", "time"):
            raise ConfigError(f"unknown cluster order {self.order!r}")
        self.assign = [ClusterPass.from_dict(a) if isinstance(a, dict) else a
                       for a in self.assign]

    def classes(self) -> set[str]:
        out = set()
        for a in self.assign:
            if isinstance(a, ClusterPass):
                out |= a.classes()
            elif a is not None:
                out.add(a)
        return out

    def to_dict(self) -> dict:
        return {"k": self.k, "order": self.order,
                "assign": [a.to_dict() if isinstance(a, ClusterPass) else a for a in self.assign]}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterPass":
        try:
            return cls(int(d["k"]), list(d["assign"]), d.get("order", "duration"))
        except KeyError as exc:
            raise ConfigError(f"cluster pass missing {exc}") from None


@dataclass(eq=False)
class TrainingRun:
    """Unlabeled feature stream ``(N, c)`` plus its clustering schedule."""

    features: NDArray
    schedule: ClusterPass
    t: NDArray | None = None
    name: str = ""


@dataclass(frozen=True, eq=False)
class LabeledDictionary:
    """Class-blocked unit-norm dictionary ``A = [A_0 | A_1 | ...]``.

    ``blocks`` holds ``(class_id, start, stop)`` column ranges; class ids
    index ``class_names``. ``source`` records ``(run, column)`` of the
    training window behind each atom.
    """

    A: NDArray
    blocks: tuple[tuple[int, int, int], ...]
    class_names: tuple[str, ...]
    channels: tuple[str, ...]
    w: int
    standardizer: Standardizer
    fs: float = 20.0
    feature_mode: str = "imu"
    source: NDArray | None = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        object.__setattr__(self, "A", A)
        cover = np.zeros(A.shape[1], dtype=int)
        for cid, start, stop in self.blocks:
            if stop <= start:
                raise TrainingError(f"class {self.class_names[cid]!r} has no columns")
            cover[start:stop] += 1
        if not np.all(cover == 1):
            raise TrainingError("dictionary blocks do not partition the columns")
        if A.shape[0] != self.w * len(self.channels):
            raise TrainingError("dictionary rows do not match window metadata")
        ids = sorted(b[0] for b in self.blocks)
        if ids != list(range(len(self.class_names))):
            raise TrainingError("every class needs exactly one block")

    @classmethod
    def from_blocks(cls, A: NDArray, sizes: Sequence[int], **meta) -> "LabeledDictionary":
        """Dictionary whose consecutive column groups of ``sizes`` are classes 0, 1, ..."""
        A = np.asarray(A, dtype=float)
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        blocks = tuple((i, int(edges[i]), int(edges[i + 1])) for i in range(len(sizes)))
        meta.setdefault("class_names", tuple(str(i) for i in range(len(sizes))))
        meta.setdefault("channels", ("x",))
        meta.setdefault("w", A.shape[0] // len(meta["channels"]))
        c = len(meta["channels"])
        meta.setdefault("standardizer", Standardizer((0.0,) * c, (1.0,) * c))
        return cls(A, blocks, **meta)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_of_column(self) -> NDArray:
        out = np.empty(self.A.shape[1], dtype=int)
        for cid, start, stop in self.blocks:
            out[start:stop] = cid
        return out

    def block(self, cid: int) -> slice:
        for c, start, stop in self.blocks:
            if c == cid:
                return slice(start, stop)
        raise KeyError(cid)

    def fingerprint(self) -> str:
        return self._fingerprint

    @cached_property
    def _fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.A).tobytes())
        h.update(json.dumps([list(b) for b in self.blocks]).encode())
        return h.hexdigest()


def _runs(mask: NDArray) -> list[tuple[int, int]]:
    """Contiguous ``True`` runs as ``(start, stop)`` pairs."""
    padded = np.concatenate([[False], mask, [False]])
    d = np.diff(padded.astype(int))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def _order_clusters(labels: NDArray, k: int, order: str, fs: float, stride: int) -> list[int]:
    counts = np.bincount(labels, minlength=k)
    if order == "duration":
        ranked = sorted(range(k), key=lambda c: -counts[c])
        for a, b in zip(ranked, ranked[1:]):
            if counts[a] == counts[b]:
                durations = {int(c): counts[c] * stride / fs for c in range(k)}
                raise AmbiguityError(f"clusters tie on duration: {durations} s")
        return ranked
    starts = []
    for c in range(k):
        runs = _runs(labels == c)
        longest = max(stop - start for start, stop in runs)
        starts.append(next(start for start, stop in runs if stop - start >= max(2, longest // 4)))
    return sorted(range(k), key=lambda c: starts[c])


def farthest_point_sample(V: NDArray, n: int) -> NDArray:
    """Indices of up to ``n`` columns of ``V`` spreading out greedily.

    Starts from the column closest to the mean direction, then repeatedly
    adds the column farthest from everything chosen so far.
    """
    N = V.shape[1]
    if n >= N:
        return np.arange(N)
    mean = V.mean(axis=1)
    first = int(np.argmin(np.linalg.norm(V - mean[:, None], axis=0)))
    chosen = [first]
    dmin = np.linalg.norm(V - V[:, [first]], axis=0)
    for _ in range(n - 1):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(V - V[:, [nxt]], axis=0))
    return np.asarray(sorted(chosen))


def _apply_pass(tm: TrainingMatrix, cols: NDArray, cp: ClusterPass, params: OscParams,
                seed: int, fs: float, pools: dict, run_idx: int, trail: str,
                n_init: int = 20) -> None:
    if len(cols) < max(3, cp.k):
        raise TrainingError(f"{trail}: only {len(cols)} columns to split into {cp.k} clusters")
    coef = osc_solve(tm.X[:, cols], params)
    if not coef.converged:
        log.warning("%s: OSC stopped at max_iter=%d (primal %.3g, dual %.3g)",
                    trail, coef.iterations, coef.primal_residual, coef.dual_residual)
    labels = spectral_cluster(build_affinity(coef.Z), cp.k, seed=seed, n_init=n_init)
    ranked = _order_clusters(labels, cp.k, cp.order, fs, tm.stride)
    log.info("%s: cluster sizes %s", trail, np.bincount(labels, minlength=cp.k).tolist())
    for rank, (cluster, target) in enumerate(zip(ranked, cp.assign)):
        members = cols[labels == cluster]
        if target is None:
            continue
        if isinstance(target, ClusterPass):
            _apply_pass(tm, members, target, params, seed, fs, pools, run_idx,
                        f"{trail}/{rank}", n_init)
        else:
            pools.setdefault(target, []).append((run_idx, members))


def distill_dictionary(runs: Sequence[TrainingRun], class_names: Sequence[str],
                       channels: Sequence[str], w: int = 20, params: OscParams | None = None,
                       per_class: int = 30, stride: int = 1, seed: int = 0, fs: float = 20.0,
                       feature_mode: str = "imu", standardizer: Standardizer | None = None,
                       n_init: int = 20) -> LabeledDictionary:
    """Build a class-blocked dictionary from unlabeled training runs.

    Features are standardized per channel over all runs pooled, windowed,
    unit-normalized, then every run is split by its ``ClusterPass``
    schedule. Up to ``per_class`` windows per class are kept by farthest
    point sampling.
    """
    class_names = tuple(class_names)
    params = params or OscParams()
    if not runs:
        raise TrainingError("no training runs")
    scheduled = set().union(*(r.schedule.classes() for r in runs))
    unknown = scheduled - set(class_names)
    if unknown:
        raise ConfigError(f"schedule names unknown classes {sorted(unknown)}")
    if standardizer is None:
        standardizer = Standardizer.fit(np.vstack([r.features for r in runs]))

    matrices = [embed(r.features, channels, standardizer, w, stride, r.t) for r in runs]
    pools: dict[str, list] = {}
    for i, (run, tm) in enumerate(zip(runs, matrices)):
        _apply_pass(tm, np.arange(tm.X.shape[1]), run.schedule, params, seed, fs, pools, i,
                    run.name or f"run{i}", n_init)

    atoms, blocks, source = [], [], []
    start = 0
    for cid, name in enumerate(class_names):
        members = pools.get(name, [])
        if not members or sum(len(m) for _, m in members) == 0:
            raise TrainingError(f"class {name!r} ended up with no training windows")
        src = np.vstack([np.column_stack([np.full(len(m), r), m]) for r, m in members])
        V = np.hstack([matrices[r].X[:, m] for r, m in members])
        keep = farthest_point_sample(V, per_class)
        V = V[:, keep]
        atoms.append(V / np.linalg.norm(V, axis=0))
        source.append(src[keep])
        blocks.append((cid, start, start + V.shape[1]))
        start += V.shape[1]
    return LabeledDictionary(np.hstack(atoms), tuple(blocks), class_names, tuple(channels), w,
                             standardizer, fs, feature_mode, np.vstack(source))


def save_dictionary(d: LabeledDictionary, path, schedule: dict | None = None) -> None:
    """Write the dictionary as ``.npz``; ``schedule`` goes to a JSON sidecar."""
    path = Path(path)
    meta = {
        "format": "hankelwave-dictionary", "version": 1,
        "class_names": list(d.class_names), "channels": list(d.channels), "w": d.w,
        "fs": d.fs, "feature_mode": d.feature_mode, "fingerprint": d.fingerprint(),
    }
    with open(path, "wb") as fh:
        np.savez(fh, A=d.A, blocks=np.asarray(d.blocks, dtype=np.int64).reshape(-1, 3),
                 mean=np.asarray(d.standardizer.mean), std=np.asarray(d.standardizer.std),
                 source=np.asarray(d.source if d.source is not None else np.zeros((0, 2)),
                                   dtype=np.int64),
                 meta=np.array(json.dumps(meta)))
    if schedule is not None:
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps({"dictionary": path.name, "meta": meta,
                                       "schedule": schedule}, indent=2))


def load_dictionary(path) -> LabeledDictionary:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "hankelwave-dictionary":
                raise FormatError(f"{path}: not a dictionary file")
            d = LabeledDictionary(
                z["A"], tuple(tuple(int(v) for v in b) for b in z["blocks"]),
                tuple(meta["class_names"]), tuple(meta["channels"]), int(meta["w"]),
                Standardizer(tuple(z["mean"].tolist()), tuple(z["std"].tolist())),
                float(meta["fs"]), meta["feature_mode"], z["source"])
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: cannot read dictionary ({exc})") from None
    if d.fingerprint() != meta["fingerprint"]:
        raise FormatError(f"{path}: fingerprint mismatch, file corrupted")
    return d
