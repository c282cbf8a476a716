"""Anchored iterative majorization localizer and the shortest-path MDS baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .graph import (
    DEFAULT_FILL_WEIGHT,
    CollinearAnchorsError,
    GraphDisconnectedError,
    NetworkGraph,
    anchors_collinear,
    complete_midrange,
    components,
    is_connected,
    shortest_path_complete,
)

__all__ = [
    "SMACOF",
    "PAPER_LITERAL",
    "MajorizationState",
    "LocalizationResult",
    "LocalizeOptions",
    "MDSEmbedding",
    "SingularSystemError",
    "stress",
    "build_majorization_matrices",
    "anchored_update",
    "localize",
    "classical_mds",
    "procrustes_align",
    "mds_baseline",
    "rmspe",
]

SMACOF = "smacof"
PAPER_LITERAL = "paper-literal"


class SingularSystemError(np.linalg.LinAlgError):
    """The sensor block of the majorization system cannot be inverted."""

    def __init__(self, message: str, sensors=()):
        super().__init__(message)
        self.sensors = list(sensors)


@dataclass
class MajorizationState:
    weights: np.ndarray
    prev_config: np.ndarray
    Z: np.ndarray
    C: np.ndarray
    n_anchors: int
    mode: str = SMACOF

    @property
    def n_sensors(self) -> int:
        return self.Z.shape[0] - self.n_anchors

    def _split(self, mat):
        n = self.n_sensors
        return mat[:n, :n], mat[:n, n:], mat[n:, n:]

    @property
    def Z11(self):
        return self._split(self.Z)[0]

    @property
    def Z12(self):
        return self._split(self.Z)[1]

    @property
    def Z22(self):
        return self._split(self.Z)[2]

    @property
    def C11(self):
        return self._split(self.C)[0]

    @property
    def C12(self):
        return self._split(self.C)[1]

    @property
    def C22(self):
        return self._split(self.C)[2]


@dataclass
class LocalizationResult:
    estimates: np.ndarray
    positions: np.ndarray
    stress_trace: list[float]
    iterations: int
    converged: bool
    rmspe: float = float("nan")
    initial_positions: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class LocalizeOptions:
    mode: str = SMACOF
    max_iters: int = 500
    tol: float = 1e-6
    init: str = "mds"
    fill_weight_ratio: float = DEFAULT_FILL_WEIGHT


@dataclass
class MDSEmbedding:
    coords: np.ndarray
    eigenvalues: np.ndarray
    non_euclidean: bool


def _distances(Y: np.ndarray) -> np.ndarray:
    diff = Y[:, None, :] - Y[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def stress(Y, graph: NetworkGraph) -> float:
    """Weighted squared misfit between range estimates and distances in ``Y``.

    Only pairs with positive weight contribute; each unordered pair counts once.
    """
    Y = np.asarray(Y, dtype=float)
    w = graph.weights
    iu, ju = np.nonzero(np.triu(w > 0, 1))
    d = np.sqrt(((Y[iu] - Y[ju]) ** 2).sum(axis=1))
    return float(np.sum(w[iu, ju] * (graph.ranges[iu, ju] - d) ** 2))


def build_majorization_matrices(graph: NetworkGraph, Y_prev, mode: str = SMACOF) -> MajorizationState:
    """Quadratic majorizer matrices of the stress around ``Y_prev``.

    In ``"smacof"`` mode ``Z`` is the weighted graph Laplacian and ``C`` the
    Guttman matrix (zero row sums, zero contribution from coincident points).
    ``"paper-literal"`` puts the column sums off the diagonal and zeros on it.
    """
    Y_prev = np.asarray(Y_prev, dtype=float)
    w = graph.weights.copy()
    np.fill_diagonal(w, 0.0)
    d = _distances(Y_prev)
    ratio = np.zeros_like(w)
    ok = (w > 0) & (d > 0)
    ratio[ok] = w[ok] * graph.ranges[ok] / d[ok]

    if mode == SMACOF:
        Z = -w
        np.fill_diagonal(Z, w.sum(axis=1))
        C = -ratio
        np.fill_diagonal(C, ratio.sum(axis=1))
    elif mode == PAPER_LITERAL:
        k = w.shape[0]
        Z = np.tile(w.sum(axis=0), (k, 1))
        C = np.tile(ratio.sum(axis=0), (k, 1))
        np.fill_diagonal(Z, 0.0)
        np.fill_diagonal(C, 0.0)
    else:
        raise ValueError(f"unknown majorization mode {mode!r}")
    return MajorizationState(w, Y_prev, Z, C, graph.n_anchors, mode)


def _unanchored_sensors(weights: np.ndarray, n_anchors: int) -> list[int]:
    n = weights.shape[0] - n_anchors
    out = []
    for comp in components(weights > 0):
        if not any(v >= n for v in comp):
            out.extend(v for v in comp if v < n)
    return sorted(out)


def anchored_update(state: MajorizationState, anchor_positions, factor=None) -> np.ndarray:
    """One majorization step with anchors held fixed.

    Solves ``Z11 Y = C11 Y_sensors + C12 Y_anchors - Z12 Y_anchors`` for the
    sensor block.  ``factor`` may carry a Cholesky factorisation of ``Z11``
    from a previous call (the weights do not change between iterations).

    Raises
    ------
    SingularSystemError
        When some sensors have no weighted path to any anchor (smacof mode).
    """
    Y_anchor = np.asarray(anchor_positions, dtype=float)
    n = state.n_sensors
    Y_sensor = state.prev_config[:n]
    rhs = state.C11 @ Y_sensor + state.C12 @ Y_anchor - state.Z12 @ Y_anchor

    if state.mode == PAPER_LITERAL:
        return np.linalg.pinv(state.Z11) @ rhs

    if factor is None:
        try:
            factor = linalg.cho_factor(state.Z11)
        except linalg.LinAlgError:
            bad = _unanchored_sensors(state.weights, state.n_anchors)
            raise SingularSystemError(
                f"sensor block is singular; sensors without a path to an anchor: {bad}", bad
            ) from None
    Y_new = linalg.cho_solve(factor, rhs)
    resid = np.linalg.norm(state.Z11 @ Y_new - rhs)
    if resid > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
        bad = _unanchored_sensors(state.weights, state.n_anchors)
        raise SingularSystemError(f"ill-conditioned sensor block (residual {resid:.3g})", bad)
    return Y_new


def classical_mds(D, dim: int = 2, tol: float = 1e-9) -> MDSEmbedding:
    """Torgerson scaling of a full distance matrix.

    ``non_euclidean`` is set when a negative eigenvalue of the double-centred
    matrix exceeds ``tol`` times the largest one in magnitude; the best rank-
    ``dim`` fit is returned regardless.
    """
    D = np.asarray(D, dtype=float)
    k = D.shape[0]
    J = np.eye(k) - 1.0 / k
    B = -0.5 * J @ (D**2) @ J
    vals, vecs = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = vals[:dim]
    coords = vecs[:, :dim] * np.sqrt(np.maximum(top, 0.0))
    scale = max(abs(vals[0]), 1e-300)
    non_euclidean = bool(vals.min() < -tol * scale)
    return MDSEmbedding(coords, vals, non_euclidean)


def procrustes_align(coords, anchor_truth, anchor_indices, scale: bool = True) -> np.ndarray:
    """Map ``coords`` so the rows at ``anchor_indices`` best match ``anchor_truth``.

    Least-squares similarity transform (rotation or reflection, translation and,
    if ``scale``, a uniform scale) applied to all rows.
    """
    X = np.asarray(coords, dtype=float)
    A = np.asarray(anchor_truth, dtype=float)
    idx = np.asarray(anchor_indices)
    if len(A) < 3 or anchors_collinear(A):
        raise CollinearAnchorsError("alignment needs at least 3 non-collinear anchors")
    src = X[idx]
    mu_s, mu_t = src.mean(axis=0), A.mean(axis=0)
    S, T = src - mu_s, A - mu_t
    U, sv, Vt = np.linalg.svd(S.T @ T)
    R = U @ Vt
    s = sv.sum() / (S**2).sum() if scale else 1.0
    return s * (X - mu_s) @ R + mu_t


def rmspe(estimates, truth) -> float:
    """Root mean squared positioning error over nodes."""
    e = np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt((e**2).sum() / len(e)))


def _check_localizable(graph: NetworkGraph):
    if graph.n_anchors < 3 or anchors_collinear(graph.anchor_positions):
        raise CollinearAnchorsError("localization needs at least 3 non-collinear anchors")
    if graph.n_sensors < 1:
        raise ValueError("graph has no sensors to localize")
    if not is_connected(graph):
        raise GraphDisconnectedError("network is not connected and cannot be localized")


def _initial_config(graph: NetworkGraph, init, rng) -> np.ndarray:
    n, anchors = graph.n_sensors, graph.anchor_positions
    if not isinstance(init, str):
        Y0 = np.array(init, dtype=float)
        if Y0.shape == (n, 2):
            Y0 = np.vstack((Y0, anchors))
        return Y0
    if init == "mds":
        try:
            emb = classical_mds(shortest_path_complete(graph))
            Y0 = procrustes_align(emb.coords, anchors, np.arange(n, graph.n_nodes))
            Y0[n:] = anchors
            return Y0
        except (GraphDisconnectedError, CollinearAnchorsError):
            pass
    elif init != "random":
        raise ValueError(f"unknown init {init!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = anchors.min(axis=0), anchors.max(axis=0)
    return np.vstack((rng.uniform(lo, hi, size=(n, 2)), anchors))


def localize(
    graph: NetworkGraph,
    options: LocalizeOptions = LocalizeOptions(),
    rng: np.random.Generator | None = None,
    init=None,
) -> LocalizationResult:
    """Estimate sensor positions directly in the anchor frame.

    Missing ranges are filled by `complete_midrange`, the configuration is
    initialised from shortest-path MDS aligned on the anchors, then anchored
    majorization steps run until the relative stress decrease drops below
    ``options.tol`` or ``options.max_iters`` is reached.  Anchors never move.
    """
    _check_localizable(graph)
    n = graph.n_sensors
    anchors = graph.anchor_positions
    full = complete_midrange(graph, options.fill_weight_ratio)

    Y = _initial_config(graph, options.init if init is None else init, rng)
    Y0 = Y.copy()
    Y[n:] = anchors
    s_prev = stress(Y, full)
    trace = [s_prev]
    converged = s_prev == 0.0
    factor = None
    it = 0
    while not converged and it < options.max_iters:
        state = build_majorization_matrices(full, Y, options.mode)
        if options.mode == SMACOF and factor is None:
            try:
                factor = linalg.cho_factor(state.Z11)
            except linalg.LinAlgError:
                bad = _unanchored_sensors(state.weights, state.n_anchors)
                raise SingularSystemError(f"sensor block is singular: {bad}", bad) from None
        Y = np.vstack((anchored_update(state, anchors, factor), anchors))
        it += 1
        s = stress(Y, full)
        trace.append(s)
        if s == 0.0 or (s_prev - s) <= options.tol * s_prev:
            converged = s <= s_prev or s == 0.0
            break
        s_prev = s

    est = Y[:n].copy()
    out = np.vstack((est, anchors))
    out[n:] = anchors
    err = rmspe(est, graph.true_positions[:n]) if graph.true_positions is not None else float("nan")
    return LocalizationResult(est, out, trace, it, bool(converged), err, Y0)


def mds_baseline(graph: NetworkGraph) -> LocalizationResult:
    """Shortest-path completion, classical MDS, then similarity alignment on the anchors."""
    _check_localizable(graph)
    n = graph.n_sensors
    emb = classical_mds(shortest_path_complete(graph))
    Y = procrustes_align(emb.coords, graph.anchor_positions, np.arange(n, graph.n_nodes))
    est = Y[:n].copy()
    err = rmspe(est, graph.true_positions[:n]) if graph.true_positions is not None else float("nan")
    return LocalizationResult(est, Y, [], 0, True, err)
