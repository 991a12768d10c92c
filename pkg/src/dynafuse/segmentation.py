"""Box-seeded foreground extraction by iterated graph cuts (GrabCut).

The binary labeling ``alpha`` (1 = foreground) of an RGB image minimizes a
Gibbs energy ``E = U + V``:

* Data term ``U``: each class (background / foreground) carries a
  ``K``-component full-covariance Gaussian mixture over RGB in [0, 1];
  a pixel assigned to mixture component ``k`` of its class costs
  ``D = -log pi_k + 0.5 log det Sigma_k + 0.5 (z - mu_k)^T Sigma_k^-1 (z - mu_k)``.
* Smoothness term ``V``: over 8-connected neighbor pairs with differing
  labels, ``gamma * dis(m, n)^-1 * exp(-beta * ||z_m - z_n||^2)`` with
  ``dis`` the pixel distance (1 or sqrt(2)) and ``beta`` set from the mean
  squared neighbor color difference of the image.

Minimization alternates component assignment, mixture refitting, and an
exact min-cut over the Unknown region of the trimap; the energy trace is
non-increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .maxflow import max_flow

__all__ = [
    "DEFINITE_BG",
    "DEFINITE_FG",
    "UNKNOWN",
    "BIG_COST",
    "InvalidBoxError",
    "DegenerateTrimapError",
    "GmmModel",
    "FlowGraph",
    "GrabcutResult",
    "init_trimap",
    "apply_strokes",
    "strokes_from_image",
    "compute_beta",
    "fit_gmm",
    "assign_components",
    "data_term",
    "smoothness_term",
    "total_energy",
    "build_graph",
    "min_cut",
    "grabcut",
    "dilate_mask",
]

# Trimap labels.
DEFINITE_BG = 0
DEFINITE_FG = 1
UNKNOWN = 2

#: Data cost charged for components with zero weight, so assignment and the
#: cut never select them while all arithmetic stays finite.  Far above any
#: legitimate cost (the covariance floor 1e-8 caps the Mahalanobis term
#: around 1e8-ish) and far below float64 overflow even summed over an image.
BIG_COST = 1e12

_LUMA = np.array([0.299, 0.587, 0.114])


class InvalidBoxError(ValueError):
    """A seed box with no interior pixels after clamping to the image."""


class DegenerateTrimapError(ValueError):
    """A trimap whose implied foreground or background class is empty."""


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Per-class Gaussian mixtures: index [class (0=bg, 1=fg), component]."""

    pi: np.ndarray  # (2, K)
    mu: np.ndarray  # (2, K, 3)
    cov: np.ndarray  # (2, K, 3, 3)
    inv_cov: np.ndarray  # (2, K, 3, 3)
    log_det: np.ndarray  # (2, K)

    @property
    def n_components(self) -> int:
        return self.pi.shape[1]


@dataclass(frozen=True, eq=False)
class FlowGraph:
    """An s-t graph whose minimum cut minimizes E over the Unknown pixels.

    Pixel ``(y, x)`` is node ``y * W + x``; ``source`` (foreground terminal)
    and ``sink`` (background terminal) follow.  Edges are stored as parallel
    arrays with both direction capacities; all capacities are >= 0, and
    hard trimap constraints use the ``large`` capacity, strictly greater
    than the sum of every finite capacity in the graph.
    """

    shape: tuple[int, int]
    n_nodes: int
    source: int
    sink: int
    edge_u: np.ndarray
    edge_v: np.ndarray
    cap_uv: np.ndarray
    cap_vu: np.ndarray
    large: float


@dataclass
class GrabcutResult:
    alpha: np.ndarray  # (H, W) uint8, 1 = foreground
    energies: list[float] = field(default_factory=list)
    converged: bool = False
    collapsed: bool = False  # a class emptied mid-run; alpha is best effort
    iterations: int = 0


def init_trimap(bbox: tuple[float, float, float, float], width: int, height: int) -> np.ndarray:
    """All-DefiniteBackground trimap with Unknown inside the (clamped) box."""
    x, y, w, h = bbox
    x0 = max(int(math.floor(x)), 0)
    y0 = max(int(math.floor(y)), 0)
    x1 = min(int(math.ceil(x + w)), width)
    y1 = min(int(math.ceil(y + h)), height)
    if x1 <= x0 or y1 <= y0:
        raise InvalidBoxError(f"box {bbox} has no interior pixels in a {width}x{height} image")
    trimap = np.full((height, width), DEFINITE_BG, dtype=np.uint8)
    trimap[y0:y1, x0:x1] = UNKNOWN
    return trimap


def apply_strokes(trimap: np.ndarray, strokes) -> np.ndarray:
    """Apply ``(mask, label)`` overrides in order (later strokes win)."""
    out = trimap.copy()
    for mask, label in strokes:
        if label not in (DEFINITE_BG, DEFINITE_FG, UNKNOWN):
            raise ValueError(f"invalid stroke label {label}")
        out[np.asarray(mask, dtype=bool)] = label
    return out


def strokes_from_image(img: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """Decode a stroke image: 255 = force-foreground, 0 = force-background,
    anything else untouched."""
    img = np.asarray(img)
    return [(img == 255, DEFINITE_FG), (img == 0, DEFINITE_BG)]


def _as_rgb01(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return np.asarray(img, dtype=np.float64)


# The four forward shifts that enumerate every unordered 8-connected pair
# exactly once: right, down, down-right, down-left.  (dy, dx, distance)
_SHIFTS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0)))


def _pair_slices(shape, dy, dx):
    h, w = shape
    ya = slice(0, h - dy)
    yb = slice(dy, h)
    if dx >= 0:
        xa, xb = slice(0, w - dx), slice(dx, w)
    else:
        xa, xb = slice(-dx, w), slice(0, w + dx)
    return (ya, xa), (yb, xb)


def compute_beta(img: np.ndarray) -> float:
    """``beta = 1 / (2 <||z_m - z_n||^2>)`` over 8-connected pairs; 0 for a
    constant image."""
    img01 = _as_rgb01(img)
    total = 0.0
    count = 0
    for dy, dx, _ in _SHIFTS:
        (sa, sb) = _pair_slices(img01.shape[:2], dy, dx)
        d = img01[sa] - img01[sb]
        total += float(np.sum(d * d))
        count += d.shape[0] * d.shape[1]
    if count == 0 or total == 0.0:
        return 0.0
    return 1.0 / (2.0 * total / count)


def _luminance(img01: np.ndarray) -> np.ndarray:
    return img01 @ _LUMA


def _quantile_components(values: np.ndarray, n_components: int) -> np.ndarray:
    """Split indices into ``n_components`` rank bands of ``values`` (stable)."""
    order = np.argsort(values, kind="stable")
    k = np.empty(len(values), dtype=np.int32)
    for c, chunk in enumerate(np.array_split(order, n_components)):
        k[chunk] = c
    return k


def _init_components(img01: np.ndarray, alpha: np.ndarray, n_components: int) -> np.ndarray:
    """First-round component map: per class, quantile bands of luminance."""
    lum = _luminance(img01).ravel()
    a = alpha.ravel()
    k = np.zeros(a.shape, dtype=np.int32)
    for cls in (0, 1):
        sel = np.flatnonzero(a == cls)
        if len(sel):
            k[sel] = _quantile_components(lum[sel], n_components)
    return k.reshape(alpha.shape)


def default_reg_eps(img: np.ndarray) -> float:
    """Covariance regularizer: ``max(1e-6 * mean channel variance, 1e-8)``."""
    img01 = _as_rgb01(img)
    return max(1e-6 * float(np.mean(np.var(img01.reshape(-1, 3), axis=0))), 1e-8)


def fit_gmm(
    img: np.ndarray,
    alpha: np.ndarray,
    k: np.ndarray,
    n_components: int = 5,
    reg_eps: float | None = None,
) -> GmmModel:
    """Maximum-likelihood mixtures per (class, component) group.

    ``pi`` = group size / class size, ``mu`` = member mean, ``Sigma`` =
    member covariance (MLE, divided by N) plus ``reg_eps * I``.  Empty
    groups get ``pi = 0`` and are skipped by assignment; an empty *class*
    raises :class:`DegenerateTrimapError`.
    """
    img01 = _as_rgb01(img)
    if reg_eps is None:
        reg_eps = default_reg_eps(img01)
    z = img01.reshape(-1, 3)
    a = np.asarray(alpha).ravel()
    kk = np.asarray(k).ravel()
    K = n_components
    pi = np.zeros((2, K))
    mu = np.zeros((2, K, 3))
    cov = np.tile(np.eye(3), (2, K, 1, 1))
    inv_cov = np.tile(np.eye(3), (2, K, 1, 1))
    log_det = np.zeros((2, K))
    for cls in (0, 1):
        in_cls = a == cls
        n_cls = int(in_cls.sum())
        if n_cls == 0:
            name = "foreground" if cls else "background"
            raise DegenerateTrimapError(f"trimap implies an empty {name} class")
        for c in range(K):
            grp = in_cls & (kk == c)
            n = int(grp.sum())
            if n == 0:
                continue
            zc = z[grp]
            m = zc.mean(axis=0)
            d = zc - m
            S = d.T @ d / n + reg_eps * np.eye(3)
            pi[cls, c] = n / n_cls
            mu[cls, c] = m
            cov[cls, c] = S
            inv_cov[cls, c] = np.linalg.inv(S)
            sign, ld = np.linalg.slogdet(S)
            if sign <= 0:
                raise np.linalg.LinAlgError("regularized covariance not positive definite")
            log_det[cls, c] = ld
    return GmmModel(pi, mu, cov, inv_cov, log_det)


def _component_costs(z: np.ndarray, gmm: GmmModel, cls: int) -> np.ndarray:
    """D(cls, c, z) for all components: shape (K, N).  pi=0 -> BIG_COST."""
    K = gmm.n_components
    out = np.empty((K, z.shape[0]))
    for c in range(K):
        p = gmm.pi[cls, c]
        if p == 0.0:
            out[c] = BIG_COST
            continue
        d = z - gmm.mu[cls, c]
        maha = np.einsum("ni,ij,nj->n", d, gmm.inv_cov[cls, c], d)
        out[c] = -math.log(p) + 0.5 * gmm.log_det[cls, c] + 0.5 * maha
    return out


def assign_components(img: np.ndarray, alpha: np.ndarray, gmm: GmmModel) -> np.ndarray:
    """Per pixel, the cost-minimizing component of its own class (ties ->
    lowest index)."""
    img01 = _as_rgb01(img)
    z = img01.reshape(-1, 3)
    a = np.asarray(alpha).ravel()
    k = np.zeros(a.shape, dtype=np.int32)
    for cls in (0, 1):
        sel = np.flatnonzero(a == cls)
        if len(sel):
            costs = _component_costs(z[sel], gmm, cls)
            k[sel] = np.argmin(costs, axis=0).astype(np.int32)
    return k.reshape(np.asarray(alpha).shape)


def data_term(z, cls: int, k: int, gmm: GmmModel) -> float:
    """D for a single RGB value ``z`` (in [0, 1]) under component ``k`` of
    class ``cls``."""
    p = gmm.pi[cls, k]
    if p == 0.0:
        return BIG_COST
    d = np.asarray(z, dtype=np.float64) - gmm.mu[cls, k]
    maha = float(d @ gmm.inv_cov[cls, k] @ d)
    return -math.log(p) + 0.5 * float(gmm.log_det[cls, k]) + 0.5 * maha


def smoothness_term(
    img: np.ndarray, alpha: np.ndarray, gamma: float = 50.0, beta: float | None = None
) -> float:
    """V: sum over 8-connected pairs with differing labels."""
    img01 = _as_rgb01(img)
    if beta is None:
        beta = compute_beta(img01)
    a = np.asarray(alpha)
    total = 0.0
    for dy, dx, dis in _SHIFTS:
        sa, sb = _pair_slices(img01.shape[:2], dy, dx)
        diff = a[sa] != a[sb]
        if not diff.any():
            continue
        d = img01[sa] - img01[sb]
        w = (gamma / dis) * np.exp(-beta * np.sum(d * d, axis=2))
        total += float(np.sum(w[diff]))
    return total


def _data_costs_at(z: np.ndarray, gmm: GmmModel, cls: int, k_flat: np.ndarray) -> np.ndarray:
    """D(cls, k_n, z_n) for every pixel, vectorized over the component map."""
    costs = _component_costs(z, gmm, cls)
    return costs[k_flat, np.arange(z.shape[0])]


def total_energy(
    img: np.ndarray,
    alpha: np.ndarray,
    k: np.ndarray,
    gmm: GmmModel,
    gamma: float = 50.0,
    beta: float | None = None,
) -> float:
    """E(alpha, k, theta) = U + V."""
    img01 = _as_rgb01(img)
    if beta is None:
        beta = compute_beta(img01)
    z = img01.reshape(-1, 3)
    a = np.asarray(alpha).ravel()
    kf = np.asarray(k).ravel()
    U = 0.0
    for cls in (0, 1):
        sel = np.flatnonzero(a == cls)
        if len(sel):
            U += float(np.sum(_data_costs_at(z[sel], gmm, cls, kf[sel])))
    return U + smoothness_term(img01, alpha, gamma, beta)


def build_graph(
    img: np.ndarray,
    trimap: np.ndarray,
    k: np.ndarray,
    gmm: GmmModel,
    gamma: float = 50.0,
    beta: float | None = None,
) -> FlowGraph:
    """Reduce E(alpha | k, theta) to an s-t min-cut problem.

    Source side = foreground.  For an Unknown pixel ``n`` the terminal
    capacities are ``cap(s->n) = D(bg, k_n) - m_n`` and ``cap(n->t) =
    D(fg, k_n) - m_n`` with ``m_n = min`` of the two: a cut pays the data
    cost of the label it assigns, shifted per pixel into the non-negative
    range (a per-pixel constant on both terminals moves every labeling's
    cut value equally, so the argmin is untouched).  Trimap-clamped pixels
    get ``large`` on the label-preserving terminal.  Neighbor edges carry
    the symmetric smoothness weight.
    """
    img01 = _as_rgb01(img)
    if beta is None:
        beta = compute_beta(img01)
    h, w = img01.shape[:2]
    if trimap.shape != (h, w):
        raise ValueError(f"trimap shape {trimap.shape} != image {h, w}")
    n_pix = h * w
    source = n_pix
    sink = n_pix + 1
    idx = np.arange(n_pix, dtype=np.int64).reshape(h, w)

    us, vs, cuv, cvu = [], [], [], []
    # Pairwise (symmetric) edges.
    for dy, dx, dis in _SHIFTS:
        sa, sb = _pair_slices((h, w), dy, dx)
        d = img01[sa] - img01[sb]
        wgt = (gamma / dis) * np.exp(-beta * np.sum(d * d, axis=2))
        us.append(idx[sa].ravel())
        vs.append(idx[sb].ravel())
        wfl = wgt.ravel()
        cuv.append(wfl)
        cvu.append(wfl)

    tri = np.asarray(trimap).ravel()
    z = img01.reshape(-1, 3)
    kf = np.asarray(k).ravel()
    unknown = np.flatnonzero(tri == UNKNOWN)
    if len(unknown):
        d_bg = _data_costs_at(z[unknown], gmm, 0, kf[unknown])
        d_fg = _data_costs_at(z[unknown], gmm, 1, kf[unknown])
        shift = np.minimum(d_bg, d_fg)
        us.append(np.full(len(unknown), source, dtype=np.int64))
        vs.append(unknown)
        cuv.append(d_bg - shift)
        cvu.append(np.zeros(len(unknown)))
        us.append(unknown)
        vs.append(np.full(len(unknown), sink, dtype=np.int64))
        cuv.append(d_fg - shift)
        cvu.append(np.zeros(len(unknown)))

    finite_sum = float(sum(float(np.sum(c)) for c in cuv))
    large = finite_sum + 1.0

    for cls, terminal_first in ((DEFINITE_FG, True), (DEFINITE_BG, False)):
        nodes = np.flatnonzero(tri == cls)
        if not len(nodes):
            continue
        term = np.full(len(nodes), source if terminal_first else sink, dtype=np.int64)
        caps = np.full(len(nodes), large)
        zeros = np.zeros(len(nodes))
        if terminal_first:  # source -> node keeps the pixel foreground
            us.append(term)
            vs.append(nodes)
        else:  # node -> sink keeps the pixel background
            us.append(nodes)
            vs.append(term)
        cuv.append(caps)
        cvu.append(zeros)

    return FlowGraph(
        shape=(h, w),
        n_nodes=n_pix + 2,
        source=source,
        sink=sink,
        edge_u=np.concatenate(us),
        edge_v=np.concatenate(vs),
        cap_uv=np.concatenate(cuv),
        cap_vu=np.concatenate(cvu),
        large=large,
    )


def min_cut(graph: FlowGraph) -> np.ndarray:
    """Globally optimal labeling for the graph's energy: source-reachable
    pixels (in the residual network at max flow) are foreground."""
    _, side = max_flow(
        graph.n_nodes,
        graph.edge_u,
        graph.edge_v,
        graph.cap_uv,
        graph.cap_vu,
        graph.source,
        graph.sink,
    )
    h, w = graph.shape
    return side[: h * w].reshape(h, w).astype(np.uint8)


def grabcut(
    img: np.ndarray,
    trimap: np.ndarray,
    n_components: int = 5,
    gamma: float = 50.0,
    max_iters: int = 10,
    tol: float = 1e-4,
) -> GrabcutResult:
    """Iterated graph-cut segmentation seeded by a trimap.

    Each round: (re)assign mixture components, refit the mixtures, solve
    one exact min-cut, and record ``E(alpha, k, theta)``.  Every step
    minimizes E over one block of variables, so the recorded trace is
    non-increasing; iteration stops when the relative decrease falls below
    ``tol`` or after ``max_iters`` rounds.
    """
    img01 = _as_rgb01(img)
    trimap = np.asarray(trimap)
    if not np.isin(trimap, (DEFINITE_BG, DEFINITE_FG, UNKNOWN)).all():
        raise ValueError("trimap contains labels other than {0, 1, 2}")
    alpha = np.where(trimap == DEFINITE_BG, 0, 1).astype(np.uint8)
    result = GrabcutResult(alpha=alpha)
    if max_iters == 0:
        return result
    if not (alpha == 0).any() or not (alpha == 1).any():
        name = "foreground" if not (alpha == 1).any() else "background"
        raise DegenerateTrimapError(f"trimap implies an empty {name} class")
    beta = compute_beta(img01)
    reg_eps = default_reg_eps(img01)
    k = _init_components(img01, alpha, n_components)
    prev_energy = None
    for it in range(max_iters):
        if it > 0:
            k = assign_components(img01, alpha, gmm)
        gmm = fit_gmm(img01, alpha, k, n_components, reg_eps)
        graph = build_graph(img01, trimap, k, gmm, gamma, beta)
        alpha_new = min_cut(graph)
        # The hard constraints always hold at the optimum; re-stamping them
        # keeps the guarantee explicit.
        alpha_new[trimap == DEFINITE_BG] = 0
        alpha_new[trimap == DEFINITE_FG] = 1
        energy = total_energy(img01, alpha_new, k, gmm, gamma, beta)
        result.energies.append(energy)
        result.alpha = alpha_new
        result.iterations = it + 1
        if not (alpha_new == 0).any() or not (alpha_new == 1).any():
            result.collapsed = True
            break
        alpha = alpha_new
        if prev_energy is not None:
            denom = max(abs(prev_energy), 1e-12)
            if (prev_energy - energy) / denom < tol:
                result.converged = True
                break
        prev_energy = energy
    return result


def dilate_mask(mask: np.ndarray, px: int) -> np.ndarray:
    """Binary dilation by a (2 px + 1)-square structuring element."""
    m = (np.asarray(mask) != 0).astype(np.uint8)
    if px <= 0:
        return m
    kernel = np.ones((2 * px + 1, 2 * px + 1), dtype=np.uint8)
    return cv2.dilate(m, kernel)
