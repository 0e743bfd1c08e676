"""Divergence-weighted edge weights.

For every directed edge ``(i, j)`` of the self-looped graph a layer computes

* a similarity ``S_ij = a . (F_i || F_j) + <X_i, X_j>``,
* Jensen-Shannon divergences between the rows of ``F`` (contextual) and of
  ``X`` (structural), mixed with weight ``beta = sigmoid(beta_raw)``,
* an edge weight ``E_ij = exp(S_ij - gamma * D_ij)``, and
* its symmetric normalization ``E_ij / sqrt(rowsum_i * rowsum_j)``.

All functions act on per-edge column tensors aligned with the graph's
canonical edge order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, DomainError, NonFiniteError
from .graph import Graph

ABLATIONS = ("full", "context_only", "structure_only", "none")
DIVERGENCE_MODES = ("normalized", "literal")
EXPONENT_CLAMP = 30.0


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class JsdmpLayerParams:
    """Learnables of one layer; fields hold arrays, or tensors once on a tape."""

    W_f: object
    W_x: object
    a: object
    beta_raw: object
    gamma: object

    FIELDS = ("W_f", "W_x", "a", "beta_raw", "gamma")

    @classmethod
    def init(cls, d_in: int, d_out: int, latent_dim: int, rng: np.random.Generator) -> "JsdmpLayerParams":
        # a starts at zero: uniform attention scores, so training departs from
        # GCN weighting. A random a scales each neighbour's messages by
        # exp(a_right . F_j), which the symmetric normalization does not cancel.
        return cls(
            W_f=glorot(rng, d_in, d_out),
            W_x=glorot(rng, latent_dim, latent_dim),
            a=np.zeros((2 * d_out, 1)),
            beta_raw=np.zeros((1, 1)),
            gamma=np.ones((1, 1)),
        )

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_mapping(cls, mapping, prefix: str) -> "JsdmpLayerParams":
        return cls(**{k: mapping[f"{prefix}.{k}"] for k in cls.FIELDS})

    @property
    def beta(self) -> float:
        raw = self.beta_raw.values if isinstance(self.beta_raw, Tensor) else self.beta_raw
        return float(1.0 / (1.0 + np.exp(-np.asarray(raw).item())))


@dataclass
class EdgeWeights:
    values: Tensor
    normalized: Tensor


def map_features(F_in: Tensor, X_in: Tensor, p: JsdmpLayerParams) -> tuple[Tensor, Tensor]:
    if F_in.cols != p.W_f.rows:
        raise DimensionError(f"feature mapping: input has {F_in.cols} columns, W_f expects {p.W_f.rows}")
    if X_in.cols != p.W_x.rows:
        raise DimensionError(f"latent mapping: input has {X_in.cols} columns, W_x expects {p.W_x.rows}")
    return ad.matmul(F_in, p.W_f), ad.matmul(X_in, p.W_x)


def similarity(F: Tensor | None, X: Tensor | None, g: Graph, a: Tensor | None) -> Tensor:
    """Per-edge ``a . (F_i || F_j) + <X_i, X_j>``.

    Passing ``F``/``a`` as None drops the attention term; ``X`` as None drops
    the latent inner product.
    """
    terms = []
    if F is not None:
        d = F.cols
        if a.shape != (2 * d, 1):
            raise DimensionError(f"attention vector must have length {2 * d}, got shape {a.shape}")
        left = ad.matmul(F, ad.slice_rows(a, 0, d))
        right = ad.matmul(F, ad.slice_rows(a, d, 2 * d))
        terms.append(ad.add(ad.edge_gather(left, g.src), ad.edge_gather(right, g.dst)))
    if X is not None:
        prod = ad.hadamard(ad.edge_gather(X, g.src), ad.edge_gather(X, g.dst))
        terms.append(ad.row_sum(prod))
    if not terms:
        raise ConfigError("similarity needs at least one of the attention or latent terms")
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def jensen_shannon(P: Tensor, Q: Tensor, log_p: Tensor | None = None, log_q: Tensor | None = None) -> Tensor:
    """Row-wise JS divergence between probability rows (natural log).

    ``log_p``/``log_q`` may supply precomputed logarithms of ``P``/``Q``.
    """
    log_m = ad.log(ad.scale(ad.add(P, Q), 0.5))
    log_p = ad.log(P) if log_p is None else log_p
    log_q = ad.log(Q) if log_q is None else log_q
    kl_p = ad.hadamard(P, ad.sub(log_p, log_m))
    kl_q = ad.hadamard(Q, ad.sub(log_q, log_m))
    return ad.scale(ad.row_sum(ad.add(kl_p, kl_q)), 0.5)


def _edge_divergence(Z: Tensor, g: Graph, mode: str, what: str) -> Tensor:
    if mode == "normalized":
        log_p = ad.row_log_softmax(Z)
        P = ad.exp(log_p)
        js = jensen_shannon(
            ad.edge_gather(P, g.src),
            ad.edge_gather(P, g.dst),
            ad.edge_gather(log_p, g.src),
            ad.edge_gather(log_p, g.dst),
        )
        # self-loops compare a row with itself: exactly zero, not rounding noise
        return ad.hadamard(js, Tensor((g.src != g.dst).astype(np.float64)[:, None]))
    if mode == "literal":
        if np.any(Z.values < 0):
            raise DomainError(
                f"literal {what} divergence needs non-negative inputs; use divergence mode 'normalized'"
            )
        Zi, Zj = ad.edge_gather(Z, g.src), ad.edge_gather(Z, g.dst)
        log_z = ad.log(Z)
        log_m = ad.log(ad.scale(ad.row_softmax(ad.add(Zi, Zj)), 0.5))
        ti = ad.hadamard(Zi, ad.sub(ad.edge_gather(log_z, g.src), log_m))
        tj = ad.hadamard(Zj, ad.sub(ad.edge_gather(log_z, g.dst), log_m))
        return ad.scale(ad.row_sum(ad.add(ti, tj)), 0.5)
    raise ConfigError(f"unknown divergence mode {mode!r}; expected one of {DIVERGENCE_MODES}")


def contextual_divergence(F: Tensor, g: Graph, mode: str = "normalized") -> Tensor:
    return _edge_divergence(F, g, mode, "contextual")


def structural_divergence(X: Tensor, g: Graph, mode: str = "normalized") -> Tensor:
    return _edge_divergence(X, g, mode, "structural")


def _scalar(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.array([[float(x)]]))


def combined_divergence(Dc: Tensor, Ds: Tensor, beta) -> Tensor:
    """``beta * Dc + (1 - beta) * Ds``; ``beta`` is a 1x1 tensor or a float in [0, 1]."""
    beta = _scalar(beta)
    b = beta.item()
    if not 0.0 <= b <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {b}")
    one_minus = ad.add_scalar(ad.scale(beta, -1.0), 1.0)
    return ad.add(ad.scale_by(Dc, beta), ad.scale_by(Ds, one_minus))


def edge_weights(S: Tensor, D: Tensor | None, gamma) -> Tensor:
    """``exp(clamp(S - gamma * D, -30, 30))``; ``D`` None means no divergence term."""
    z = S if D is None else ad.sub(S, ad.scale_by(D, _scalar(gamma)))
    bad = np.flatnonzero(~np.isfinite(z.values[:, 0]))
    if bad.size:
        raise NonFiniteError(f"edge weight exponent is not finite at edge {int(bad[0])}")
    return ad.exp(ad.clip(z, -EXPONENT_CLAMP, EXPONENT_CLAMP))


def sym_normalize(E: Tensor, g: Graph) -> Tensor:
    """``E_ij / (sqrt(sum_n E_in) * sqrt(sum_n E_jn))`` over the edge list."""
    if E.shape != (g.num_edges, 1):
        raise DimensionError(f"expected {g.num_edges} edge weights, got shape {E.shape}")
    inv_sqrt = ad.power(ad.edge_scatter_sum(E, g.src, g.n), -0.5)
    return ad.hadamard(ad.hadamard(E, ad.edge_gather(inv_sqrt, g.src)), ad.edge_gather(inv_sqrt, g.dst))


def aggregate(phi: Tensor, F: Tensor, g: Graph) -> Tensor:
    """Row ``i`` is ``sum_j phi_ij * F_j`` over the neighbours of ``i``."""
    messages = ad.row_scale(ad.edge_gather(F, g.dst), phi)
    return ad.edge_scatter_sum(messages, g.src, g.n)


def compute_edge_weights(
    F: Tensor,
    X: Tensor,
    g: Graph,
    p: JsdmpLayerParams,
    ablation: str = "full",
    mode: str = "normalized",
) -> EdgeWeights:
    """Edge weights from already mapped ``F`` and ``X``, honouring the ablation mode.

    ``context_only`` keeps the attention term and the contextual divergence;
    ``structure_only`` keeps the latent term and the structural divergence;
    ``none`` gives unit weights, i.e. plain GCN normalization.
    """
    if ablation == "none":
        E = Tensor(np.ones((g.num_edges, 1)))
        return EdgeWeights(E, sym_normalize(E, g))
    if ablation == "full":
        S = similarity(F, X, g, p.a)
        D = combined_divergence(
            contextual_divergence(F, g, mode), structural_divergence(X, g, mode), ad.sigmoid(p.beta_raw)
        )
    elif ablation == "context_only":
        S = similarity(F, None, g, p.a)
        D = contextual_divergence(F, g, mode)
    elif ablation == "structure_only":
        S = similarity(None, X, g, None)
        D = structural_divergence(X, g, mode)
    else:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    E = edge_weights(S, D, p.gamma)
    return EdgeWeights(E, sym_normalize(E, g))
