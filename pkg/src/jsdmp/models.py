"""DMPGCN and DMPPRG architectures built from divergence-weighted layers."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .graph import Graph
from .layers import ABLATIONS, DIVERGENCE_MODES, EdgeWeights, JsdmpLayerParams, aggregate, compute_edge_weights, glorot

logger = logging.getLogger(__name__)

MODEL_KINDS = ("dmpgcn", "dmpprg", "gcn")


def init_latent_positions(n: int, C: int, rng: np.random.Generator) -> np.ndarray:
    """One-hot rows with the hot column drawn uniformly from ``[0, C)``."""
    if C < 1:
        raise ConfigError(f"latent dimension must be at least 1, got {C}")
    X = np.zeros((n, C))
    X[np.arange(n), rng.integers(0, C, size=n)] = 1.0
    return X


def _check_common(ablation: str, divergence_mode: str, dropout: float):
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    if divergence_mode not in DIVERGENCE_MODES:
        raise ConfigError(f"unknown divergence mode {divergence_mode!r}; expected one of {DIVERGENCE_MODES}")
    if not 0.0 <= dropout < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {dropout}")


@dataclass
class DmpGcnConfig:
    in_dim: int
    n_classes: int
    hidden: int = 32
    n_layers: int = 2
    latent_dim: int | None = None
    dropout: float = 0.75
    ablation: str = "full"
    divergence_mode: str = "normalized"

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("DMPGCN needs at least one layer")
        if self.latent_dim is None:
            self.latent_dim = self.n_classes
        _check_common(self.ablation, self.divergence_mode, self.dropout)


@dataclass
class DmpPrgConfig:
    in_dim: int
    n_classes: int
    hidden: int = 64
    K: int = 10
    alpha: float = 0.1
    latent_dim: int | None = None
    dropout: float = 0.5
    ablation: str = "full"
    divergence_mode: str = "normalized"
    recompute_weights: bool = False

    def __post_init__(self):
        if self.K < 0:
            raise ConfigError(f"propagation depth K must be non-negative, got {self.K}")
        if self.latent_dim is None:
            self.latent_dim = self.n_classes
        _check_common(self.ablation, self.divergence_mode, self.dropout)


def ppr_profile(K: int, alpha: float) -> np.ndarray:
    """``alpha (1 - alpha)^k`` for ``k < K`` with the remaining mass on ``k = K``."""
    lam = alpha * (1.0 - alpha) ** np.arange(K + 1)
    lam[-1] = (1.0 - alpha) ** K
    return lam.reshape(-1, 1)


class DmpGcnModel:
    """Stack of divergence-weighted graph convolutions.

    Each layer has its own mapping weights; the latent positions ``X_base``
    are shared and re-mapped by every layer.
    """

    kind = "dmpgcn"

    def __init__(self, config: DmpGcnConfig, n_nodes: int, rng: np.random.Generator, latent_rng: np.random.Generator):
        self.config = config
        self.n_nodes = n_nodes
        c = config
        dims = [c.in_dim] + [c.hidden] * (c.n_layers - 1) + [c.n_classes]
        self.params: dict[str, np.ndarray] = {}
        for k in range(c.n_layers):
            layer = JsdmpLayerParams.init(dims[k], dims[k + 1], c.latent_dim, rng)
            self.params.update(layer.arrays(f"layer{k}"))
        self.params["X_base"] = init_latent_positions(n_nodes, c.latent_dim, latent_rng)

    def _run(self, p: dict[str, Tensor], features: Tensor, g: Graph, training: bool, rng):
        c = self.config
        if features.cols != c.in_dim:
            raise ConfigError(f"model expects {c.in_dim} input features, dataset has {features.cols}")
        if g.n != self.n_nodes or features.rows != g.n:
            raise ConfigError(f"model built for {self.n_nodes} nodes, got graph with {g.n}")
        X_base = p["X_base"]
        uses_x = c.ablation in ("full", "structure_only")
        h = features
        weights: list[EdgeWeights] = []
        for k in range(c.n_layers):
            layer = JsdmpLayerParams.from_mapping(p, f"layer{k}")
            h = ad.dropout(h, c.dropout, training, rng)
            F = ad.matmul(h, layer.W_f)
            X = ad.matmul(X_base, layer.W_x) if uses_x else None
            ew = compute_edge_weights(F, X, g, layer, c.ablation, c.divergence_mode)
            weights.append(ew)
            h = aggregate(ew.normalized, F, g)
            if k < c.n_layers - 1:
                h = ad.relu(h)
        return h, weights

    def forward(self, p, features: Tensor, g: Graph, training: bool = False, rng=None) -> Tensor:
        return self._run(p, features, g, training, rng)[0]

    def edge_weights(self, p, features: Tensor, g: Graph) -> list[EdgeWeights]:
        """Per-layer edge weights of an inference pass."""
        return self._run(p, features, g, False, None)[1]

    def config_dict(self) -> dict:
        return asdict(self.config)


class DmpPrgModel:
    """MLP followed by K steps of divergence-weighted propagation, fused by learnable lambda."""

    kind = "dmpprg"

    def __init__(self, config: DmpPrgConfig, n_nodes: int, rng: np.random.Generator, latent_rng: np.random.Generator):
        self.config = config
        self.n_nodes = n_nodes
        c = config
        self.params: dict[str, np.ndarray] = {
            "mlp.W1": glorot(rng, c.in_dim, c.hidden),
            "mlp.b1": np.zeros((1, c.hidden)),
            "mlp.W2": glorot(rng, c.hidden, c.n_classes),
            "mlp.b2": np.zeros((1, c.n_classes)),
        }
        self.params.update(JsdmpLayerParams.init(c.n_classes, c.n_classes, c.latent_dim, rng).arrays("prop"))
        self.params["lambda"] = ppr_profile(c.K, c.alpha)
        self.params["X_base"] = init_latent_positions(n_nodes, c.latent_dim, latent_rng)

    def mlp(self, p, features: Tensor, training: bool, rng) -> Tensor:
        c = self.config
        h = ad.dropout(features, c.dropout, training, rng)
        h = ad.relu(ad.add_bias(ad.matmul(h, p["mlp.W1"]), p["mlp.b1"]))
        h = ad.dropout(h, c.dropout, training, rng)
        return ad.add_bias(ad.matmul(h, p["mlp.W2"]), p["mlp.b2"])

    def _weights(self, p, F: Tensor, g: Graph) -> EdgeWeights:
        c = self.config
        layer = JsdmpLayerParams.from_mapping(p, "prop")
        Fm = ad.matmul(F, layer.W_f)
        X = ad.matmul(p["X_base"], layer.W_x) if c.ablation in ("full", "structure_only") else None
        return compute_edge_weights(Fm, X, g, layer, c.ablation, c.divergence_mode)

    def _run(self, p, features: Tensor, g: Graph, training: bool, rng):
        c = self.config
        if features.cols != c.in_dim:
            raise ConfigError(f"model expects {c.in_dim} input features, dataset has {features.cols}")
        if g.n != self.n_nodes or features.rows != g.n:
            raise ConfigError(f"model built for {self.n_nodes} nodes, got graph with {g.n}")
        lam = p["lambda"]
        Fk = self.mlp(p, features, training, rng)
        out = ad.scale_by(Fk, ad.slice_rows(lam, 0, 1))
        if c.K == 0:
            logger.info("K=0: DMPPRG reduces to its MLP")
            return out, []
        ew = self._weights(p, Fk, g)
        weights = [ew]
        for k in range(1, c.K + 1):
            if c.recompute_weights and k > 1:
                ew = self._weights(p, Fk, g)
                weights.append(ew)
            Fk = aggregate(ew.normalized, Fk, g)
            out = ad.add(out, ad.scale_by(Fk, ad.slice_rows(lam, k, k + 1)))
        return out, weights

    def forward(self, p, features: Tensor, g: Graph, training: bool = False, rng=None) -> Tensor:
        return self._run(p, features, g, training, rng)[0]

    def edge_weights(self, p, features: Tensor, g: Graph) -> list[EdgeWeights]:
        return self._run(p, features, g, False, None)[1]

    def config_dict(self) -> dict:
        return asdict(self.config)


def build_model(
    kind: str,
    in_dim: int,
    n_classes: int,
    n_nodes: int,
    rng: np.random.Generator,
    latent_rng: np.random.Generator,
    **overrides,
):
    """Construct a model by CLI name; ``gcn`` is DMPGCN with unit edge weights."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if kind == "gcn":
        overrides["ablation"] = "none"
        kind = "dmpgcn"
    if kind == "dmpgcn":
        overrides.pop("K", None)
        overrides.pop("recompute_weights", None)
        return DmpGcnModel(DmpGcnConfig(in_dim, n_classes, **overrides), n_nodes, rng, latent_rng)
    if kind == "dmpprg":
        overrides.pop("n_layers", None)
        return DmpPrgModel(DmpPrgConfig(in_dim, n_classes, **overrides), n_nodes, rng, latent_rng)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def model_from_config(kind: str, config: dict, n_nodes: int):
    """Rebuild an architecture from a stored config; parameters are placeholders."""
    rng = np.random.default_rng(0)
    if kind == "dmpgcn":
        return DmpGcnModel(DmpGcnConfig(**config), n_nodes, rng, rng)
    if kind == "dmpprg":
        return DmpPrgModel(DmpPrgConfig(**config), n_nodes, rng, rng)
    raise ConfigError(f"unknown model kind {kind!r}")
