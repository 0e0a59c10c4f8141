"""Inverted dropout and Self-Balanced Dropout layers.

Self-Balanced Dropout replaces each dropped unit with a trainable value
instead of zero and applies no 1/p rescaling::

    out_ij = x_ij        with probability p
             m_j         with probability 1 - p

The replacement ``m`` comes in three granularities:

``shared_scalar``  one trainable scalar for every unit
``per_feature``    one scalar per feature (last axis) -- the default
``token_vector``   one vector of size ``embedding_dim``; whole token rows of an
                   (..., tokens, embedding_dim) input are swapped at once
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import GraphNode
from .tensor import RngState, ShapeError, bernoulli_mask

VARIANTS = ("standard", "self_balanced")
GRANULARITIES = ("shared_scalar", "per_feature", "token_vector")
INFERENCE_MODES = ("passthrough", "expectation")


@dataclass(frozen=True)
class DropoutSpec:
    variant: str = "self_balanced"
    keep_prob: float = 0.5
    granularity: str = "per_feature"
    inference_mode: str = "passthrough"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.inference_mode not in INFERENCE_MODES:
            raise ValueError(f"inference_mode must be one of {INFERENCE_MODES}, "
                             f"got {self.inference_mode!r}")
        _check_keep_prob(self.keep_prob)


def _check_keep_prob(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must lie in (0, 1], got {p}")


def mask_shape(granularity: str, feature_dim: int) -> tuple[int, ...]:
    """Shape of the trainable replacement for inputs whose last axis has ``feature_dim``."""
    if granularity == "shared_scalar":
        return ()
    if granularity in ("per_feature", "token_vector"):
        return (feature_dim,)
    raise ValueError(f"unknown granularity {granularity!r}")


def init_mask(granularity: str, feature_dim: int, name: str = "x_mask") -> GraphNode:
    # zeros: value-mode SB dropout then starts out as unscaled standard dropout
    return ag.parameter(np.zeros(mask_shape(granularity, feature_dim)), name=name)


def _replace(x: GraphNode, m: GraphNode, keep: np.ndarray) -> GraphNode:
    """``where(keep, x, m)`` with gradients routed to whichever side was selected."""
    target = np.broadcast_shapes(x.shape, keep.shape)
    chosen = keep.astype(bool)
    out = np.where(chosen, x.value, m.value)

    def x_rule(g):
        return np.where(chosen, g, 0.0)

    def m_rule(g):
        return ag._unbroadcast(np.broadcast_to(np.where(chosen, 0.0, g), target), m.shape)

    return ag.make_node(out, [(x, x_rule), (m, m_rule)])


def _scale_kept(x: GraphNode, keep: np.ndarray, p: float) -> GraphNode:
    chosen = keep.astype(bool)
    return ag.make_node(np.where(chosen, x.value / p, 0.0),
                        [(x, lambda g: np.where(chosen, g / p, 0.0))])


def standard_dropout_forward(x: GraphNode, p: float, rng: RngState,
                             training: bool = True) -> GraphNode:
    """Inverted dropout: kept units are divided by ``p`` during training."""
    if p <= 0.0:
        raise ValueError("keep probability 0 is not allowed for inverted dropout (divides by p)")
    _check_keep_prob(p)
    if not training or p == 1.0:
        return x
    keep = bernoulli_mask(rng, x.shape, p)
    return _scale_kept(x, keep, p)


def _check_mask(x: GraphNode, mask: GraphNode, spec: DropoutSpec) -> None:
    if x.value.ndim < 1:
        raise ShapeError("self-balanced dropout needs at least one feature axis")
    if spec.granularity == "token_vector" and x.value.ndim < 2:
        raise ShapeError(f"token_vector granularity needs (tokens, embedding_dim) inputs, "
                         f"got shape {x.shape}")
    expected = mask_shape(spec.granularity, x.shape[-1])
    if mask.shape != expected:
        raise ShapeError(f"mask shape {mask.shape} does not match granularity "
                         f"{spec.granularity!r} for input shape {x.shape} (expected {expected})")


def self_balanced_forward(x: GraphNode, mask: GraphNode, p: float, rng: RngState,
                          training: bool = True,
                          spec: DropoutSpec | None = None) -> GraphNode:
    """Replace dropped units of ``x`` by the trainable ``mask`` (no rescaling)."""
    spec = spec or DropoutSpec("self_balanced", p)
    _check_keep_prob(p)
    _check_mask(x, mask, spec)
    if not training:
        if spec.inference_mode == "passthrough" or p == 1.0:
            return x
        return ag.add(ag.scale(x, p), ag.scale(mask, 1.0 - p))
    if p == 1.0:
        return x
    if spec.granularity == "token_vector":
        keep = bernoulli_mask(rng, x.shape[:-1] + (1,), p)
    else:
        keep = bernoulli_mask(rng, x.shape, p)
    return _replace(x, mask, keep)


class Dropout:
    """A dropout site: owns its spec, RNG stream and (for SB) the mask parameter.

    Masks are resampled on every training-mode call.
    """

    def __init__(self, spec: DropoutSpec, feature_dim: int, rng: RngState, name: str = "dropout"):
        self.spec = spec
        self.rng = rng
        self.name = name
        self.training = True
        self.mask = None
        if spec.variant == "self_balanced":
            self.mask = init_mask(spec.granularity, feature_dim, name=f"{name}.x_mask")

    def __call__(self, x: GraphNode) -> GraphNode:
        if self.spec.variant == "standard":
            return standard_dropout_forward(x, self.spec.keep_prob, self.rng, self.training)
        return self_balanced_forward(x, self.mask, self.spec.keep_prob, self.rng,
                                     self.training, self.spec)

    def parameters(self) -> list[GraphNode]:
        return [] if self.mask is None else [self.mask]

    def mask_norm(self) -> float:
        if self.mask is None:
            return 0.0
        return float(np.sqrt(np.sum(self.mask.value ** 2)))
