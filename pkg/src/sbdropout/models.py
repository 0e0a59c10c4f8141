"""Desk-scale models with dropout sites: linear regression and a small text CNN.

Each model exposes one *instrumented site*: the layer right after a dropout
site, whose weight norm, (pre-dropout) input norm and mask norm are tracked
during training.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import GraphNode
from .dropout import Dropout, DropoutSpec
from .tensor import RngState, frobenius_norm


class LinearModel:
    task = "regression"

    def __init__(self, dim: int, spec: DropoutSpec, rng: RngState, bias: bool = True,
                 init_scale: float = 1.0):
        init_rng, drop_rng = rng.child(0), rng.child(1)
        self.w = ag.parameter(init_scale * init_rng.normal((dim,)), name="w")
        self.bias = ag.parameter(np.zeros(()), name="bias") if bias else None
        self.dropout = Dropout(spec, dim, drop_rng, name="input")
        self.site = "input"
        self.site_input: np.ndarray | None = None

    def parameters(self) -> list[GraphNode]:
        params = [self.w] + ([self.bias] if self.bias is not None else [])
        return params + self.dropout.parameters()

    def train(self, mode: bool = True) -> None:
        self.dropout.training = mode

    def forward(self, X: np.ndarray) -> GraphNode:
        self.site_input = X
        out = ag.matmul(self.dropout(ag.constant(X)), self.w)
        return out + self.bias if self.bias is not None else out

    def loss(self, out: GraphNode, target: np.ndarray) -> GraphNode:
        return ag.mse(out, target)

    def site_weight_norm(self) -> float:
        return frobenius_norm(self.w.value)

    def site_mask_norm(self) -> float:
        return self.dropout.mask_norm()


class TextCnnModel:
    """Embedding -> SB/standard dropout -> conv(width) -> ReLU -> max-over-time
    -> dropout -> linear classifier.

    The input-layer site drops whole token embeddings (keep prob ``p_input``);
    the hidden site drops pooled features (keep prob ``p_hidden``).
    """

    task = "classification"

    def __init__(self, vocab_size: int, input_spec: DropoutSpec, hidden_spec: DropoutSpec,
                 rng: RngState, embed_dim: int = 16, width: int = 3, filters: int = 8,
                 classes: int = 2, site: str = "hidden"):
        if site not in ("input", "hidden"):
            raise ValueError(f"site must be 'input' or 'hidden', got {site!r}")
        init = rng.child(0)
        self.width = width
        self.embedding = ag.parameter(init.normal((vocab_size, embed_dim), scale=0.5), name="embedding")
        fan_in = width * embed_dim
        self.conv_w = ag.parameter(init.normal((fan_in, filters), scale=1.0 / np.sqrt(fan_in)),
                                   name="conv_w")
        self.conv_b = ag.parameter(np.zeros(filters), name="conv_b")
        self.out_w = ag.parameter(init.normal((filters, classes), scale=1.0 / np.sqrt(filters)),
                                  name="out_w")
        self.out_b = ag.parameter(np.zeros(classes), name="out_b")
        self.input_dropout = Dropout(input_spec, embed_dim, rng.child(1), name="input")
        self.hidden_dropout = Dropout(hidden_spec, filters, rng.child(2), name="hidden")
        self.site = site
        self.site_input: np.ndarray | None = None

    def parameters(self) -> list[GraphNode]:
        return ([self.embedding, self.conv_w, self.conv_b, self.out_w, self.out_b]
                + self.input_dropout.parameters() + self.hidden_dropout.parameters())

    def train(self, mode: bool = True) -> None:
        self.input_dropout.training = mode
        self.hidden_dropout.training = mode

    def features(self, ids: np.ndarray) -> GraphNode:
        """Pooled convolutional features, before the hidden dropout site."""
        ids = np.asarray(ids, dtype=np.int64)
        batch, length = ids.shape
        emb = ag.take_rows(self.embedding, ids)
        if self.site == "input":
            self.site_input = emb.value
        emb = self.input_dropout(emb)
        windows = ag.sliding_windows(emb, self.width)
        n_win = length - self.width + 1
        flat = ag.reshape(windows, (batch * n_win, windows.shape[2]))
        conv = ag.matmul(flat, self.conv_w) + self.conv_b
        conv = ag.relu(ag.reshape(conv, (batch, n_win, self.conv_w.shape[1])))
        return ag.max_over_axis(conv, axis=1)

    def forward(self, ids: np.ndarray) -> GraphNode:
        pooled = self.features(ids)
        if self.site == "hidden":
            self.site_input = pooled.value
        hidden = self.hidden_dropout(pooled)
        return ag.matmul(hidden, self.out_w) + self.out_b

    def loss(self, out: GraphNode, target: np.ndarray) -> GraphNode:
        return ag.softmax_cross_entropy(out, target)

    def _site(self) -> tuple[GraphNode, Dropout]:
        if self.site == "hidden":
            return self.out_w, self.hidden_dropout
        return self.conv_w, self.input_dropout

    def site_weight_norm(self) -> float:
        return frobenius_norm(self._site()[0].value)

    def site_mask_norm(self) -> float:
        return self._site()[1].mask_norm()
