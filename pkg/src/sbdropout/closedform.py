"""Expected dropout objectives for linear regression, and oracles that check them.

Setting: data ``X`` (N x D), labels ``y`` (N,), weights ``w`` (D,), keep
probability ``p`` and, for Self-Balanced Dropout, replacement values ``m``
(a scalar or one value per feature).  The sampled objective is
``||y - X_tilde w||^2`` where each entry of ``X_tilde`` is independently

* standard:       ``x_ij / p`` w.p. ``p``, else ``0``
* self-balanced:  ``x_ij``     w.p. ``p``, else ``m_j``

Closed forms
------------
Standard (exact)::

    ||y - Xw||^2 + (1-p)/p * sum_ij (x_ij w_j)^2

Self-balanced, exact (mean plus variance of each replaced entry)::

    ||y - (pX + (1-p)M) w||^2 + p(1-p) * sum_ij (x_ij - m_j)^2 w_j^2

Self-balanced, as commonly written in the literature::

    ||y - pXw||^2 + ||y - (1-p)M w||^2 + p(1-p) * sum_ij (x_ij + m)^2 w_j^2

The last form is evaluated verbatim by :func:`expected_objective_sb_paper` and
audited against the enumeration oracle; it does not equal the expectation
(at p=1 it exceeds it by ``||y||^2``), so its gap is reported, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import RngState, ShapeError, bernoulli_mask

MAX_ENUMERATION_CELLS = 24
_ENUM_CHUNK = 1 << 16
_MC_CHUNK = 10_000


@dataclass
class RegressionInstance:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    p: float
    m: float | np.ndarray = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.p = float(self.p)
        if np.ndim(self.m) == 0:
            self.m = float(self.m)
        else:
            self.m = np.asarray(self.m, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ShapeError(f"X must be a non-empty N x D matrix, got shape {self.X.shape}")
        n, d = self.X.shape
        if self.y.shape != (n,):
            raise ShapeError(f"y must have shape ({n},), got {self.y.shape}")
        if self.w.shape != (d,):
            raise ShapeError(f"w must have shape ({d},), got {self.w.shape}")
        if not isinstance(self.m, float) and self.m.shape != (d,):
            raise ShapeError(f"mask values must be a scalar or shape ({d},), got {self.m.shape}")
        # p = 0 is only meaningful for self-balanced replacement (everything replaced)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"keep probability must lie in [0, 1], got {self.p}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def mask_row(self) -> np.ndarray:
        """Mask values broadcast to one per feature."""
        return np.broadcast_to(np.asarray(self.m, dtype=np.float64), (self.d,))


def random_instance(rng: RngState, n: int, d: int, p: float,
                    mask: str | None = "scalar", integer: bool = False) -> RegressionInstance:
    """Seeded random instance; ``mask`` is ``None``, ``"scalar"`` or ``"per_feature"``."""
    if integer:
        X = rng.integers(-3, 4, (n, d)).astype(np.float64)
        y = rng.integers(-3, 4, (n,)).astype(np.float64)
        w = rng.integers(-2, 3, (d,)).astype(np.float64)
    else:
        X = rng.normal((n, d))
        y = rng.normal((n,))
        w = rng.normal((d,))
    if mask is None:
        m = 0.0
    elif mask == "scalar":
        m = float(rng.normal())
    elif mask == "per_feature":
        m = rng.normal((d,))
    else:
        raise ValueError(f"unknown mask kind {mask!r}")
    return RegressionInstance(X, y, w, p, m)


def _require_positive_p(p: float) -> None:
    if p <= 0.0:
        raise ValueError("standard (inverted) dropout needs keep probability > 0")


def least_squares(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    r = y - X @ w
    return float(r @ r)


def regularizer_standard(inst: RegressionInstance) -> float:
    _require_positive_p(inst.p)
    return (1.0 - inst.p) / inst.p * float(np.sum((inst.X * inst.w) ** 2))


def expected_objective_standard(inst: RegressionInstance) -> float:
    """``||y - Xw||^2 + (1-p)/p * sum_ij (x_ij w_j)^2``."""
    _require_positive_p(inst.p)
    return least_squares(inst.X, inst.y, inst.w) + regularizer_standard(inst)


def grad_regularizer_standard(inst: RegressionInstance) -> np.ndarray:
    _require_positive_p(inst.p)
    return 2.0 * (1.0 - inst.p) / inst.p * np.sum(inst.X ** 2, axis=0) * inst.w


def _sb_mean_matrix(inst: RegressionInstance) -> np.ndarray:
    return inst.p * inst.X + (1.0 - inst.p) * inst.mask_row


def expected_objective_sb_exact(inst: RegressionInstance) -> float:
    p = inst.p
    r = inst.y - _sb_mean_matrix(inst) @ inst.w
    variance = p * (1.0 - p) * float(np.sum((inst.X - inst.mask_row) ** 2 * inst.w ** 2))
    return float(r @ r) + variance


@dataclass
class SbGradients:
    grad_w: np.ndarray
    grad_m: float | np.ndarray
    grad_w_paper: np.ndarray


def grad_sb(inst: RegressionInstance) -> SbGradients:
    """Gradients of the exact SB expectation, plus the literature's regularizer gradient.

    ``grad_w_paper`` is ``2p(1-p) sum_i (x_ij + m_j)^2 w_j``, i.e. the gradient of
    the regularizer term only, as written in the literature.
    """
    p, X, w, m = inst.p, inst.X, inst.w, inst.mask_row
    A = _sb_mean_matrix(inst)
    r = inst.y - A @ w
    centred = X - m
    grad_w = -2.0 * A.T @ r + 2.0 * p * (1.0 - p) * np.sum(centred ** 2, axis=0) * w
    grad_m_vec = (-2.0 * (1.0 - p) * w * np.sum(r)
                  - 2.0 * p * (1.0 - p) * w ** 2 * np.sum(centred, axis=0))
    grad_m = float(np.sum(grad_m_vec)) if isinstance(inst.m, float) else grad_m_vec
    grad_w_paper = 2.0 * p * (1.0 - p) * np.sum((X + m) ** 2, axis=0) * w
    return SbGradients(grad_w, grad_m, grad_w_paper)


@dataclass
class DecompositionReport:
    exact_expectation: float
    closed_form_value: float
    per_term_values: dict[str, float] = field(default_factory=dict)
    abs_gap: float = 0.0
    rel_gap: float = 0.0
    exact_source: str = "enumeration"
    exact_closed_form: float = 0.0
    gap_vs_exact_closed_form: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def expected_objective_sb_paper(inst: RegressionInstance) -> DecompositionReport:
    """Evaluate the literature's three-term SB decomposition and measure its gap.

    Only a single shared mask value is accepted, since that decomposition is
    stated for one trainable scalar.  The reference expectation comes from
    exhaustive enumeration when the instance is small enough, otherwise from
    the exact closed form.
    """
    if not isinstance(inst.m, float):
        raise ShapeError("the literature decomposition is defined for a scalar mask only")
    p, X, y, w, m = inst.p, inst.X, inst.y, inst.w, inst.m
    data_fit = least_squares(p * X, y, w)
    q_term = least_squares(np.full_like(X, (1.0 - p) * m), y, w)
    regularizer = p * (1.0 - p) * float(np.sum((X + m) ** 2 * w ** 2))
    value = data_fit + q_term + regularizer

    exact_cf = expected_objective_sb_exact(inst)
    if inst.n * inst.d <= MAX_ENUMERATION_CELLS:
        exact, source = enumerate_expectation(inst, "self_balanced"), "enumeration"
    else:
        exact, source = exact_cf, "exact_closed_form"
    abs_gap = abs(exact - value)
    return DecompositionReport(
        exact_expectation=exact,
        closed_form_value=value,
        per_term_values={"data_fit": data_fit, "Q": q_term, "regularizer": regularizer},
        abs_gap=abs_gap,
        rel_gap=abs_gap / max(1.0, abs(exact)),
        exact_source=source,
        exact_closed_form=exact_cf,
        gap_vs_exact_closed_form=value - exact_cf,
    )


def _sampled_inputs(inst: RegressionInstance, keep: np.ndarray, variant: str) -> np.ndarray:
    """Perturbed data matrices for a stack of keep masks shaped (S, N, D)."""
    chosen = keep.astype(bool)
    if variant == "standard":
        _require_positive_p(inst.p)
        return np.where(chosen, inst.X / inst.p, 0.0)
    if variant == "self_balanced":
        return np.where(chosen, inst.X, inst.mask_row)
    raise ValueError(f"unknown variant {variant!r}")


def _objectives(inst: RegressionInstance, X_tilde: np.ndarray) -> np.ndarray:
    r = inst.y - X_tilde @ inst.w
    return np.einsum("sn,sn->s", r, r)


def enumerate_expectation(inst: RegressionInstance, variant: str) -> float:
    """Exact expectation by summing over all 2**(N*D) keep masks."""
    cells = inst.n * inst.d
    if cells > MAX_ENUMERATION_CELLS:
        raise ValueError(f"enumeration limited to N*D <= {MAX_ENUMERATION_CELLS}, got {cells}")
    p = inst.p
    bit_pos = np.arange(cells, dtype=np.int64)
    partials = []
    for start in range(0, 1 << cells, _ENUM_CHUNK):
        idx = np.arange(start, min(start + _ENUM_CHUNK, 1 << cells), dtype=np.int64)
        bits = (idx[:, None] >> bit_pos) & 1
        kept = bits.sum(axis=1)
        weights = p ** kept * (1.0 - p) ** (cells - kept)
        keep = bits.reshape(-1, inst.n, inst.d)
        partials.append(float(weights @ _objectives(inst, _sampled_inputs(inst, keep, variant))))
    return math.fsum(partials)


@dataclass
class MonteCarloEstimate:
    mean: float
    std_error: float
    samples: int


def monte_carlo_expectation(inst: RegressionInstance, variant: str, samples: int,
                            rng: RngState) -> MonteCarloEstimate:
    if samples < 1000:
        raise ValueError(f"monte carlo needs at least 1000 samples, got {samples}")
    values = np.empty(samples)
    for start in range(0, samples, _MC_CHUNK):
        stop = min(start + _MC_CHUNK, samples)
        keep = bernoulli_mask(rng, (stop - start, inst.n, inst.d), inst.p)
        values[start:stop] = _objectives(inst, _sampled_inputs(inst, keep, variant))
    # shifting by the first draw makes a constant sample exact
    shift = values[0]
    centred = values - shift
    mean = float(shift + np.mean(centred))
    std_error = float(np.std(centred, ddof=1) / math.sqrt(samples))
    return MonteCarloEstimate(mean, std_error, samples)
