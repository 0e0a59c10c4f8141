"""The oracle battery behind ``sbdropout verify``.

Every check compares an analytic result with an independent route
(exhaustive enumeration, central differences or Monte Carlo) over a fixed,
seeded instance battery.  Checks marked ``must_pass`` decide the exit status;
the audit of the literature's three-term SB decomposition is report-only.

``overrides`` lets tests swap in deliberately broken closed forms to confirm
the corresponding check turns red.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag
from . import closedform as cf
from .dropout import DropoutSpec, _replace, _scale_kept, self_balanced_forward, standard_dropout_forward
from .tensor import RngState, bernoulli_mask

VERIFY_SEED = 20190911
BATTERY_SIZE = 200
KEEP_PROBS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
EXACT_TOL = 1e-9
CLOSED_GRAD_TOL = 1e-7
AUTOGRAD_TOL = 1e-5

VERIFY_REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "passed", "seed", "checks"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "passed": {"type": "boolean"},
        "seed": {"type": "integer"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "must_pass", "passed", "tolerance", "measured", "details"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "must_pass": {"type": "boolean"},
                    "passed": {"type": "boolean"},
                    "tolerance": {"type": ["number", "null"]},
                    "measured": {"type": ["number", "null"]},
                    "details": {"type": "object"},
                },
            },
        },
    },
}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def instance_battery(mask: str | None = "scalar", size: int = BATTERY_SIZE,
                     seed: int = VERIFY_SEED) -> list[cf.RegressionInstance]:
    """Seeded instances with N, D in 1..3 and p cycling over 0.2..0.9."""
    rng = RngState(seed)
    out = []
    for i in range(size):
        n, d = 1 + i % 3, 1 + (i // 3) % 3
        out.append(cf.random_instance(rng.child(i), n, d, KEEP_PROBS[i % len(KEEP_PROBS)], mask=mask))
    return out


def _check(name: str, passed: bool, tolerance, measured, must_pass: bool = True, **details) -> dict:
    return {"name": name, "must_pass": must_pass, "passed": bool(passed),
            "tolerance": tolerance, "measured": None if measured is None else float(measured),
            "details": details}


def check_standard_objective(fns: dict) -> dict:
    errs = [_rel(fns["expected_objective_standard"](inst), cf.enumerate_expectation(inst, "standard"))
            for inst in instance_battery(mask=None)]
    worst = max(errs)
    return _check("standard_objective_vs_enumeration", worst <= EXACT_TOL, EXACT_TOL, worst,
                  instances=len(errs), worst_index=int(np.argmax(errs)))


def check_sb_objective(fns: dict, mask: str) -> dict:
    errs = [_rel(fns["expected_objective_sb_exact"](inst), cf.enumerate_expectation(inst, "self_balanced"))
            for inst in instance_battery(mask=mask)]
    worst = max(errs)
    return _check(f"sb_exact_vs_enumeration_{mask}", worst <= EXACT_TOL, EXACT_TOL, worst,
                  instances=len(errs), worst_index=int(np.argmax(errs)))


def check_literature_decomposition() -> list[dict]:
    battery = instance_battery(mask="scalar")
    reports = [cf.expected_objective_sb_paper(inst) for inst in battery]
    gaps = [r.rel_gap for r in reports]
    signed = [r.closed_form_value - r.exact_expectation for r in reports]
    audit = _check("literature_decomposition_gap", True, None, float(np.median(gaps)), must_pass=False,
                   rel_gap_min=float(np.min(gaps)), rel_gap_median=float(np.median(gaps)),
                   rel_gap_max=float(np.max(gaps)),
                   nonzero_gaps=int(np.sum(np.array(gaps) > EXACT_TOL)), instances=len(gaps),
                   signed_gaps=signed, rel_gaps=gaps)

    errs = []
    for inst in battery:
        at_one = cf.RegressionInstance(inst.X, inst.y, inst.w, 1.0, inst.m)
        report = cf.expected_objective_sb_paper(at_one)
        gap = report.closed_form_value - report.exact_expectation
        errs.append(_rel(gap, float(inst.y @ inst.y)))
    worst = max(errs)
    p_one = _check("literature_decomposition_p1_gap_is_norm_y_squared", worst <= EXACT_TOL, EXACT_TOL,
                   worst, instances=len(errs))
    return [audit, p_one]


def check_closed_form_gradients(fns: dict) -> list[dict]:
    reg_grads, sb_w, sb_m = [], [], []
    for mask in ("scalar", "per_feature"):
        for inst in instance_battery(mask=mask):
            def reg(w, inst=inst):
                return cf.regularizer_standard(cf.RegressionInstance(inst.X, inst.y, w, inst.p))

            def sb_of_w(w, inst=inst):
                return cf.expected_objective_sb_exact(cf.RegressionInstance(inst.X, inst.y, w, inst.p, inst.m))

            def sb_of_m(m, inst=inst):
                m = float(m) if np.ndim(m) == 0 else m
                return cf.expected_objective_sb_exact(cf.RegressionInstance(inst.X, inst.y, inst.w, inst.p, m))

            grads = fns["grad_sb"](inst)
            if mask == "scalar":
                reg_grads.append(ag.finite_diff_check(reg, inst.w, 1e-5,
                                                analytic=fns["grad_regularizer_standard"](inst)).max_rel_error)
            sb_w.append(ag.finite_diff_check(sb_of_w, inst.w, 1e-5, analytic=grads.grad_w).max_rel_error)
            sb_m.append(ag.finite_diff_check(sb_of_m, np.asarray(inst.m), 1e-5,
                                             analytic=np.asarray(grads.grad_m)).max_rel_error)
    return [_check(name, max(errs) <= CLOSED_GRAD_TOL, CLOSED_GRAD_TOL, max(errs), instances=len(errs))
            for name, errs in (("standard_regularizer_gradient", reg_grads), ("sb_exact_grad_w", sb_w),
                               ("sb_exact_grad_m", sb_m))]


def autograd_op_cases(seed: int = VERIFY_SEED) -> dict[str, tuple[Callable, np.ndarray]]:
    """Scalar test functions f(theta) exercising each differentiable op.

    Each op output is contracted with a fixed random tensor so every output
    coordinate contributes to the gradient.
    """
    rng = RngState(seed).child(10_000)
    A = rng.normal((3, 4))
    B = rng.normal((4, 2))
    v = rng.normal((4,))
    labels = np.array([0, 2, 1])
    ids = np.array([[0, 2, 1, 2], [3, 0, 0, 1]])
    keep = bernoulli_mask(rng, (3, 4), 0.5)
    keep_rows = bernoulli_mask(rng, (2, 5, 1), 0.5)
    tokens = rng.normal((2, 5, 3))
    W2 = rng.normal((2, 4))
    W3 = rng.normal((4, 3))
    proj = {shape: rng.normal(shape) for shape in [(3, 4), (3, 2), (3,), (4,), (2, 4, 3), (2, 3, 9), (2, 5, 3)]}

    def contract(node):
        return ag.sum(ag.mul(node, proj[node.shape])) if node.shape else node

    cases = {
        "matmul_left": (lambda t: contract(ag.matmul(t, B)), A),
        "matmul_right": (lambda t: contract(ag.matmul(ag.constant(A), t)), B),
        "matvec": (lambda t: contract(ag.matmul(ag.constant(A), t)), v),
        "add": (lambda t: contract(ag.add(t, A)), A),
        "add_broadcast": (lambda t: contract(ag.add(ag.constant(A), t)), v),
        "sub": (lambda t: contract(ag.sub(A, t)), A),
        "mul": (lambda t: contract(ag.mul(t, A)), A.copy() + 0.5),
        "mul_self": (lambda t: contract(ag.mul(t, t)), A),
        "scale": (lambda t: contract(ag.scale(t, -2.5)), A),
        "square": (lambda t: contract(ag.square(t)), A),
        "relu": (lambda t: contract(ag.relu(t)), A),
        "max_over_axis": (lambda t: contract(ag.max_over_axis(t, axis=1)), A),
        "sum": (lambda t: ag.sum(t), A),
        "sum_axis": (lambda t: contract(ag.sum(t, axis=0)), A),
        "mean": (lambda t: ag.mean(t), A),
        "softmax_cross_entropy": (lambda t: ag.softmax_cross_entropy(t, labels), rng.normal((3, 3))),
        "mse": (lambda t: ag.mse(t, A), A + rng.normal((3, 4))),
        "reshape": (lambda t: contract(ag.reshape(t, (3, 4))), A.reshape(4, 3)),
        "take_rows": (lambda t: contract(ag.take_rows(t, ids)), rng.normal((4, 3))),
        "sliding_windows": (lambda t: contract(ag.sliding_windows(t, 3)), rng.normal((2, 5, 3))),
        "replace_x": (lambda t: contract(_replace(t, ag.constant(v), keep)), A),
        "replace_mask": (lambda t: contract(_replace(ag.constant(A), t, keep)), v),
        "replace_rows_mask": (lambda t: contract(_replace(ag.constant(tokens), t, keep_rows)),
                              rng.normal((3,))),
        "inverted_dropout": (lambda t: contract(_scale_kept(t, keep, 0.7)), A),
        "composite_3_layer": (lambda t: ag.softmax_cross_entropy(
            ag.matmul(ag.relu(ag.matmul(ag.relu(ag.matmul(ag.constant(A), t)), W2)), W3), labels), B),
    }
    return cases


def check_autograd_ops() -> dict:
    worst = {}
    for name, (f, theta) in autograd_op_cases().items():
        worst[name] = max(ag.finite_diff_check(f, theta, eps).max_rel_error for eps in (1e-4, 1e-5))
    measured = max(worst.values())
    return _check("autograd_ops_vs_finite_differences", measured <= AUTOGRAD_TOL, AUTOGRAD_TOL,
                  measured, per_op=worst)


def check_monte_carlo(fns: dict, instances: int = 20, samples: int = 100_000) -> dict:
    rng = RngState(VERIFY_SEED).child(20_000)
    excursions = {"standard": 0, "self_balanced": 0}
    z_scores = {"standard": [], "self_balanced": []}
    for i in range(instances):
        inst = cf.random_instance(rng.child(i), 1 + i % 3, 1 + (i // 3) % 3,
                                  KEEP_PROBS[i % len(KEEP_PROBS)], mask="per_feature")
        for variant, closed in (("standard", fns["expected_objective_standard"]),
                                ("self_balanced", fns["expected_objective_sb_exact"])):
            est = cf.monte_carlo_expectation(inst, variant, samples, rng.child(1000 + i).child(len(variant)))
            z = (est.mean - closed(inst)) / est.std_error
            z_scores[variant].append(z)
            excursions[variant] += abs(z) > 4
    worst = max(excursions.values())
    return _check("monte_carlo_concentration", worst <= 1, 1, worst, excursions=excursions,
                  z_scores=z_scores, samples=samples)


def check_dropout_unbiased(samples: int = 100_000) -> dict:
    rng = RngState(VERIFY_SEED).child(30_000)
    x = rng.normal((6,))
    m = rng.normal((6,))
    p = 0.7
    # each row of the batch is an independent sampled forward of the same x
    xs = ag.constant(np.broadcast_to(x, (samples, 6)).copy())
    spec = DropoutSpec("self_balanced", p, "per_feature")
    draws = {
        "standard": standard_dropout_forward(xs, p, rng.child(1), training=True).value,
        "self_balanced": self_balanced_forward(xs, ag.parameter(m), p, rng.child(2), True, spec).value,
    }
    targets = {"standard": x, "self_balanced": p * x + (1 - p) * m}
    z = {}
    for variant, sample in draws.items():
        se = sample.std(axis=0, ddof=1) / np.sqrt(samples)
        z[variant] = ((sample.mean(axis=0) - targets[variant]) / se).tolist()
    worst = max(abs(v) for zs in z.values() for v in zs)
    return _check("dropout_layer_unbiasedness", worst <= 4.0, 4.0, worst, z_scores=z, samples=samples)


def default_functions() -> dict:
    return {
        "expected_objective_standard": cf.expected_objective_standard,
        "expected_objective_sb_exact": cf.expected_objective_sb_exact,
        "grad_regularizer_standard": cf.grad_regularizer_standard,
        "grad_sb": cf.grad_sb,
    }


def run_verify(overrides: dict[str, Callable] | None = None, mc_samples: int = 100_000) -> dict:
    fns = default_functions()
    unknown = set(overrides or {}) - set(fns)
    if unknown:
        raise KeyError(f"unknown override(s): {sorted(unknown)}")
    fns.update(overrides or {})

    checks = []
    steps = [
        ("standard", lambda: [check_standard_objective(fns)]),
        ("sb", lambda: [check_sb_objective(fns, "scalar"), check_sb_objective(fns, "per_feature")]),
        ("decomposition", check_literature_decomposition),
        ("gradients", lambda: check_closed_form_gradients(fns)),
        ("autograd", lambda: [check_autograd_ops()]),
        ("monte_carlo", lambda: [check_monte_carlo(fns, samples=mc_samples)]),
        ("dropout", lambda: [check_dropout_unbiased(samples=mc_samples)]),
    ]
    for _, step in steps:
        checks.extend(step())
    passed = all(c["passed"] for c in checks if c["must_pass"])
    return {"schema_version": 1, "passed": passed, "seed": VERIFY_SEED, "checks": checks}
