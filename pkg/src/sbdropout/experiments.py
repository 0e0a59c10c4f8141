"""Config-driven runs: single training, keep-probability sweeps, seed comparisons,
and Monte Carlo checks.  Every function is a pure function of its config."""

from __future__ import annotations

import copy
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .closedform import (expected_objective_sb_exact, expected_objective_standard,
                         monte_carlo_expectation, random_instance)
from .config import ExperimentConfig, config_to_dict
from .data import (TextDataset, generate_correlated_regression, generate_synthetic_text,
                   load_text_dataset)
from .dropout import INFERENCE_MODES, DropoutSpec
from .models import LinearModel, TextCnnModel
from .optim import make_optimizer
from .tensor import RngState
from .training import DivergenceError, MetricsRecord, dataset_arrays, evaluate, train_model


def recorded_config(cfg: ExperimentConfig) -> dict:
    """Config as stored in results: output placement and parallelism left out,
    since they never change the numbers."""
    doc = config_to_dict(cfg)
    doc.pop("output")
    return doc


def build_dataset(cfg: ExperimentConfig):
    d = cfg.data
    seed = cfg.data_seed()
    if cfg.model == "linear":
        return generate_correlated_regression(seed, d.n_train, d.dim, d.rho, d.noise_sigma,
                                              n_test=d.n_test,
                                              decorrelate_test=d.decorrelate_test,
                                              feature_mean=d.feature_mean, signal=d.signal)
    if d.path is None:
        return generate_synthetic_text(seed, d.vocab_size, d.n_train, d.seq_len, d.rho,
                                       n_test=d.n_test)
    ids, labels, vocab = load_text_dataset(d.path, min_len=cfg.architecture.width)
    order = RngState(seed).permutation(len(labels))
    n_test = max(1, int(round(d.test_fraction * len(labels))))
    test, train = order[:n_test], order[n_test:]
    return TextDataset(ids[train], labels[train], ids[test], labels[test], len(vocab), seed,
                       math.nan, False)


def build_model(cfg: ExperimentConfig, dataset, rng: RngState):
    d, arch = cfg.dropout, cfg.architecture
    if cfg.model == "linear":
        spec = DropoutSpec(d.variant, d.keep_prob, d.granularity, d.inference_mode)
        return LinearModel(dataset.dim, spec, rng, bias=arch.bias, init_scale=arch.init_scale)
    p_in, p_hid = cfg.keep_probs()
    # the input site always drops whole token embeddings; the hidden site uses
    # the configured value-mode granularity
    hidden_gran = "per_feature" if d.granularity == "token_vector" else d.granularity
    input_spec = DropoutSpec(d.variant, p_in, "token_vector", d.inference_mode)
    hidden_spec = DropoutSpec(d.variant, p_hid, hidden_gran, d.inference_mode)
    n_classes = int(max(dataset.y_train.max(), dataset.y_test.max())) + 1
    return TextCnnModel(dataset.vocab_size, input_spec, hidden_spec, rng,
                        embed_dim=arch.embed_dim, width=arch.width, filters=arch.filters,
                        classes=max(2, n_classes), site=arch.site)


def _train(cfg: ExperimentConfig):
    root = RngState(cfg.seed)
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset, root.child(1))
    opt = cfg.optimizer
    extra = {} if opt.name == "sgd" else {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
    optimizer = make_optimizer(opt.name, model.parameters(), opt.lr, **extra)
    records = train_model(model, dataset, optimizer, cfg.epochs, root.child(2), cfg.batch_size)
    return model, dataset, records


def run_training(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Train once from ``cfg``; raises :class:`DivergenceError` on non-finite loss."""
    return _train(cfg)[2]


def _dropout_layers(model) -> list:
    return [getattr(model, name) for name in ("dropout", "input_dropout", "hidden_dropout")
            if hasattr(model, name)]


def inference_mode_comparison(model, dataset) -> dict:
    """Test loss/accuracy of a trained model under each SB inference mode.

    The configured mode is restored afterwards.  Standard dropout has a single
    inference behaviour, so both entries coincide for it.
    """
    _, _, X_test, y_test = dataset_arrays(dataset)
    layers = _dropout_layers(model)
    saved = [layer.spec for layer in layers]
    out = {}
    try:
        for mode in INFERENCE_MODES:
            for layer, spec in zip(layers, saved):
                layer.spec = dataclasses.replace(spec, inference_mode=mode)
            loss, accuracy = evaluate(model, X_test, y_test)
            out[mode] = {"test_loss": loss, "test_accuracy": accuracy}
    finally:
        for layer, spec in zip(layers, saved):
            layer.spec = spec
    return out


def training_summary(cfg: ExperimentConfig) -> dict:
    """Run training and package the outcome (divergence included) as a dict."""
    try:
        model, dataset, records = _train(cfg)
    except DivergenceError as exc:
        return {"status": "diverged", "error": str(exc), "epoch": exc.epoch,
                "config": recorded_config(cfg), "final": None, "inference_modes": None,
                "records": [r.to_dict() for r in exc.records]}
    return {"status": "ok", "config": recorded_config(cfg), "final": records[-1].to_dict(),
            "inference_modes": inference_mode_comparison(model, dataset),
            "records": [r.to_dict() for r in records]}


def map_ordered(fn: Callable, items: Sequence, parallel: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; output keeps input order."""
    if parallel <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def sweep_cells(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    cells = []
    if cfg.model == "linear":
        for p in cfg.sweep.keep_prob:
            cell = copy.deepcopy(cfg)
            cell.task = "train"
            cell.dropout.keep_prob = p
            cells.append(cell)
    else:
        for p_in in cfg.sweep.keep_prob_input:
            for p_hid in cfg.sweep.keep_prob_hidden:
                cell = copy.deepcopy(cfg)
                cell.task = "train"
                cell.dropout.keep_prob_input = p_in
                cell.dropout.keep_prob_hidden = p_hid
                cells.append(cell)
    return cells


def compare_generalization(cfg: ExperimentConfig, n_seeds: int | None = None,
                           parallel: int = 1) -> dict:
    """Paired final test losses of two dropout variants over seeds ``seed .. seed+n-1``.

    Paired differences are ``second - first`` in ``cfg.compare.variants`` order;
    ``win_rate`` is the fraction of seeds where the second variant's test loss is
    strictly lower.
    """
    n_seeds = cfg.compare.n_seeds if n_seeds is None else n_seeds
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be at least 2, got {n_seeds}")
    first, second = cfg.compare.variants
    runs = []
    for variant in (first, second):
        for k in range(n_seeds):
            run = copy.deepcopy(cfg)
            run.task = "train"
            run.seed = cfg.seed + k
            if cfg.data.seed is not None:
                run.data.seed = cfg.data.seed + k
            run.dropout.variant = variant
            runs.append(run)
    summaries = map_ordered(training_summary, runs, parallel)
    for run, summary in zip(runs, summaries):
        if summary["status"] != "ok":
            raise DivergenceError(f"{run.dropout.variant} run with seed {run.seed} diverged: "
                                  f"{summary['error']}", summary["epoch"], -1)
    losses = np.array([s["final"]["test_loss"] for s in summaries]).reshape(2, n_seeds)
    diffs = losses[1] - losses[0]
    return {
        "variants": [first, second],
        "seeds": [cfg.seed + k for k in range(n_seeds)],
        "mean_test_loss": {first: float(np.mean(losses[0])), second: float(np.mean(losses[1]))},
        "test_loss": {first: losses[0].tolist(), second: losses[1].tolist()},
        "paired_differences": diffs.tolist(),
        "mean_paired_difference": float(np.mean(diffs)),
        "win_rate": float(np.mean(diffs < 0)),
        "config": recorded_config(cfg),
    }


def _mc_instance(args) -> dict:
    seed, index, n, d, samples, mask, p = args
    rng = RngState(seed).child(index)
    inst = random_instance(rng.child(0), n, d, p, mask=mask)
    out = {"index": index, "p": p}
    for variant, closed in (("standard", expected_objective_standard),
                            ("self_balanced", expected_objective_sb_exact)):
        est = monte_carlo_expectation(inst, variant, samples, rng.child(1 if variant == "standard" else 2))
        value = closed(inst)
        z = 0.0 if est.std_error == 0 else (est.mean - value) / est.std_error
        out[variant] = {"mc_mean": est.mean, "std_error": est.std_error, "closed_form": value,
                        "z_score": z, "within_4se": abs(est.mean - value) <= 4 * est.std_error}
    return out


MC_KEEP_PROBS = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def mc_check(cfg: ExperimentConfig, parallel: int = 1) -> dict:
    """Monte Carlo means against both closed forms on seeded random instances.

    The check passes when each variant has at most one 4-standard-error excursion.
    """
    mc = cfg.mc
    jobs = [(cfg.seed, i, mc.n, mc.d, mc.samples, mc.mask, MC_KEEP_PROBS[i % len(MC_KEEP_PROBS)])
            for i in range(mc.instances)]
    rows = map_ordered(_mc_instance, jobs, parallel)
    excursions = {v: sum(not r[v]["within_4se"] for r in rows) for v in ("standard", "self_balanced")}
    return {"instances": rows, "excursions": excursions,
            "passed": all(e <= 1 for e in excursions.values()),
            "config": recorded_config(cfg)}
