"""Iterative self-labeling loop with a consistency filter and a validation gate.

Each iteration scores every unlabeled candidate by the spread of model
predictions across random snapshot subsets, admits the steadiest slice
with the model's own predictions as labels, retrains, and keeps the new
model only if validation R^2 did not drop. A rejected retrain tightens
the admitted slice and tries again a few times before the loop declares
itself converged.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataset import DataPoint, HybridDataset, mask_subset
from .errors import InvalidArgument
from .learner import (
    LearnerConfig,
    Model,
    continue_training,
    feature_spec_for,
    featurize,
    predict,
    predict_features,
    r_squared,
    train_kernel,
    train_sl,
    train_ssl,
)
from .seeding import TAG_RETRAIN, TAG_SELECT, child_seed, derive_rng

PARADIGMS = ("sl", "ssl", "kernel")

REPORT_COLUMNS = (
    "t",
    "accepted",
    "retries",
    "admitted_count",
    "admitted_fraction",
    "val_r2",
    "train_loss",
    "wallclock_s",
)


@dataclass(frozen=True)
class ConsistencyConfig:
    """Subset-consistency scoring and admission-gate knobs."""

    s: int = 5
    subset_fraction: float = 0.25
    admitted_fraction: float = 0.10
    max_retries: int = 3
    tighten_factor: float = 0.5
    absolute_tau: float | None = None

    def __post_init__(self):
        if self.s < 2:
            raise InvalidArgument("need at least two subsets")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise InvalidArgument("subset_fraction must lie in (0, 1]")
        if not 0.0 < self.admitted_fraction <= 1.0:
            raise InvalidArgument("admitted_fraction must lie in (0, 1]")
        if self.max_retries < 0:
            raise InvalidArgument("max_retries must be >= 0")
        if not 0.0 < self.tighten_factor < 1.0:
            raise InvalidArgument("tighten_factor must lie in (0, 1)")
        if self.absolute_tau is not None and self.absolute_tau < 0:
            raise InvalidArgument("absolute_tau must be >= 0")


@dataclass
class AdmittedPoint:
    """A point inside the self-labeled pool with its training labels."""

    point: DataPoint
    labels: np.ndarray
    admitted_at: int


@dataclass
class EngineState:
    """Everything the loop carries between iterations."""

    t: int
    pool: list[AdmittedPoint]
    model: Model
    val_history: list[float]
    admitted_fraction: float
    converged: bool = False
    baseline_model: Model | None = None


# ---------------------------------------------------------------- scoring

def consistency_variance(
    model: Model, point: DataPoint, cc: ConsistencyConfig, rng: np.random.Generator
) -> tuple[float, np.ndarray]:
    """Prediction variance across random snapshot subsets of one point.

    Draws s subsets of round(subset_fraction * m) snapshots (without
    replacement within a subset, independent across subsets), predicts
    on each, and returns the mean squared distance to the mean
    prediction together with that mean.
    """
    m = point.record.m
    if m < cc.s:
        raise InvalidArgument(f"record has {m} snapshots, fewer than s={cc.s}")
    size = max(1, int(round(cc.subset_fraction * m)))
    preds = []
    for _ in range(cc.s):
        cols = np.sort(rng.choice(m, size=size, replace=False)) + 1
        preds.append(predict(model, mask_subset(point, cols)))
    stacked = np.stack(preds)
    center = stacked.mean(axis=0)
    variance = float(((stacked - center) ** 2).sum(axis=1).mean())
    return variance, center


def select_high_quality(
    model: Model,
    candidates: list[DataPoint],
    cc: ConsistencyConfig,
    rng: np.random.Generator,
) -> list[tuple[DataPoint, np.ndarray]]:
    """Admit the lowest-variance candidates with synthetic labels.

    Quantile rule: ceil(admitted_fraction * n_candidates) points, ties
    broken by ascending id. With absolute_tau set, admits every point
    whose variance falls below tau instead. Labels come from the model's
    prediction on the candidate's full record.
    """
    if not candidates:
        return []
    base = child_seed(int(rng.integers(1 << 62)))
    scored = []
    for point in candidates:
        sub_rng = derive_rng(base, point.id)
        variance, _ = consistency_variance(model, point, cc, sub_rng)
        scored.append((variance, point.id, point))
    scored.sort(key=lambda item: (item[0], item[1]))
    if cc.absolute_tau is not None:
        chosen = [item for item in scored if item[0] < cc.absolute_tau]
    else:
        count = math.ceil(cc.admitted_fraction * len(candidates))
        chosen = scored[:count]
    return [(point, predict(model, point)) for _, _, point in chosen]


# ---------------------------------------------------------------- training steps

def _training_samples(pool: list[AdmittedPoint], use_params: bool):
    return [(featurize(entry.point, use_params), entry.labels) for entry in pool]


def retrain(
    model: Model,
    pool: list[AdmittedPoint],
    cfg: LearnerConfig,
    rng: np.random.Generator | None = None,
) -> Model:
    """Warm-start refit of the model on the accumulated labeled pool.

    Early stopping is monitored on a slice of the rows that carry
    measured labels. Synthetic rows reproduce the starting model's own
    predictions, so holding them out would freeze training in place.
    The monitor rows are featurized at the pool's smallest snapshot
    budget so the stopping rule sees the same feature noise level the
    gate will judge the model on.
    """
    if model.feature_spec is None:
        raise InvalidArgument("model carries no feature spec")
    if rng is None:
        rng = derive_rng(cfg.seed, TAG_RETRAIN)
    use_params = model.feature_spec.use_params
    samples = _training_samples(pool, use_params)
    measured = np.flatnonzero(np.array([e.admitted_at == 0 for e in pool]))
    hold = None
    monitor_samples = None
    if measured.size:
        k = max(1, int(round(cfg.holdout_fraction * measured.size)))
        hold = measured[rng.permutation(measured.size)[:k]]
        m_dep = min(e.point.record.m for e in pool)
        monitor_samples = []
        for i in hold:
            entry = pool[i]
            point = entry.point
            if point.record.m > m_dep:
                point = replace(point, record=point.record.take(np.arange(m_dep)))
            monitor_samples.append((featurize(point, use_params), entry.labels))
    return continue_training(
        model, samples, cfg, rng, monitor_idx=hold, monitor_samples=monitor_samples
    )


def validate(model: Model, val_points: list[DataPoint]) -> float:
    """R^2 of clamped predictions against the validation labels."""
    if len(val_points) < 2:
        raise InvalidArgument("validation needs at least two points")
    preds = [predict(model, p) for p in val_points]
    truths = [p.labels for p in val_points]
    if any(t is None for t in truths):
        raise InvalidArgument("validation points must carry labels")
    return r_squared(preds, truths)


def _train_loss(model: Model, pool: list[AdmittedPoint]) -> float:
    samples = _training_samples(pool, model.feature_spec.use_params)
    x = np.stack([f for f, _ in samples])
    y = np.stack([np.atleast_1d(l) for _, l in samples])
    diff = predict_features(model, x) - y
    return float((diff ** 2).sum() / x.shape[0])


# ---------------------------------------------------------------- iteration

def engine_iteration(
    state: EngineState,
    candidates: list[DataPoint],
    val_points: list[DataPoint],
    cc: ConsistencyConfig,
    lc: LearnerConfig,
    seed: int,
) -> tuple[EngineState, dict]:
    """One admission/retrain/gate round.

    Returns the next state and a report row. An empty candidate list
    advances t and changes nothing else. The gate accepts a retrained
    model iff validation R^2 does not drop below the last accepted
    value; otherwise the admitted fraction is tightened and the round
    retried, and after max_retries failures the previous model is kept
    and the state marked converged.
    """
    t_next = state.t + 1
    started = time.perf_counter()
    if state.converged:
        raise InvalidArgument("engine already converged")
    if not candidates:
        row = _report_row(
            t_next, True, 0, 0, state.admitted_fraction,
            state.val_history[-1], _train_loss(state.model, state.pool), started,
        )
        return replace(state, t=t_next), row

    fraction = cc.admitted_fraction
    last_val = state.val_history[-1]
    for retry in range(cc.max_retries + 1):
        cc_now = replace(cc, admitted_fraction=fraction)
        select_rng = derive_rng(seed, TAG_SELECT, t_next, retry)
        admitted = select_high_quality(state.model, candidates, cc_now, select_rng)
        new_pool = state.pool + [AdmittedPoint(p, labels, t_next) for p, labels in admitted]
        retrain_rng = derive_rng(seed, TAG_RETRAIN, t_next, retry)
        candidate_model = retrain(state.model, new_pool, lc, retrain_rng)
        val_r2 = validate(candidate_model, val_points)
        if val_r2 >= last_val:
            next_state = replace(
                state,
                t=t_next,
                pool=new_pool,
                model=candidate_model,
                val_history=state.val_history + [val_r2],
                admitted_fraction=cc.admitted_fraction,
            )
            row = _report_row(
                t_next, True, retry, len(admitted), fraction,
                val_r2, _train_loss(candidate_model, new_pool), started,
            )
            return next_state, row
        fraction *= cc.tighten_factor
    # Gate never passed: keep the previous model and stop admitting.
    next_state = replace(state, t=t_next, converged=True, admitted_fraction=fraction)
    row = _report_row(
        t_next, False, cc.max_retries, 0, fraction,
        val_r2, _train_loss(state.model, state.pool), started,
    )
    return next_state, row


def _report_row(t, accepted, retries, admitted_count, fraction, val_r2, train_loss, started):
    return {
        "t": t,
        "accepted": bool(accepted),
        "retries": int(retries),
        "admitted_count": int(admitted_count),
        "admitted_fraction": float(fraction),
        "val_r2": float(val_r2),
        "train_loss": float(train_loss),
        "wallclock_s": time.perf_counter() - started,
    }


# ---------------------------------------------------------------- full loop

def run_engine(
    ds: HybridDataset,
    T: int,
    cc: ConsistencyConfig,
    lc: LearnerConfig,
    paradigm: str = "sl",
) -> tuple[Model, EngineState, list[dict]]:
    """Baseline fit plus T gated self-labeling iterations.

    Admitted points leave the candidate pool; points that failed the
    gate stay eligible in later iterations. Never touches the test
    split. Returns the final model, the final state (which also keeps
    the baseline model), and one report row per round.
    """
    if T < 0:
        raise InvalidArgument("T must be >= 0")
    if paradigm not in PARADIGMS:
        raise InvalidArgument(f"paradigm must be one of {PARADIGMS}")
    if not ds.labeled:
        raise InvalidArgument("dataset has no labeled split")
    spec = feature_spec_for(ds.config)
    use_params = spec.use_params
    samples = [(featurize(p, use_params), p.labels) for p in ds.labeled]

    started = time.perf_counter()
    if paradigm == "sl":
        model = train_sl(samples, lc, spec)
    elif paradigm == "ssl":
        unlabeled_feats = [featurize(p, use_params) for p in ds.unlabeled]
        model = train_ssl(samples, unlabeled_feats, lc, spec)
    else:
        model = train_kernel(samples, lc, spec)

    pool = [AdmittedPoint(p, p.labels, 0) for p in ds.labeled]
    state = EngineState(
        t=0,
        pool=pool,
        model=model,
        val_history=[validate(model, ds.validation)],
        admitted_fraction=cc.admitted_fraction,
        baseline_model=model,
    )
    rows = [
        _report_row(
            0, True, 0, 0, cc.admitted_fraction,
            state.val_history[0], _train_loss(model, pool), started,
        )
    ]

    candidates = list(ds.unlabeled)
    for _ in range(T):
        if state.converged:
            break
        prev_t = state.t
        state, row = engine_iteration(state, candidates, ds.validation, cc, lc, lc.seed)
        rows.append(row)
        if row["accepted"] and row["admitted_count"]:
            taken = {entry.point.id for entry in state.pool if entry.admitted_at == state.t}
            candidates = [p for p in candidates if p.id not in taken]
        assert state.t == prev_t + 1
    return state.model, state, rows


def save_iteration_report(rows: list[dict], path):
    """Write report rows as a JSON array with a fixed column order."""
    canon = [{k: row[k] for k in REPORT_COLUMNS} for row in rows]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(canon, fh, separators=(",", ":"), indent=None)
        fh.write("\n")
