"""Round-based federated training: round-0 bootstrap, configure/select/report rounds, aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from fedsel import selection as sel
from fedsel.config import ExperimentConfig
from fedsel.data import DataBundle, build_bundle, load_csv, make_synthetic
from fedsel.nn import (
    Architecture,
    LabeledDataset,
    ModelParams,
    UnlabeledDataset,
    accuracy,
    ce_loss,
    init_params,
    sgd_train,
)

logger = logging.getLogger(__name__)

# stream tag for the server's own initialization, distinct from any client id
_SERVER_STREAM = 2**31 - 1


def derive_seed(*parts: int) -> int:
    """Independent 32-bit seed for a (master, round, client) style tuple."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainingHyper:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.001

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")


@dataclass
class ClientRecord:
    id: int
    data: LabeledDataset
    last_uploaded: ModelParams | None = None
    current_value: float = float("nan")


@dataclass
class ServerState:
    global_params: ModelParams
    registry: list[ModelParams]
    unlabeled: UnlabeledDataset
    test: LabeledDataset
    num_rounds: int
    t: int = 1


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    num_selected: int
    participation_ratio: float
    decision: sel.SelectionDecision
    scores: sel.ScoreReport | None = None
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def aggregate(params_list: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Weighted parameter average, summed in list order."""
    if len(params_list) == 0:
        raise ValueError("nothing to aggregate")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(params_list),):
        raise ValueError(f"{len(params_list)} models but weights of shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all aggregation weights are zero")
    arch = params_list[0].arch
    acc = np.zeros(arch.num_params)
    for p, wk in zip(params_list, w):
        if p.arch != arch:
            raise ValueError("cannot aggregate models with different architectures")
        if wk > 0:
            acc += wk * p.weights
    return ModelParams(arch, acc / total)


def round_zero(
    clients: Sequence[ClientRecord],
    arch: Architecture,
    seed: int,
    unlabeled: UnlabeledDataset,
    test: LabeledDataset,
    num_rounds: int,
    global_init: str = "fresh",
) -> ServerState:
    """Every client uploads a freshly initialized model; the registry starts from those."""
    if len(clients) == 0:
        raise ValueError("need at least one client")
    registry = []
    for c in clients:
        c.last_uploaded = init_params(arch, derive_seed(seed, 0, c.id))
        registry.append(c.last_uploaded)
    if global_init == "fresh":
        global_params = init_params(arch, derive_seed(seed, 0, _SERVER_STREAM))
    elif global_init == "client_mean":
        global_params = aggregate(registry, np.ones(len(registry)))
    else:
        raise ValueError(f"unknown global_init {global_init!r}")
    return ServerState(global_params, registry, unlabeled, test, num_rounds, t=1)


def client_report(
    client: ClientRecord, global_params: ModelParams, hyper: TrainingHyper, seed: int
) -> tuple[ModelParams, float]:
    """Value on the received global model first, then local training from it."""
    value = ce_loss(global_params, client.data)
    trained = sgd_train(global_params, client.data, hyper.epochs, hyper.batch_size, hyper.lr, seed)
    return trained, value


@lru_cache(maxsize=64)
def _tau_series(shape: str, coef: float | None, cap: float, horizon: int) -> tuple[float, ...]:
    return tuple(sel.threshold_series(sel.ThresholdSchedule(shape, coef, cap), horizon))


def threshold_for_round(schedule: sel.ThresholdSchedule, round_no: int, num_rounds: int) -> float:
    """tau for global round ``round_no`` in [1, T].

    The schedule is indexed by the round number itself over [0, T]; index 0 is the
    bootstrap round, which never selects. Round 1 therefore uses 0.2 and round 2
    already 0.3 under the linear shape.
    """
    if not 1 <= round_no <= num_rounds:
        raise ValueError(f"round {round_no} outside [1, {num_rounds}]")
    return _tau_series(schedule.shape, schedule.coef, schedule.cap, num_rounds + 1)[round_no]


def select_clients(
    policy: sel.SelectionPolicy,
    state: ServerState,
    values: np.ndarray,
) -> tuple[sel.SelectionDecision, sel.ScoreReport | None]:
    """Selection step for the current round; returns a decision carrying its weights."""
    k = len(state.registry)
    t_idx = state.t - 1
    if policy.kind == "fedavg_all":
        return sel.baseline_select_all(k), None
    if policy.kind == "cho_loss_rank":
        counts = policy.cho_counts or sel.default_cho_counts(state.num_rounds, k)
        return sel.baseline_cho_select(values, counts[t_idx]), None

    report = sel.score_report(state.t, state.registry, state.unlabeled, values)
    if policy.kind == "fedabc_threshold":
        sched = policy.schedule
        tau = threshold_for_round(sched, state.t, state.num_rounds)
        decision = sel.select_by_threshold(report.scores, tau)
    else:
        eta = sel.eta_at(t_idx, state.num_rounds, policy.eta_power)
        decision = sel.select_by_lambda(report.scores, policy.lam, eta)
    if policy.force_all:
        decision = sel.SelectionDecision(np.ones(k, dtype=np.int64), threshold=decision.threshold)
    if policy.weighting == "uniform":
        w = sel.uniform_weights(decision.mask)
    else:
        w = sel.aggregation_weights(report.scores, decision.mask)
    return decision.with_weights(w), report


def run_round(
    state: ServerState,
    clients: Sequence[ClientRecord],
    policy: sel.SelectionPolicy,
    hyper: TrainingHyper,
    seed: int,
    workers: int = 1,
) -> tuple[ServerState, RoundMetrics]:
    """One configure / select / report cycle. ``state`` is not mutated; clients are."""
    if state.t < 1:
        raise ValueError("run round_zero first")
    if state.t > state.num_rounds:
        raise ValueError(f"round {state.t} exceeds the configured {state.num_rounds} rounds")
    k = len(clients)
    if k != len(state.registry):
        raise ValueError(f"{k} clients but registry holds {len(state.registry)} models")
    g = state.global_params

    # configure: everyone evaluates the broadcast model
    values = np.array([ce_loss(g, c.data) for c in clients])
    for c, v in zip(clients, values):
        c.current_value = float(v)

    decision, report = select_clients(policy, state, values)
    chosen = [i for i in range(k) if decision.mask[i]]

    # report: selected clients train from the broadcast model
    def train(i: int) -> ModelParams:
        return sgd_train(g, clients[i].data, hyper.epochs, hyper.batch_size, hyper.lr,
                         derive_seed(seed, state.t, clients[i].id))

    if workers > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trained = list(pool.map(train, chosen))
    else:
        trained = [train(i) for i in chosen]

    registry = list(state.registry)
    for i, p in zip(chosen, trained):
        registry[i] = p
        clients[i].last_uploaded = p
    new_global = aggregate(trained, decision.weights[chosen])

    acc = accuracy(new_global, state.test)
    n_sel = len(chosen)
    metrics = RoundMetrics(state.t, acc, n_sel, n_sel / k, decision, report, values)
    logger.debug("round %d: selected %d/%d acc=%.4f", state.t, n_sel, k, acc)
    return replace(state, global_params=new_global, registry=registry, t=state.t + 1), metrics


def policy_from_config(cfg: ExperimentConfig) -> sel.SelectionPolicy:
    return sel.SelectionPolicy(
        kind=cfg.policy,
        lam=cfg.lam,
        eta_power=cfg.eta_power,
        schedule=sel.ThresholdSchedule(cfg.schedule, cfg.schedule_coef, cfg.tau_cap),
        cho_counts=tuple(cfg.cho_counts) if cfg.cho_counts else None,
    )


def make_bundle(cfg: ExperimentConfig, seed: int) -> tuple[DataBundle, int]:
    """Data for one repeat; depends only on the data fields and ``seed``. Returns (bundle, N)."""
    if cfg.data_csv:
        data = load_csv(cfg.data_csv)
        num_classes = max(int(data.labels.max()) + 1, 2)
    else:
        data = make_synthetic(cfg.num_classes, cfg.input_dim, cfg.samples_per_class,
                              cfg.class_separation, derive_seed(seed, 1))
        num_classes = cfg.num_classes
    bundle = build_bundle(data, cfg.num_clients, cfg.alpha, cfg.n_unlabeled, cfg.n_test,
                          derive_seed(seed, 2))
    return bundle, num_classes


def run_experiment(
    cfg: ExperimentConfig,
    run_index: int = 0,
    policy: sel.SelectionPolicy | None = None,
) -> list[RoundMetrics]:
    """round_zero followed by T rounds; every random stream derives from master_seed + run_index."""
    seed = cfg.master_seed + run_index
    bundle, num_classes = make_bundle(cfg, seed)
    arch = Architecture(bundle.server_test.features.shape[1], num_classes, cfg.hidden_dim)
    clients = [ClientRecord(i, d) for i, d in enumerate(bundle.client_sets)]
    state = round_zero(clients, arch, seed, bundle.server_unlabeled, bundle.server_test,
                       cfg.num_rounds, cfg.global_init)
    hyper = TrainingHyper(cfg.local_epochs, cfg.batch_size, cfg.lr)
    policy = policy or policy_from_config(cfg)
    history = []
    for _ in range(cfg.num_rounds):
        state, m = run_round(state, clients, policy, hyper, seed, cfg.workers)
        history.append(m)
    return history
