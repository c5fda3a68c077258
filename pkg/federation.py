"""
Federated training: client selection, local training dispatch, aggregation.

Each round the server

1. selects ``selection_count(C, cdr)`` clients uniformly without replacement,
2. sends them the global model; every selected client trains
   ``local_epochs_per_round`` epochs on its training split (FedProx clients
   add a proximal term anchored at the round-start global model),
3. aggregates the returned models with the configured strategy:

   * ``fedavg`` / ``fedprox``: weights ``N_i / N`` over the clients selected
     this round;
   * ``feddropoutavg``: one independent survival mask per client is drawn
     server-side, and every parameter index is averaged over its surviving
     clients with weights ``N_i / N_kl``.  Indices where every client was
     dropped keep the previous global value.

With ``fdr = 0`` the dropout path performs the same floating point
operations in the same order as ``fedavg`` and is therefore bit-identical.

All randomness is keyed by (seed, round, client, purpose), so clients may
train concurrently without changing results.  ``N_i`` is the size of the
client's training split.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from config import defaults
from data import ClientDataset, DatasetSplit, pool_split
from errors import ConfigError, CongruenceError
from models import (
    LossConfig,
    ModelSpec,
    OptimizerState,
    class_weights_for,
    eval_loss,
    init_params,
    local_train_epoch,
)
from param_core import (
    ParameterSet,
    RngStream,
    axpy,
    axpy_elementwise,
    draw_mask,
    new_zeroed,
    require_congruent,
    select,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("fedavg", "fedprox", "feddropoutavg")
SELECTION_EPS = 1e-9


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str
    fdr: float = 0.0
    cdr: float = 0.0
    prox_mu: float = 0.0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"invalid_strategy: {self.strategy!r} not in {STRATEGIES}")
        if not 0.0 <= self.fdr < 1.0:
            raise ConfigError(f"invalid_fdr: {self.fdr} not in [0, 1)")
        if not 0.0 <= self.cdr < 1.0:
            raise ConfigError(f"invalid_cdr: {self.cdr} not in [0, 1)")
        if not (self.prox_mu >= 0 and math.isfinite(self.prox_mu)):
            raise ConfigError(f"invalid_prox_mu: {self.prox_mu}")
        if self.strategy in ("fedavg", "fedprox") and self.fdr != 0:
            raise ConfigError(f"invalid_fdr: {self.strategy} requires fdr=0, got {self.fdr}")
        if self.strategy in ("fedavg", "feddropoutavg") and self.prox_mu != 0:
            raise ConfigError(f"invalid_prox_mu: {self.strategy} requires prox_mu=0, got {self.prox_mu}")
        if self.strategy == "fedprox" and self.prox_mu == 0:
            logger.warning("FEDPROX_ZERO_MU fedprox with prox_mu=0 trains exactly like fedavg")

    @classmethod
    def fedavg(cls, cdr: float = 0.0) -> StrategyConfig:
        return cls("fedavg", cdr=cdr)

    @classmethod
    def fedprox(cls, prox_mu: float = defaults.PROX_MU, cdr: float = 0.0) -> StrategyConfig:
        return cls("fedprox", cdr=cdr, prox_mu=prox_mu)

    @classmethod
    def feddropoutavg(cls, fdr: float = defaults.FDR, cdr: float = defaults.CDR) -> StrategyConfig:
        return cls("feddropoutavg", fdr=fdr, cdr=cdr)


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = defaults.LR0
    momentum: float = defaults.MOMENTUM
    weight_decay: float = defaults.WEIGHT_DECAY
    halve_every: int = defaults.HALVE_EVERY

    def fresh_state(self, template: ParameterSet) -> OptimizerState:
        return OptimizerState.fresh(
            template,
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            halve_every=self.halve_every,
        )


@dataclass(frozen=True)
class FederationConfig:
    clients: tuple[str, ...]
    model: ModelSpec
    strategy: StrategyConfig = field(default_factory=StrategyConfig.fedavg)
    rounds: int = defaults.ROUNDS
    local_epochs_per_round: int = defaults.LOCAL_EPOCHS_PER_ROUND
    batch_size: int = 32
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    workers: int = 1

    def __post_init__(self) -> None:
        clients = tuple(self.clients)
        object.__setattr__(self, "clients", clients)
        if not clients:
            raise ConfigError("invalid_clients: at least one client is required")
        if len(set(clients)) != len(clients):
            raise ConfigError(f"invalid_clients: duplicate ids in {clients}")
        if self.rounds < 1:
            raise ConfigError(f"invalid_rounds: {self.rounds}")
        if self.local_epochs_per_round < 1:
            raise ConfigError(f"invalid_local_epochs_per_round: {self.local_epochs_per_round}")
        if self.batch_size < 1:
            raise ConfigError(f"invalid_batch_size: {self.batch_size}")
        if self.workers < 1:
            raise ConfigError(f"invalid_workers: {self.workers}")

    @property
    def total_epochs(self) -> int:
        return self.rounds * self.local_epochs_per_round

    def initial_model(self) -> ParameterSet:
        return init_params(self.model, RngStream(self.seed, purpose="init"))


@dataclass(frozen=True, eq=False)
class ContributionWeights:
    """Per-parameter client weights ``alpha[l][i, k]`` and survivor mass ``N[l][k]``."""

    alpha: tuple[np.ndarray, ...]
    survivor_mass: tuple[np.ndarray, ...]

    @property
    def fallback_indices(self) -> int:
        return sum(int(np.count_nonzero(mass == 0)) for mass in self.survivor_mass)

    @property
    def aggregated_parameters(self) -> int:
        return sum(int(np.count_nonzero(alpha)) for alpha in self.alpha)


@dataclass
class RoundRecord:
    round: int
    selected_client_ids: list[str]
    client_stats: dict[str, dict[str, float]]
    checksum: str
    total_val_loss: float
    wall_time_sec: float
    samples_processed: int
    uplink_parameters: int
    aggregated_parameters: int
    fallback_indices: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    params: ParameterSet
    n_samples: int
    train_loss: float


@dataclass(frozen=True)
class ServerState:
    cfg: FederationConfig
    global_params: ParameterSet
    train_splits: Mapping[str, DatasetSplit]
    val_splits: Mapping[str, DatasetSplit]
    loss_configs: Mapping[str, LossConfig]

    @classmethod
    def create(
        cls,
        cfg: FederationConfig,
        datasets: Mapping[str, ClientDataset],
        initial: Optional[ParameterSet] = None,
    ) -> ServerState:
        train_splits: dict[str, DatasetSplit] = {}
        val_splits: dict[str, DatasetSplit] = {}
        loss_configs: dict[str, LossConfig] = {}
        prox_mu = cfg.strategy.prox_mu if cfg.strategy.strategy == "fedprox" else 0.0
        for client_id in cfg.clients:
            if client_id not in datasets:
                raise ConfigError(f"unknown_client: {client_id}")
            train_splits[client_id] = datasets[client_id].split("train")
            val_splits[client_id] = datasets[client_id].split("val")
            if not len(train_splits[client_id]) or not len(val_splits[client_id]):
                raise ConfigError(f"empty_split: client={client_id} needs train and val samples")
            loss_configs[client_id] = LossConfig(class_weights_for(train_splits[client_id].labels), prox_mu)
        global_params = initial if initial is not None else cfg.initial_model()
        return cls(cfg, global_params, train_splits, val_splits, loss_configs)

    def validation_loss(self, params: ParameterSet) -> float:
        total = 0.0
        for client_id in self.cfg.clients:
            weights = LossConfig(self.loss_configs[client_id].class_weights)
            total += eval_loss(params, self.val_splits[client_id], weights)
        return total


def selection_count(C: int, cdr: float) -> int:
    if C < 1:
        raise ConfigError(f"invalid_client_count: {C}")
    if not 0.0 <= cdr < 1.0:
        raise ConfigError(f"invalid_cdr: {cdr} not in [0, 1)")
    return max(1, math.floor(C * (1.0 - cdr) + SELECTION_EPS))


def select_clients(clients: Sequence[str], cdr: float, rng: RngStream) -> list[str]:
    """Uniform subset of ``selection_count`` clients, returned in canonical order."""
    clients = list(clients)
    count = selection_count(len(clients), cdr)
    if count == len(clients):
        return clients
    chosen = rng.generator().choice(len(clients), size=count, replace=False)
    return [clients[i] for i in sorted(int(i) for i in chosen)]


def _validate_models(models: Sequence[tuple[ParameterSet, int]]) -> ParameterSet:
    if not models:
        raise ConfigError("empty_model_list")
    template = models[0][0]
    for params, n_samples in models:
        require_congruent(template, params)
        if n_samples <= 0:
            raise ConfigError(f"invalid_sample_count: {n_samples}")
    return template


def aggregate_fedavg(models: Sequence[tuple[ParameterSet, int]]) -> ParameterSet:
    template = _validate_models(models)
    total = float(sum(n_samples for _, n_samples in models))
    aggregate = new_zeroed(template)
    for params, n_samples in models:
        aggregate = axpy(aggregate, n_samples / total, params)
    return aggregate


def aggregate_feddropoutavg(
    models: Sequence[tuple[ParameterSet, int]],
    fdr: float,
    prev_global: ParameterSet,
    rng: RngStream,
    client_indices: Optional[Sequence[int]] = None,
) -> tuple[ParameterSet, ContributionWeights]:
    """Average each parameter over the clients whose mask kept it.

    ``client_indices`` keys each client's mask stream; it defaults to the
    position in ``models``.
    """
    template = _validate_models(models)
    require_congruent(template, prev_global)
    if client_indices is None:
        client_indices = range(len(models))
    if len(client_indices) != len(models):
        raise CongruenceError(f"client_index_mismatch: {len(client_indices)} != {len(models)}")

    masks = [
        draw_mask(params, fdr, rng.derive(client_index=int(index)))
        for (params, _), index in zip(models, client_indices)
    ]
    survivor_mass = [np.zeros(layer.size) for layer in template]
    for (_, n_samples), mask in zip(models, masks):
        survivor_mass = [mass + keep * float(n_samples) for mass, keep in zip(survivor_mass, mask.masks)]

    aggregate = new_zeroed(template)
    alphas: list[list[np.ndarray]] = [[] for _ in template]
    for (params, n_samples), mask in zip(models, masks):
        coefficients = []
        for layer_index, (mass, keep) in enumerate(zip(survivor_mass, mask.masks)):
            alpha = np.divide(keep * float(n_samples), mass, out=np.zeros_like(mass), where=mass > 0)
            coefficients.append(alpha)
            alphas[layer_index].append(alpha)
        aggregate = axpy_elementwise(aggregate, coefficients, params)

    aggregate = select([mass > 0 for mass in survivor_mass], aggregate, prev_global)
    weights = ContributionWeights(
        alpha=tuple(np.vstack(per_layer) for per_layer in alphas),
        survivor_mass=tuple(survivor_mass),
    )
    if weights.fallback_indices:
        logger.info("AGGREGATION_FALLBACK indices=%s clients=%s fdr=%s", weights.fallback_indices, len(models), fdr)
    return aggregate, weights


def _client_update(state: ServerState, round_index: int, client_id: str) -> ClientUpdate:
    cfg = state.cfg
    client_index = cfg.clients.index(client_id)
    loss_cfg = state.loss_configs[client_id]
    anchor = state.global_params if loss_cfg.prox_mu > 0 else None
    # Velocity starts from zero every round; only parameters travel.
    opt = cfg.optimizer.fresh_state(state.global_params)
    params = state.global_params
    losses = []
    for local_epoch in range(cfg.local_epochs_per_round):
        epoch = round_index * cfg.local_epochs_per_round + local_epoch
        params, loss, opt = local_train_epoch(
            params,
            state.train_splits[client_id],
            loss_cfg,
            opt,
            epoch,
            cfg.batch_size,
            RngStream(cfg.seed, round_index=epoch, client_index=client_index, purpose="shuffle"),
            anchor,
        )
        losses.append(loss)
    return ClientUpdate(client_id, params, len(state.train_splits[client_id]), float(np.mean(losses)))


def _train_selected(state: ServerState, round_index: int, selected: Sequence[str]) -> list[ClientUpdate]:
    workers = min(state.cfg.workers, len(selected))
    if workers <= 1:
        return [_client_update(state, round_index, client_id) for client_id in selected]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda client_id: _client_update(state, round_index, client_id), selected))


def run_round(state: ServerState, round_index: int) -> tuple[ParameterSet, RoundRecord]:
    """Run round ``round_index`` (0-based); the record carries the 1-based round."""
    started = time.perf_counter()
    cfg = state.cfg
    strategy = cfg.strategy
    selected = select_clients(cfg.clients, strategy.cdr, RngStream(cfg.seed, round_index=round_index, purpose="select"))
    updates = _train_selected(state, round_index, selected)
    models = [(update.params, update.n_samples) for update in updates]

    uplink = len(updates) * state.global_params.num_parameters
    if strategy.strategy == "feddropoutavg":
        new_global, weights = aggregate_feddropoutavg(
            models,
            strategy.fdr,
            state.global_params,
            RngStream(cfg.seed, round_index=round_index, purpose="mask"),
            client_indices=[cfg.clients.index(client_id) for client_id in selected],
        )
        aggregated, fallback = weights.aggregated_parameters, weights.fallback_indices
    else:
        new_global = aggregate_fedavg(models)
        aggregated, fallback = uplink, 0

    record = RoundRecord(
        round=round_index + 1,
        selected_client_ids=list(selected),
        client_stats={
            update.client_id: {"train_loss": update.train_loss, "n_samples": update.n_samples} for update in updates
        },
        checksum=new_global.checksum_hex(),
        total_val_loss=state.validation_loss(new_global),
        wall_time_sec=time.perf_counter() - started,
        samples_processed=sum(update.n_samples for update in updates) * cfg.local_epochs_per_round,
        uplink_parameters=uplink,
        aggregated_parameters=aggregated,
        fallback_indices=fallback,
    )
    logger.info(
        "ROUND_DONE strategy=%s round=%s selected=%s checksum=%s val_loss=%.6f",
        strategy.strategy,
        record.round,
        len(selected),
        record.checksum,
        record.total_val_loss,
    )
    return new_global, record


def run_federation(
    cfg: FederationConfig,
    datasets: Mapping[str, ClientDataset],
    *,
    initial: Optional[ParameterSet] = None,
    on_round: Optional[Callable[[RoundRecord], None]] = None,
) -> tuple[ParameterSet, list[RoundRecord]]:
    """Train for ``cfg.rounds`` rounds; keep the global with the lowest total validation loss."""
    state = ServerState.create(cfg, datasets, initial)
    logger.info(
        "FEDERATION_START strategy=%s clients=%s rounds=%s fdr=%s cdr=%s prox_mu=%s init_checksum=%s",
        cfg.strategy.strategy,
        len(cfg.clients),
        cfg.rounds,
        cfg.strategy.fdr,
        cfg.strategy.cdr,
        cfg.strategy.prox_mu,
        state.global_params.checksum_hex(),
    )
    best_model: Optional[ParameterSet] = None
    best_loss = math.inf
    best_round = 0
    history: list[RoundRecord] = []
    for round_index in range(cfg.rounds):
        new_global, record = run_round(state, round_index)
        state = replace(state, global_params=new_global)
        history.append(record)
        if on_round is not None:
            on_round(record)
        if best_model is None or record.total_val_loss < best_loss:
            best_model, best_loss, best_round = new_global, record.total_val_loss, record.round
    logger.info("BEST_MODEL strategy=%s round=%s val_loss=%.6f", cfg.strategy.strategy, best_round, best_loss)
    assert best_model is not None
    return best_model, history


def _train_with_selection(
    cfg: FederationConfig,
    params: ParameterSet,
    train: DatasetSplit,
    val: DatasetSplit,
    client_index: int,
) -> tuple[ParameterSet, int, float]:
    if not len(train) or not len(val):
        raise ConfigError("empty_split: training needs train and val samples")
    loss_cfg = LossConfig(class_weights_for(train.labels))
    opt = cfg.optimizer.fresh_state(params)
    best_model, best_loss, best_epoch = params, math.inf, -1
    for epoch in range(cfg.total_epochs):
        params, _, opt = local_train_epoch(
            params,
            train,
            loss_cfg,
            opt,
            epoch,
            cfg.batch_size,
            RngStream(cfg.seed, round_index=epoch, client_index=client_index, purpose="shuffle"),
        )
        val_loss = eval_loss(params, val, loss_cfg)
        if best_epoch < 0 or val_loss < best_loss:
            best_model, best_loss, best_epoch = params, val_loss, epoch
    return best_model, best_epoch, best_loss


def run_centralized(
    cfg: FederationConfig,
    datasets: Mapping[str, ClientDataset],
    *,
    initial: Optional[ParameterSet] = None,
) -> ParameterSet:
    """Train one model on the pooled training splits; select the epoch by pooled validation loss."""
    train = pool_split(datasets, cfg.clients, "train")
    val = pool_split(datasets, cfg.clients, "val")
    params = initial if initial is not None else cfg.initial_model()
    best_model, best_epoch, best_loss = _train_with_selection(cfg, params, train, val, client_index=0)
    logger.info(
        "CENTRALIZED_DONE samples=%s best_epoch=%s val_loss=%.6f checksum=%s",
        len(train),
        best_epoch + 1,
        best_loss,
        best_model.checksum_hex(),
    )
    return best_model


def run_local_baselines(
    cfg: FederationConfig,
    datasets: Mapping[str, ClientDataset],
    *,
    initial: Optional[ParameterSet] = None,
) -> dict[str, ParameterSet]:
    """Train one isolated model per training center on its own splits."""
    params = initial if initial is not None else cfg.initial_model()
    models: dict[str, ParameterSet] = {}
    for client_index, client_id in enumerate(cfg.clients):
        if client_id not in datasets:
            raise ConfigError(f"unknown_client: {client_id}")
        dataset = datasets[client_id]
        best_model, best_epoch, best_loss = _train_with_selection(
            cfg, params, dataset.split("train"), dataset.split("val"), client_index
        )
        models[client_id] = best_model
        logger.info(
            "LOCAL_TRAIN_DONE center_id=%s best_epoch=%s val_loss=%.6f", client_id, best_epoch + 1, best_loss
        )
    return models


def append_round_record(path: Path, record: RoundRecord) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(record.to_json() + "\n")
