"""
Command-line entry point and experiment orchestration.

Usage::

    fedsim run   --config experiment.json [--seed N] [--out DIR]
    fedsim grid  --config experiment.json [--seed N] [--out DIR]
    fedsim kfold --config experiment.json [--seed N] [--out DIR]

``run`` trains every configured method on one layout, ``grid`` sweeps the
FedDropoutAvg (cdr, fdr) grid and the optional FedProx mu grid, and
``kfold`` rotates groups of centers through the independent role.

Every method of one run shares the data, the layout, the initial model and
the optimizer recipe.  Output files::

    output_dir/config.resolved
    output_dir/centers.csv
    output_dir/reports.csv
    output_dir/summary.csv
    output_dir/cross_center.csv      (when "local" is configured)
    output_dir/grid.csv, mu_grid.csv (grid command)
    output_dir/{method}/rounds.jsonl
    output_dir/{method}/model.json

Exit codes: 0 on success, 2 for configuration or input schema errors, 1 for
any other failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import pandas as pd

import metrics
import notifications
from config import defaults, runtime
from data import (
    ClientDataset,
    FederationLayout,
    SynthConfig,
    default_layout,
    describe_federation,
    generate_federation,
    kfold_center_rotation,
    load_csv_federation,
)
from errors import ConfigError, SchemaError
from federation import (
    FederationConfig,
    OptimizerConfig,
    RoundRecord,
    StrategyConfig,
    append_round_record,
    run_centralized,
    run_federation,
    run_local_baselines,
)
from models import ModelSpec, init_params
from param_core import ParameterSet, RngStream, save_parameter_set

logger = logging.getLogger(__name__)

METHODS = ("centralized", "local", "fedavg", "fedprox", "feddropoutavg")
FEDERATED_METHODS = ("fedavg", "fedprox", "feddropoutavg")
METHOD_PARAMS: dict[str, dict[str, float]] = {
    "centralized": {},
    "local": {},
    "fedavg": {"cdr": 0.0},
    "fedprox": {"prox_mu": defaults.PROX_MU, "cdr": 0.0},
    "feddropoutavg": {"fdr": defaults.FDR, "cdr": defaults.CDR},
}

TOP_LEVEL_KEYS = {"seed", "output_dir", "data", "layout", "federation", "methods", "grid", "kfold"}
FEDERATION_KEYS = {"rounds", "local_epochs_per_round", "batch_size", "workers", "model", "optimizer"}
MODEL_KEYS = {"arch", "hidden_dims", "activation"}
OPTIMIZER_KEYS = {"lr0", "momentum", "weight_decay", "halve_every"}
GRID_KEYS = {"cdr_values", "fdr_values", "mu_values"}
GRID_COLUMNS = ["cdr", "fdr", "total_val_loss", "mean_f1_local", "mean_f1_independent", "best_checksum", "selected"]
MU_GRID_COLUMNS = ["prox_mu", "total_val_loss", "mean_f1_local", "mean_f1_independent", "best_checksum", "selected"]


@dataclass(frozen=True)
class GridConfig:
    cdr_values: tuple[float, ...] = ()
    fdr_values: tuple[float, ...] = ()
    mu_values: tuple[float, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: Path
    batch_size: int
    arch: str
    methods: Mapping[str, Mapping[str, float]]
    synthetic: Optional[SynthConfig] = None
    csv_path: Optional[Path] = None
    n_training_centers: Optional[int] = None
    rounds: int = defaults.ROUNDS
    local_epochs_per_round: int = defaults.LOCAL_EPOCHS_PER_ROUND
    workers: int = 1
    hidden_dims: tuple[int, ...] = ()
    activation: str = "relu"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    grid: Optional[GridConfig] = None
    kfold: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.synthetic is None) == (self.csv_path is None):
            raise ConfigError("invalid_data: exactly one of data.synthetic and data.csv is required")
        if not self.methods:
            raise ConfigError("invalid_methods: at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"invalid_methods: unknown method {unknown[0]!r}")
        if self.grid is not None:
            if (self.grid.cdr_values or self.grid.fdr_values) and "feddropoutavg" not in self.methods:
                raise ConfigError("invalid_grid: cdr/fdr grid requires feddropoutavg among the methods")
            if self.grid.mu_values and "fedprox" not in self.methods:
                raise ConfigError("invalid_grid: mu grid requires fedprox among the methods")
        if self.kfold is not None and self.kfold < 2:
            raise ConfigError(f"invalid_kfold: k={self.kfold} must be >= 2")
        for method in self.methods:
            self.strategy_for(method)

    @property
    def method_names(self) -> list[str]:
        return [m for m in METHODS if m in self.methods]

    def strategy_for(self, method: str, **overrides: float) -> StrategyConfig:
        if method not in FEDERATED_METHODS:
            return StrategyConfig.fedavg()
        params = {**self.methods.get(method, METHOD_PARAMS[method]), **overrides}
        return StrategyConfig(method, **params)

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(self.arch, input_dim, self.hidden_dims, self.activation)

    def federation_config(
        self, layout: FederationLayout, strategy: StrategyConfig, input_dim: int
    ) -> FederationConfig:
        return FederationConfig(
            clients=layout.training_centers,
            model=self.model_spec(input_dim),
            strategy=strategy,
            rounds=self.rounds,
            local_epochs_per_round=self.local_epochs_per_round,
            batch_size=self.batch_size,
            seed=self.seed,
            optimizer=self.optimizer,
            workers=self.workers,
        )

    def resolved(self) -> dict[str, Any]:
        data: dict[str, Any]
        if self.synthetic is not None:
            data = {"synthetic": asdict(self.synthetic)}
        else:
            data = {"csv": str(self.csv_path)}
        payload: dict[str, Any] = {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "data": data,
            "layout": {"n_training_centers": self.n_training_centers},
            "federation": {
                "rounds": self.rounds,
                "local_epochs_per_round": self.local_epochs_per_round,
                "batch_size": self.batch_size,
                "workers": self.workers,
                "model": {"arch": self.arch, "hidden_dims": list(self.hidden_dims), "activation": self.activation},
                "optimizer": asdict(self.optimizer),
            },
            "methods": {name: dict(self.methods[name]) for name in self.method_names},
        }
        if self.grid is not None:
            payload["grid"] = {key: list(values) for key, values in asdict(self.grid).items()}
        if self.kfold is not None:
            payload["kfold"] = self.kfold
        return payload


@dataclass
class ExperimentResult:
    reports: dict[str, list[metrics.EvalReport]]
    summary: metrics.SummaryTable
    best_models: dict[str, ParameterSet]
    histories: dict[str, list[RoundRecord]]


def _check_keys(section: Any, allowed: set[str], where: str) -> dict[str, Any]:
    if not isinstance(section, dict):
        raise ConfigError(f"invalid_section: {where} must be an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown_key: {where}.{unknown[0]}")
    return section


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"invalid_value: {where}={value!r} must be an integer")
    return value


def _as_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"invalid_value: {where}={value!r} must be a number")
    return float(value)


def _float_list(values: Any, where: str) -> tuple[float, ...]:
    if not isinstance(values, list):
        raise ConfigError(f"invalid_value: {where} must be a list")
    return tuple(_as_float(v, f"{where}[{i}]") for i, v in enumerate(values))


def _require(section: dict[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"missing_key: {where}.{key}")
    return section[key]


def _parse_synthetic(raw: Any, seed: int, *, override_seed: bool = False) -> SynthConfig:
    known = {f.name for f in fields(SynthConfig)}
    section = dict(_check_keys(raw, known, "data.synthetic"))
    if override_seed:
        section["seed"] = seed
    else:
        section.setdefault("seed", seed)
    try:
        return SynthConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"invalid_value: data.synthetic: {exc}") from exc


def _parse_methods(raw: Any) -> dict[str, dict[str, float]]:
    section = _check_keys(raw, set(METHODS), "methods")
    methods: dict[str, dict[str, float]] = {}
    for name, params in section.items():
        defaults_for = METHOD_PARAMS[name]
        params = _check_keys(params if params is not None else {}, set(defaults_for), f"methods.{name}")
        methods[name] = {
            key: _as_float(params.get(key, default), f"methods.{name}.{key}") for key, default in defaults_for.items()
        }
    return methods


def _parse_grid(raw: Any, methods: Mapping[str, Any]) -> GridConfig:
    """An empty grid object selects the default grids of the configured methods."""
    section = _check_keys(raw, GRID_KEYS, "grid")
    if section:
        grid = GridConfig(**{key: _float_list(values, f"grid.{key}") for key, values in section.items()})
    else:
        grid = GridConfig(
            cdr_values=defaults.CDR_GRID if "feddropoutavg" in methods else (),
            fdr_values=defaults.FDR_GRID if "feddropoutavg" in methods else (),
            mu_values=defaults.PROX_MU_GRID if "fedprox" in methods else (),
        )
    if bool(grid.cdr_values) != bool(grid.fdr_values):
        raise ConfigError("invalid_grid: cdr_values and fdr_values go together")
    if not (grid.cdr_values or grid.mu_values):
        raise ConfigError("invalid_grid: no grid values")
    return grid


def parse_config(
    raw: Any,
    *,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """Validate a decoded JSON document; ``seed``/``output_dir`` override the file."""
    raw = _check_keys(raw, TOP_LEVEL_KEYS, "config")
    resolved_seed = seed if seed is not None else _as_int(_require(raw, "seed", "config"), "seed")
    resolved_out = output_dir if output_dir is not None else _require(raw, "output_dir", "config")
    if not isinstance(resolved_out, str) or not resolved_out:
        raise ConfigError("invalid_value: output_dir must be a non-empty string")

    data = _check_keys(_require(raw, "data", "config"), {"synthetic", "csv"}, "data")
    synthetic = None
    if "synthetic" in data:
        synthetic = _parse_synthetic(data["synthetic"], resolved_seed, override_seed=seed is not None)
    csv_path = Path(data["csv"]) if "csv" in data else None

    layout = _check_keys(raw.get("layout", {}), {"n_training_centers"}, "layout")
    n_training = layout.get("n_training_centers")
    if n_training is not None:
        n_training = _as_int(n_training, "layout.n_training_centers")

    federation = _check_keys(_require(raw, "federation", "config"), FEDERATION_KEYS, "federation")
    model = _check_keys(_require(federation, "model", "federation"), MODEL_KEYS, "federation.model")
    optimizer = _check_keys(federation.get("optimizer", {}), OPTIMIZER_KEYS, "federation.optimizer")
    workers = federation.get("workers")
    methods = _parse_methods(_require(raw, "methods", "config"))

    try:
        return ExperimentConfig(
            seed=resolved_seed,
            output_dir=Path(resolved_out),
            batch_size=_as_int(_require(federation, "batch_size", "federation"), "federation.batch_size"),
            arch=str(_require(model, "arch", "federation.model")),
            methods=methods,
            synthetic=synthetic,
            csv_path=csv_path,
            n_training_centers=n_training,
            rounds=_as_int(federation.get("rounds", defaults.ROUNDS), "federation.rounds"),
            local_epochs_per_round=_as_int(
                federation.get("local_epochs_per_round", defaults.LOCAL_EPOCHS_PER_ROUND),
                "federation.local_epochs_per_round",
            ),
            workers=runtime.workers() if workers is None else _as_int(workers, "federation.workers"),
            hidden_dims=tuple(_as_int(h, "federation.model.hidden_dims") for h in model.get("hidden_dims", [])),
            activation=str(model.get("activation", "relu")),
            optimizer=OptimizerConfig(
                lr0=_as_float(optimizer.get("lr0", defaults.LR0), "optimizer.lr0"),
                momentum=_as_float(optimizer.get("momentum", defaults.MOMENTUM), "optimizer.momentum"),
                weight_decay=_as_float(
                    optimizer.get("weight_decay", defaults.WEIGHT_DECAY), "optimizer.weight_decay"
                ),
                halve_every=_as_int(optimizer.get("halve_every", defaults.HALVE_EVERY), "optimizer.halve_every"),
            ),
            grid=_parse_grid(raw["grid"], methods) if "grid" in raw else None,
            kfold=_as_int(raw["kfold"], "kfold") if "kfold" in raw else None,
        )
    except TypeError as exc:
        raise ConfigError(f"invalid_value: {exc}") from exc


def load_config(path: Path, *, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"missing_file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid_json: {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw, seed=seed, output_dir=output_dir)


def load_datasets(cfg: ExperimentConfig) -> dict[str, ClientDataset]:
    if cfg.synthetic is not None:
        return generate_federation(cfg.synthetic)
    assert cfg.csv_path is not None
    return load_csv_federation(cfg.csv_path, seed=cfg.seed)


def _input_dim(datasets: Mapping[str, ClientDataset]) -> int:
    dims = {ds.input_dim for ds in datasets.values()}
    if len(dims) != 1:
        raise ConfigError(f"invalid_data: centers disagree on feature count {sorted(dims)}")
    return dims.pop()


def _layout_for(cfg: ExperimentConfig, datasets: Mapping[str, ClientDataset]) -> FederationLayout:
    if cfg.n_training_centers is None:
        raise ConfigError("missing_key: layout.n_training_centers")
    return default_layout(list(datasets), cfg.n_training_centers)


def _groups(layout: FederationLayout) -> tuple[str, ...]:
    return ("local_test", "independent") if layout.independent_centers else ("local_test",)


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _round_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.unlink(missing_ok=True)
    return lambda record: append_round_record(path, record)


def _shared_initial(cfg: ExperimentConfig, input_dim: int) -> ParameterSet:
    return init_params(cfg.model_spec(input_dim), RngStream(cfg.seed, purpose="init"))


def _check_initial(method: str, fed_cfg: FederationConfig, initial: ParameterSet) -> None:
    expected = fed_cfg.initial_model()
    logger.info("INIT_CHECKSUM method=%s checksum=%s", method, initial.checksum_hex())
    if not expected.bit_equal(initial):
        raise RuntimeError(
            f"init_mismatch: method={method} {expected.checksum_hex()} != {initial.checksum_hex()}"
        )


def run_experiment(
    cfg: ExperimentConfig,
    datasets: Mapping[str, ClientDataset],
    layout: FederationLayout,
    out_dir: Path,
) -> ExperimentResult:
    """Train and evaluate every configured method on one layout."""
    methods = cfg.method_names
    if any(m in FEDERATED_METHODS for m in methods) and len(layout.training_centers) < 2:
        raise ConfigError(f"too_few_training_centers: {len(layout.training_centers)} (federated methods need 2)")
    input_dim = _input_dim(datasets)
    initial = _shared_initial(cfg, input_dim)
    logger.info(
        "RUN_START methods=%s training_centers=%s independent_centers=%s out=%s",
        ",".join(methods),
        len(layout.training_centers),
        len(layout.independent_centers),
        out_dir,
    )

    reports: dict[str, list[metrics.EvalReport]] = {}
    best_models: dict[str, ParameterSet] = {}
    histories: dict[str, list[RoundRecord]] = {}
    for method in methods:
        fed_cfg = cfg.federation_config(layout, cfg.strategy_for(method), input_dim)
        _check_initial(method, fed_cfg, initial)
        if method == "local":
            local_models = run_local_baselines(fed_cfg, datasets, initial=initial)
            matrix = metrics.cross_center_matrix(local_models, datasets, layout)
            metrics.write_csv(matrix, out_dir / "cross_center.csv")
            reports[method] = metrics.local_baseline_reports(matrix, datasets, layout, method=method)
            continue
        if method == "centralized":
            best = run_centralized(fed_cfg, datasets, initial=initial)
        else:
            best, history = run_federation(
                fed_cfg, datasets, initial=initial, on_round=_round_writer(out_dir / method / "rounds.jsonl")
            )
            histories[method] = history
        save_parameter_set(best, out_dir / method / "model.json")
        best_models[method] = best
        reports[method] = metrics.evaluate_model(best, datasets, layout, method=method)

    summary = metrics.summarize(reports, _groups(layout))
    metrics.write_csv(metrics.reports_frame(r for method in methods for r in reports[method]), out_dir / "reports.csv")
    metrics.write_csv(summary.to_frame(), out_dir / "summary.csv")
    logger.info("RUN_DONE methods=%s reports=%s out=%s", ",".join(methods), sum(map(len, reports.values())), out_dir)
    return ExperimentResult(reports, summary, best_models, histories)


def _prepare_output(cfg: ExperimentConfig, datasets: Mapping[str, ClientDataset]) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.output_dir / "config.resolved", cfg.resolved())
    metrics.write_csv(describe_federation(datasets), cfg.output_dir / "centers.csv")


def _notify_completed(
    notifier: Optional[notifications.NotificationService],
    command: str,
    cfg: ExperimentConfig,
    rows: pd.DataFrame,
) -> None:
    if notifier is not None:
        notifier.notify_run_completed(command, str(cfg.output_dir), cfg.method_names, rows.to_dict("records"))


def cmd_run(cfg: ExperimentConfig, notifier: Optional[notifications.NotificationService] = None) -> int:
    datasets = load_datasets(cfg)
    layout = _layout_for(cfg, datasets)
    _prepare_output(cfg, datasets)
    result = run_experiment(cfg, datasets, layout, cfg.output_dir)
    _notify_completed(notifier, "run", cfg, result.summary.to_frame())
    return 0


def _grid_row(
    cfg: ExperimentConfig,
    datasets: Mapping[str, ClientDataset],
    layout: FederationLayout,
    strategy: StrategyConfig,
    initial: ParameterSet,
    input_dim: int,
    cell_dir: Path,
) -> dict[str, Any]:
    fed_cfg = cfg.federation_config(layout, strategy, input_dim)
    best, history = run_federation(fed_cfg, datasets, initial=initial, on_round=_round_writer(cell_dir / "rounds.jsonl"))
    reports = metrics.evaluate_model(best, datasets, layout, method=strategy.strategy)
    return {
        "total_val_loss": min(record.total_val_loss for record in history),
        "mean_f1_local": metrics.mean_f1(reports, "local_test"),
        "mean_f1_independent": metrics.mean_f1(reports, "independent"),
        "best_checksum": best.checksum_hex(),
    }


def _mark_selected(frame: pd.DataFrame) -> pd.DataFrame:
    frame["selected"] = False
    frame.loc[frame["total_val_loss"].idxmin(), "selected"] = True
    return frame


def cmd_grid(cfg: ExperimentConfig, notifier: Optional[notifications.NotificationService] = None) -> int:
    if cfg.grid is None:
        raise ConfigError("missing_key: grid")
    datasets = load_datasets(cfg)
    layout = _layout_for(cfg, datasets)
    if len(layout.training_centers) < 2:
        raise ConfigError(f"too_few_training_centers: {len(layout.training_centers)} (federated methods need 2)")
    _prepare_output(cfg, datasets)
    input_dim = _input_dim(datasets)
    initial = _shared_initial(cfg, input_dim)
    logger.info("INIT_CHECKSUM method=grid checksum=%s", initial.checksum_hex())

    rows = []
    for cdr, fdr in itertools.product(cfg.grid.cdr_values, cfg.grid.fdr_values):
        strategy = cfg.strategy_for("feddropoutavg", cdr=cdr, fdr=fdr)
        row = {"cdr": cdr, "fdr": fdr}
        cell_dir = cfg.output_dir / "grid" / f"cdr{cdr}_fdr{fdr}"
        row.update(_grid_row(cfg, datasets, layout, strategy, initial, input_dim, cell_dir))
        logger.info("GRID_CELL cdr=%s fdr=%s val_loss=%.6f", cdr, fdr, row["total_val_loss"])
        rows.append(row)
    summary = pd.DataFrame(columns=GRID_COLUMNS)
    if rows:
        summary = _mark_selected(pd.DataFrame(rows))[GRID_COLUMNS]
        metrics.write_csv(summary, cfg.output_dir / "grid.csv")
        best = summary[summary["selected"]].iloc[0]
        logger.info("GRID_SELECTED cdr=%s fdr=%s val_loss=%.6f", best["cdr"], best["fdr"], best["total_val_loss"])

    mu_rows = []
    for mu in cfg.grid.mu_values:
        strategy = cfg.strategy_for("fedprox", prox_mu=mu)
        row = {"prox_mu": mu}
        cell_dir = cfg.output_dir / "mu_grid" / f"mu{mu}"
        row.update(_grid_row(cfg, datasets, layout, strategy, initial, input_dim, cell_dir))
        logger.info("GRID_CELL prox_mu=%s val_loss=%.6f", mu, row["total_val_loss"])
        mu_rows.append(row)
    if mu_rows:
        mu_summary = _mark_selected(pd.DataFrame(mu_rows))[MU_GRID_COLUMNS]
        metrics.write_csv(mu_summary, cfg.output_dir / "mu_grid.csv")
        if summary.empty:
            summary = mu_summary

    _notify_completed(notifier, "grid", cfg, summary)
    return 0


def cmd_kfold(cfg: ExperimentConfig, notifier: Optional[notifications.NotificationService] = None) -> int:
    if cfg.kfold is None:
        raise ConfigError("missing_key: kfold")
    datasets = load_datasets(cfg)
    layouts = kfold_center_rotation(list(datasets), cfg.kfold, RngStream(cfg.seed, purpose="kfold"))
    _prepare_output(cfg, datasets)

    pooled: dict[str, list[metrics.EvalReport]] = {}
    frames = []
    for fold, layout in enumerate(layouts):
        logger.info("KFOLD_FOLD fold=%s independent=%s", fold, ",".join(layout.independent_centers))
        result = run_experiment(cfg, datasets, layout, cfg.output_dir / f"fold_{fold}")
        for method, reports in result.reports.items():
            pooled.setdefault(method, []).extend(reports)
        frame = metrics.reports_frame(r for method in cfg.method_names for r in result.reports[method])
        frame.insert(0, "fold", fold)
        frames.append(frame)

    summary = metrics.summarize(pooled)
    metrics.write_csv(pd.concat(frames, ignore_index=True), cfg.output_dir / "reports.csv")
    metrics.write_csv(summary.to_frame(), cfg.output_dir / "summary.csv")
    _notify_completed(notifier, "kfold", cfg, summary.to_frame())
    return 0


COMMANDS = {"run": cmd_run, "grid": cmd_grid, "kfold": cmd_kfold}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description="Federated learning simulation experiments.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "train and evaluate every configured method"),
        ("grid", "sweep the cdr/fdr grid and the optional FedProx mu grid"),
        ("kfold", "rotate center folds through the independent role"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, type=Path, help="experiment JSON file")
        sub.add_argument("--seed", type=int, default=None, help="override the config seed")
        sub.add_argument("--out", default=None, help="override the config output_dir")
    return parser


def _configure_logging() -> None:
    level = logging.getLevelName(runtime.log_level())
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    notifier = notifications.create_notification_service_from_env()
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        return COMMANDS[args.command](cfg, notifier)
    except (ConfigError, SchemaError) as exc:
        logger.error("CONFIG_ERROR command=%s error=%s", args.command, exc)
        notifier.notify_run_failed(args.command, exc)
        return 2
    except Exception as exc:
        logger.exception("RUN_FAILED command=%s", args.command)
        notifier.notify_run_failed(args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
