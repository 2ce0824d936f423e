"""Experiment orchestration: configs, persistence, runs, comparisons.

A run config is a JSON object (or the equivalent dict).  Unknown keys are
rejected and every validation error names the offending key path.  All
defaults are filled at parse time, so the echoed config in the output is the
complete resolved configuration and parses back to an equal config.

Per run, the harness writes into the output directory:

- ``particles_iter{c:06d}.csv`` per checkpoint: header
  ``iter,particle,coord_0..coord_{d-1}``, floats at 17 significant digits so
  they round-trip exactly.
- ``metrics.json``: config echo plus one metric row per checkpoint (MMD
  against a reference sample where the target has a sampler, predictive
  metrics for the logistic posterior).  Canonical bytes: two equal-seed runs
  of the same config produce identical files.
- ``timing.json``: wall-clock seconds per iteration (deliberately kept out of
  the canonical record).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics, metrics
from .errors import ConfigError, InvalidInputError, NumericalAbort
from .targets import LogisticDataset, LogisticPosterior, TargetModel, make_target

DEFAULT_CHECKPOINTS = (0, 5, 10, 30, 100, 500)
DEFAULT_MMD_REFERENCE_N = 2000

# Adagrad base rates tuned per method on the toy targets (see README).
METHOD_DEFAULT_RATES = {
    "vanilla_svgd": 0.2,
    "matrix_svgd_average": 0.5,
    "matrix_svgd_mixture": 0.5,
    "svn": 0.5,
}

_TARGET_PARAM_KEYS = {
    "gaussian": ("mean", "cov"),
    "star_mixture": ("components", "mu1", "sigma1"),
    "sine": ("alpha", "sigma1", "sigma2"),
    "double_banana": ("y_obs", "sigma1", "sigma2"),
    "logistic_posterior": ("data_path", "delimiter", "minibatch_size"),
}

_TOP_KEYS = ("target", "method", "n", "iters", "seed", "checkpoints",
             "stepper", "precond", "init", "mmd_reference_n", "out_dir")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration (all defaults filled)."""

    target_kind: str
    target_params: dict
    method: str
    n: int
    iters: int
    seed: int
    checkpoints: tuple[int, ...]
    stepper_method: str
    base_rate: float
    damping: float
    source: str
    refresh_period: int
    floor_ratio: float
    init_mean: object  # float or list of floats
    init_scale: float
    mmd_reference_n: int
    out_dir: str

    def to_dict(self) -> dict:
        return {
            "target": {"kind": self.target_kind, **self.target_params},
            "method": self.method,
            "n": self.n,
            "iters": self.iters,
            "seed": self.seed,
            "checkpoints": list(self.checkpoints),
            "stepper": {"method": self.stepper_method, "base_rate": self.base_rate,
                        "damping": self.damping},
            "precond": {"source": self.source, "refresh_period": self.refresh_period,
                        "floor_ratio": self.floor_ratio},
            "init": {"mean": self.init_mean, "scale": self.init_scale},
            "mmd_reference_n": self.mmd_reference_n,
            "out_dir": self.out_dir,
        }


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _check_unknown(obj: dict, allowed, path: str):
    for key in obj:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _as_int(value, path: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    return int(value)


def _as_number(value, path: str, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"must be a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        _fail(path, "must be finite")
    if positive and value <= 0.0:
        _fail(path, f"must be positive, got {value}")
    return value


def _as_choice(value, path: str, choices) -> str:
    if value not in choices:
        _fail(path, f"must be one of {sorted(choices)}, got {value!r}")
    return value


def parse_config(source) -> RunConfig:
    """Parse and validate a run config from a JSON string or a dict."""
    if isinstance(source, (str, bytes)):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(source, dict):
        raise ConfigError(f"config must be a JSON object, got {type(source).__name__}")
    _check_unknown(source, _TOP_KEYS, "")
    for key in ("target", "method", "n", "iters", "seed"):
        if key not in source:
            _fail(key, "required key is missing")

    target = source["target"]
    if isinstance(target, str):
        target = {"kind": target}
    if not isinstance(target, dict) or "kind" not in target:
        _fail("target", "must be a kind name or an object with a 'kind' key")
    kind = _as_choice(target["kind"], "target.kind", _TARGET_PARAM_KEYS)
    params = {k: v for k, v in target.items() if k != "kind"}
    _check_unknown(params, _TARGET_PARAM_KEYS[kind], "target")

    method = _as_choice(source["method"], "method", dynamics.METHODS)
    n = _as_int(source["n"], "n", minimum=1)
    iters = _as_int(source["iters"], "iters", minimum=0)
    seed = _as_int(source["seed"], "seed")

    raw_cp = source.get("checkpoints")
    if raw_cp is None:
        checkpoints = tuple(c for c in DEFAULT_CHECKPOINTS if c <= iters)
    else:
        if not isinstance(raw_cp, list) or not raw_cp:
            _fail("checkpoints", "must be a non-empty list of iterations")
        checkpoints = tuple(sorted({_as_int(c, f"checkpoints[{i}]", minimum=0)
                                    for i, c in enumerate(raw_cp)}))
        if checkpoints[-1] > iters:
            _fail("checkpoints", f"must not exceed iters={iters}, got {checkpoints[-1]}")

    stepper = source.get("stepper", {})
    if not isinstance(stepper, dict):
        _fail("stepper", "must be an object")
    _check_unknown(stepper, ("method", "base_rate", "damping"), "stepper")
    stepper_method = _as_choice(stepper.get("method", "adagrad"), "stepper.method",
                                ("adagrad", "fixed"))
    base_rate = _as_number(stepper.get("base_rate", METHOD_DEFAULT_RATES[method]),
                           "stepper.base_rate", positive=True)
    damping = _as_number(stepper.get("damping", 1e-6), "stepper.damping", positive=True)

    precond = source.get("precond", {})
    if not isinstance(precond, dict):
        _fail("precond", "must be an object")
    _check_unknown(precond, ("source", "refresh_period", "floor_ratio"), "precond")
    default_source = "fisher" if kind == "logistic_posterior" else "exact_hessian"
    curv_source = _as_choice(precond.get("source", default_source), "precond.source",
                             ("exact_hessian", "fisher"))
    refresh_period = _as_int(precond.get("refresh_period", 1), "precond.refresh_period", minimum=1)
    floor_ratio = _as_number(precond.get("floor_ratio", 1e-6), "precond.floor_ratio", positive=True)
    if floor_ratio >= 1.0:
        _fail("precond.floor_ratio", f"must be < 1, got {floor_ratio}")

    init = source.get("init", {})
    if not isinstance(init, dict):
        _fail("init", "must be an object")
    _check_unknown(init, ("mean", "scale"), "init")
    raw_mean = init.get("mean", 0.0)
    if isinstance(raw_mean, list):
        init_mean = [_as_number(v, f"init.mean[{i}]") for i, v in enumerate(raw_mean)]
    else:
        init_mean = _as_number(raw_mean, "init.mean")
    init_scale = _as_number(init.get("scale", 1.0), "init.scale", positive=True)

    mmd_reference_n = _as_int(source.get("mmd_reference_n", DEFAULT_MMD_REFERENCE_N),
                              "mmd_reference_n", minimum=0)
    out_dir = source.get("out_dir", "runs")
    if not isinstance(out_dir, str) or not out_dir:
        _fail("out_dir", "must be a non-empty string")

    return RunConfig(target_kind=kind, target_params=params, method=method, n=n,
                     iters=iters, seed=seed, checkpoints=checkpoints,
                     stepper_method=stepper_method, base_rate=base_rate, damping=damping,
                     source=curv_source, refresh_period=refresh_period,
                     floor_ratio=floor_ratio, init_mean=init_mean, init_scale=init_scale,
                     mmd_reference_n=mmd_reference_n, out_dir=out_dir)


def build_target(config: RunConfig) -> TargetModel:
    """Materialize the configured target (loads data files for the logistic kind)."""
    kind, params = config.target_kind, dict(config.target_params)
    try:
        if kind == "logistic_posterior":
            if "data_path" not in params:
                _fail("target.data_path", "required for logistic_posterior")
            dataset = LogisticDataset.from_file(params["data_path"],
                                                delimiter=params.get("delimiter", ","),
                                                minibatch_size=params.get("minibatch_size", 0))
            return LogisticPosterior(dataset)
        if kind == "gaussian" and not params:
            params = {"mean": [0.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]}
        elif kind == "gaussian" and "cov" not in params:
            params["cov"] = np.eye(len(params["mean"])).tolist()
        return make_target(kind, **params)
    except InvalidInputError as exc:
        raise ConfigError(f"target: {exc}") from exc


@dataclass
class RunRecord:
    """Everything a finished run produced, before persistence."""

    config: dict
    snapshots: dict[int, np.ndarray]
    metric_rows: list[dict]
    converged_at: int | None
    step_seconds: list[float] = field(default_factory=list)

    def metrics_document(self) -> dict:
        """The canonical (timing-free) metrics payload."""
        return {"config": self.config,
                "checkpoints": sorted(self.snapshots),
                "converged_at": self.converged_at,
                "metrics": self.metric_rows}


def _reference_seed(seed: int) -> int:
    # independent child stream of the run seed, shared by all methods with
    # the same seed so their MMD columns are comparable
    return int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])


def run_experiment(config: RunConfig, out_dir: str | None = None,
                   persist: bool = True) -> RunRecord:
    """Execute one configured run, compute per-checkpoint metrics, write files."""
    model = build_target(config)
    stepper = dynamics.StepperState(method=config.stepper_method, base_rate=config.base_rate,
                                    damping=config.damping)
    policy = dynamics.PrecondPolicy(source=config.source, refresh_period=config.refresh_period,
                                    floor_ratio=config.floor_ratio)
    destination = Path(out_dir if out_dir is not None else config.out_dir)
    try:
        result = dynamics.run(model, config.method, n_particles=config.n,
                              iterations=config.iters, checkpoints=config.checkpoints,
                              stepper=stepper, policy=policy, seed=config.seed,
                              init_mean=config.init_mean, init_scale=config.init_scale)
    except NumericalAbort as exc:
        if persist:
            destination.mkdir(parents=True, exist_ok=True)
            payload = {"aborted": True, "error": str(exc), "iteration": exc.iteration}
            (destination / "aborted.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        raise

    reference = None
    if config.mmd_reference_n > 0 and not isinstance(model, LogisticPosterior):
        reference = model.reference_sample(config.mmd_reference_n, seed=_reference_seed(config.seed))
    rows = []
    for c in sorted(result.snapshots):
        row: dict = {"iter": c}
        if reference is not None:
            report = metrics.mmd_sq(result.snapshots[c], reference)
            row["mmd"] = {"value": report.value, "bandwidth": report.bandwidth,
                          "n_x": report.n_x, "n_y": report.n_y}
        if isinstance(model, LogisticPosterior):
            accuracy, log_lik = metrics.predictive_metrics(result.snapshots[c], model.dataset)
            row["predictive"] = {"accuracy": accuracy, "mean_log_likelihood": log_lik}
        rows.append(row)

    record = RunRecord(config=config.to_dict(), snapshots=result.snapshots,
                       metric_rows=rows, converged_at=result.converged_at,
                       step_seconds=result.step_seconds)
    if persist:
        persist_record(record, destination)
    return record


def write_particles(path, iteration: int, positions: np.ndarray) -> None:
    positions = np.asarray(positions, dtype=float)
    header = "iter,particle," + ",".join(f"coord_{m}" for m in range(positions.shape[1]))
    lines = [header]
    for i, row in enumerate(positions):
        lines.append(f"{iteration},{i}," + ",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_particles(path) -> tuple[int, np.ndarray]:
    """Read back one particle CSV; returns (iteration, positions)."""
    lines = Path(path).read_text().strip().split("\n")
    rows = [line.split(",") for line in lines[1:]]
    iteration = int(rows[0][0])
    return iteration, np.array([[float(v) for v in row[2:]] for row in rows])


def persist_record(record: RunRecord, out_dir) -> dict:
    """Write particle CSVs, metrics.json and the timing sidecar; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"particles": []}
    for c in sorted(record.snapshots):
        p = out / f"particles_iter{c:06d}.csv"
        write_particles(p, c, record.snapshots[c])
        paths["particles"].append(p)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(record.metrics_document(), sort_keys=True, indent=2) + "\n")
    paths["metrics"] = metrics_path
    timing_path = out / "timing.json"
    timing = {"step_seconds": record.step_seconds,
              "total_seconds": float(sum(record.step_seconds))}
    timing_path.write_text(json.dumps(timing, indent=2) + "\n")
    paths["timing"] = timing_path
    return paths


def _comparison_value(row: dict) -> float:
    if "mmd" in row:
        return row["mmd"]["value"]
    if "predictive" in row:
        return row["predictive"]["mean_log_likelihood"]
    return float("nan")


def compare(configs, out_dir=None) -> dict:
    """Run several configs that differ only in method; tabulate their metrics.

    Returns {"checkpoints": [...], "methods": [...], "values": row-major list,
    "records": {method: RunRecord}} and, when ``out_dir`` is given, writes
    each run under ``out_dir/<method>/`` plus a ``comparison.csv`` table with
    one row per checkpoint and one column per method.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("compare: needs at least one config")
    first = configs[0]
    methods = []
    for cfg in configs:
        if cfg.method in methods:
            raise ConfigError(f"method: duplicate method '{cfg.method}' in comparison")
        methods.append(cfg.method)
        for key in ("target_kind", "target_params", "n", "iters", "seed", "checkpoints"):
            if getattr(cfg, key) != getattr(first, key):
                raise ConfigError(f"{key}: configs in a comparison must agree, "
                                  f"got {getattr(cfg, key)!r} vs {getattr(first, key)!r}")

    records = {}
    for cfg in configs:
        sub = None if out_dir is None else Path(out_dir) / cfg.method
        records[cfg.method] = run_experiment(cfg, out_dir=sub, persist=out_dir is not None)
    checkpoints = sorted(first.checkpoints)
    values = [[_comparison_value(records[m].metric_rows[i]) for m in methods]
              for i in range(len(checkpoints))]
    if out_dir is not None:
        lines = ["iter," + ",".join(methods)]
        for c, row in zip(checkpoints, values):
            lines.append(f"{c}," + ",".join(format(v, ".17g") for v in row))
        Path(out_dir, "comparison.csv").write_text("\n".join(lines) + "\n")
    return {"checkpoints": checkpoints, "methods": methods, "values": values,
            "records": records}
