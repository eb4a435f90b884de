"""Batch pipeline: validated config in, directory of artifacts out.

Stages run in a fixed order (ingest, preprocess, split, tune, train, evaluate,
uncertainty, report); each writes its artifacts as it finishes, so partial runs
compose. Any stage failure leaves a FAILED marker naming the stage. Every
JSON/SVG artifact embeds the config hash and master seed; manifest.json covers
the rest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import __version__
from .boosting import GbmParams, fit_gbm, predict_gbm_matrix, save_gbm
from .cart import TreeParams
from .evaluate import (
    UncertaintyReport,
    metrics,
    realizations,
    realizations_from_runner,
)
from .figures import emit_histogram, emit_scatter, emit_validation_curve, regenerate_figure
from .forest import RfParams, fit_forest, predict_forest_matrix, save_forest
from .lstm import LstmTrainConfig, build_sequences, forward, save_network, train_lstm
from .preprocess import (
    SplitSpec,
    iterative_impute,
    knn_impute,
    one_hot_encode,
    prune_collinear,
    spearman_matrix,
    split,
)
from .synth import RESPONSE_COLUMN, WELL_ID_COLUMN, calibrated_spec, default_spec, generate
from .table import CATEGORICAL, NUMERIC, Table, column_stats, load_csv, select_columns, write_csv
from .tuning import (
    default_gbm_space,
    default_rf_space,
    Categorical,
    FloatLogUniform,
    FloatUniform,
    IntUniform,
    make_gbm_params,
    make_rf_params,
    run_study,
    table_to_xy,
)

log = logging.getLogger(__name__)

STAGES = ("ingest", "preprocess", "split", "tune", "train", "evaluate", "uncertainty", "report")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _as_dict(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be an object, got {type(value).__name__}")
    return dict(value)


@dataclasses.dataclass
class PipelineConfig:
    raw: dict
    input_path: str | None
    synth_spec: object | None
    response: str
    id_column: str | None
    monthly_path: str | None
    missing_threshold: float
    imputer: str
    knn_k: int
    iterative_rounds: int
    iterative_tol: float
    collinearity_cutoff: float
    encode: object  # "auto" or list of column names
    model_kind: str
    model_params: dict
    model_grid: list | None
    tune: dict | None
    split_spec: SplitSpec
    uncertainty_counts: list
    seed: int
    units: str

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]


_SPACE_TYPES = {
    "int_uniform": (IntUniform, ("lo", "hi")),
    "float_uniform": (FloatUniform, ("lo", "hi")),
    "float_log_uniform": (FloatLogUniform, ("lo", "hi")),
    "categorical": (Categorical, ("options",)),
}


def _parse_space(doc: dict, where: str) -> dict:
    space = {}
    for name, entry in doc.items():
        _check_keys(entry, ("type", "lo", "hi", "options"), f"{where}.{name}")
        kind = entry.get("type")
        if kind not in _SPACE_TYPES:
            raise ConfigError(f"{where}.{name}: unknown dimension type {kind!r}")
        cls, fields = _SPACE_TYPES[kind]
        try:
            space[name] = cls(*(entry[f] for f in fields))
        except KeyError as e:
            raise ConfigError(f"{where}.{name}: missing field {e}") from None
    return space


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_config(raw)


def parse_config(raw: dict) -> PipelineConfig:
    """Validate the config document; unknown keys are errors."""
    _check_keys(
        raw,
        ("input", "response", "id_column", "monthly", "preprocess", "model", "tune",
         "split", "uncertainty", "seed", "units"),
        "config",
    )
    seed = int(raw.get("seed", 121))
    if seed < 0:
        raise ConfigError("seed must be non-negative")

    inp = raw.get("input")
    if not isinstance(inp, dict):
        raise ConfigError("config requires an 'input' object")
    _check_keys(inp, ("path", "synth"), "input")
    if ("path" in inp) == ("synth" in inp):
        raise ConfigError("input must carry exactly one of 'path' or 'synth'")
    input_path = inp.get("path")
    synth_spec = None
    if "synth" in inp:
        sdoc = _as_dict(inp["synth"], "input.synth")
        _check_keys(sdoc, ("n_wells", "noise_fraction", "noise_std", "months", "seed"), "input.synth")
        n_wells = int(sdoc.get("n_wells", 1000))
        synth_seed = int(sdoc.get("seed", seed))
        if "noise_fraction" in sdoc and "noise_std" in sdoc:
            raise ConfigError("input.synth: give noise_fraction or noise_std, not both")
        if "noise_fraction" in sdoc:
            synth_spec = calibrated_spec(n_wells, float(sdoc["noise_fraction"]), synth_seed)
        else:
            synth_spec = default_spec(n_wells, float(sdoc.get("noise_std", 0.0)), synth_seed)
        if "months" in sdoc:
            synth_spec = dataclasses.replace(synth_spec, months=int(sdoc["months"]))

    response = raw.get("response", RESPONSE_COLUMN)
    id_column = raw.get("id_column", WELL_ID_COLUMN if synth_spec is not None else None)

    monthly = raw.get("monthly")
    monthly_path = None
    if monthly is not None:
        monthly = _as_dict(monthly, "monthly")
        _check_keys(monthly, ("path",), "monthly")
        monthly_path = monthly["path"]

    pp = _as_dict(raw.get("preprocess", {}), "preprocess")
    _check_keys(
        pp,
        ("missing_threshold", "imputer", "knn_k", "iterative_rounds", "iterative_tol",
         "collinearity_cutoff", "encode"),
        "preprocess",
    )
    imputer = pp.get("imputer", "knn")
    if imputer not in ("knn", "iterative"):
        raise ConfigError(f"preprocess.imputer must be 'knn' or 'iterative', got {imputer!r}")
    encode = pp.get("encode", "auto")
    if encode != "auto" and not isinstance(encode, list):
        raise ConfigError("preprocess.encode must be 'auto' or a list of column names")

    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError("config requires a 'model' object")
    _check_keys(model, ("kind", "params", "grid"), "model")
    model_kind = model.get("kind")
    if model_kind not in ("rf", "gbm", "lstm"):
        raise ConfigError(f"model.kind must be rf, gbm, or lstm, got {model_kind!r}")
    model_params = _as_dict(model.get("params", {}), "model.params")
    model_grid = model.get("grid")
    if model_grid is not None:
        if model_kind != "lstm":
            raise ConfigError("model.grid is the lstm evaluation path; tune rf/gbm via 'tune'")
        if not isinstance(model_grid, list) or not model_grid:
            raise ConfigError("model.grid must be a non-empty list of parameter objects")
        model_grid = [_as_dict(c, f"model.grid[{i}]") for i, c in enumerate(model_grid)]

    tune = raw.get("tune")
    if tune is not None:
        tune = _as_dict(tune, "tune")
        _check_keys(tune, ("n_trials", "k_folds", "space"), "tune")
        if model_kind == "lstm":
            raise ConfigError("tune applies to rf/gbm only; lstm settings are fixed by model.params")
        if "space" in tune and tune["space"] != "default":
            tune["space"] = _parse_space(tune["space"], "tune.space")

    sp = _as_dict(raw.get("split", {}), "split")
    _check_keys(sp, ("fractions", "mode", "order_column", "seed"), "split")
    fractions = tuple(sp.get("fractions", (0.8, 0.2) if model_kind != "lstm" else (0.6, 0.2, 0.2)))
    split_spec = SplitSpec(
        fractions=fractions,
        seed=int(sp.get("seed", seed)),
        mode=sp.get("mode", "shuffled"),
        order_column=sp.get("order_column"),
    )

    unc = _as_dict(raw.get("uncertainty", {}), "uncertainty")
    _check_keys(unc, ("counts",), "uncertainty")
    counts = [int(c) for c in unc.get("counts", [100, 500])]

    return PipelineConfig(
        raw=raw,
        input_path=input_path,
        synth_spec=synth_spec,
        response=response,
        id_column=id_column,
        monthly_path=monthly_path,
        missing_threshold=float(pp.get("missing_threshold", 0.25)),
        imputer=imputer,
        knn_k=int(pp.get("knn_k", 5)),
        iterative_rounds=int(pp.get("iterative_rounds", 10)),
        iterative_tol=float(pp.get("iterative_tol", 1e-3)),
        collinearity_cutoff=float(pp.get("collinearity_cutoff", 0.95)),
        encode=encode,
        model_kind=model_kind,
        model_params=model_params,
        model_grid=model_grid,
        tune=tune,
        split_spec=split_spec,
        uncertainty_counts=counts,
        seed=seed,
        units=raw.get("units", "thousand barrels"),
    )


def _concat_columns(left: Table, right: Table) -> Table:
    return Table(
        left.names + right.names,
        left.kinds + right.kinds,
        np.vstack([left.values, right.values]),
        np.vstack([left.mask, right.mask]),
        left.labels + right.labels,
    )


def _fill_categorical_modes(t: Table) -> Table:
    """Modal-code fill for categorical gaps (used after the numeric-only imputer)."""
    values = np.array(t.values)
    mask = np.array(t.mask)
    for j, kind in enumerate(t.kinds):
        if kind != CATEGORICAL or not mask[j].any():
            continue
        obs = values[j, ~mask[j]]
        if obs.size == 0:
            raise ValueError(f"column {t.names[j]!r} is entirely missing")
        counts = np.bincount(obs.astype(int), minlength=len(t.labels[j]))
        values[j, mask[j]] = float(np.argmax(counts))
        mask[j] = False
    return Table(t.names, t.kinds, values, mask, t.labels)


def prepare_table(table: Table, cfg: PipelineConfig) -> Table:
    """Workflow steps 1-2 on a raw table: drop missing-response rows, filter
    high-missingness predictors, impute, prune collinear numerics, one-hot
    encode. The response and id columns ride along untouched."""
    special = {cfg.response}
    if cfg.id_column:
        if cfg.id_column not in table.names:
            raise ValueError(f"id column {cfg.id_column!r} not in table")
        special.add(cfg.id_column)
    if cfg.response not in table.names:
        raise ValueError(f"response column {cfg.response!r} not in table")
    if table.kind_of(cfg.response) != NUMERIC:
        raise ValueError(f"response column {cfg.response!r} must be numeric")

    resp_mask = table.column_mask(cfg.response)
    if resp_mask.any():
        log.info("dropping %d rows with missing response", int(resp_mask.sum()))
        table = table.take_rows(np.flatnonzero(~resp_mask))

    keep = []
    for j, name in enumerate(table.names):
        if name in special:
            keep.append(name)
            continue
        frac = table.mask[j].sum() / table.n_rows if table.n_rows else 0.0
        if frac < cfg.missing_threshold:
            keep.append(name)
        else:
            log.info("dropping %s: %.0f%% missing", name, 100 * frac)
    table = select_columns(table, keep)

    feature_names = [n for n in table.names if n not in special]
    features = select_columns(table, feature_names)
    if features.mask.any():
        if cfg.imputer == "knn":
            features = knn_impute(features, k=cfg.knn_k)
        else:
            if len(features.numeric_names()) >= 2:
                features = iterative_impute(
                    features, max_rounds=cfg.iterative_rounds, tol=cfg.iterative_tol
                )
            features = _fill_categorical_modes(features)

    corr = spearman_matrix(features)
    features = prune_collinear(features, corr, cutoff=cfg.collinearity_cutoff)

    encode = features.categorical_names() if cfg.encode == "auto" else list(cfg.encode)
    if encode:
        features = one_hot_encode(features, encode)

    rest = select_columns(table, [n for n in table.names if n in special])
    return _concat_columns(features, rest)


def _resolve_rf_params(params: dict, seed: int) -> RfParams:
    return make_rf_params(params, seed=seed)


def _resolve_gbm_params(params: dict, seed: int) -> GbmParams:
    return make_gbm_params(params, seed=seed)


def _model_seed(master_seed: int, tag: int) -> int:
    return int(np.random.SeedSequence((master_seed, tag)).generate_state(1, np.uint64)[0])


class PipelineRun:
    """Executes the staged workflow and accumulates artifacts in ``out_dir``."""

    def __init__(self, cfg: PipelineConfig, out_dir, n_workers: int = 1):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.n_workers = n_workers
        self.table = None
        self.monthly = None
        self.prepared = None
        self.parts = None
        self.sequences = None
        self.chosen_params = dict(cfg.model_params)
        self.study = None
        self.model = None
        self.report_meta = f"config={cfg.config_hash} seed={cfg.seed}"
        self.artifacts = []

    # -- helpers ----------------------------------------------------------

    def _path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(name)
        return p

    def _write_json(self, name: str, doc: dict) -> None:
        doc = {"config_hash": self.cfg.config_hash, "seed": self.cfg.seed, **doc}
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- stages ------------------------------------------------------------

    def ingest(self):
        cfg = self.cfg
        if cfg.synth_spec is not None:
            data = generate(cfg.synth_spec)
            self.table = data.table
            self.monthly = data.monthly
        else:
            self.table = load_csv(cfg.input_path)
            if cfg.monthly_path:
                self.monthly = read_monthly_csv(cfg.monthly_path)
        stats = [dataclasses.asdict(s) for s in column_stats(self.table)]
        self._write_json("column_stats.json", {"columns": stats})

    def preprocess(self):
        cfg = self.cfg
        if cfg.model_kind == "lstm":
            if self.monthly is None:
                raise ValueError("lstm requires monthly series (synth input or a monthly CSV)")
            params = cfg.model_params
            window = int(params.get("window", 6))
            fractions = cfg.split_spec.fractions
            if len(fractions) != 3:
                fractions = (0.6, 0.2, 0.2)
            self.sequences_fractions = fractions
            self.sequences = build_sequences(self.monthly, window=window, fractions=fractions)
        else:
            self.prepared = prepare_table(self.table, cfg)
            write_csv(self.prepared, self._path("processed.csv"))

    def split(self):
        if self.cfg.model_kind == "lstm":
            return  # chronological split happened inside build_sequences
        self.parts = split(self.prepared, self.cfg.split_spec)

    def tune(self):
        cfg = self.cfg
        if cfg.model_kind == "lstm":
            if cfg.model_grid:
                self._lstm_grid_search()
            return
        if cfg.tune is None:
            return
        space = cfg.tune.get("space", "default")
        if space == "default":
            space = default_rf_space() if cfg.model_kind == "rf" else default_gbm_space()
        train_part = select_columns(
            self.parts[0], [n for n in self.parts[0].names if n != cfg.id_column]
        )
        self.study = run_study(
            cfg.model_kind,
            space,
            train_part,
            cfg.response,
            n_trials=int(cfg.tune.get("n_trials", 100)),
            seed=cfg.seed,
            k=int(cfg.tune.get("k_folds", 5)),
            log_path=self._path("study.jsonl"),
            n_workers=self.n_workers,
        )
        best = self.study.best_trial
        self.chosen_params = {**cfg.model_params, **best.params}
        self._write_json(
            "best_params.json",
            {"trial_id": best.trial_id, "objective_mse": best.value, "params": best.params},
        )

    def _lstm_grid_search(self):
        """Manual-grid evaluation for the lstm: every candidate trains on the
        same data and seed; the final-epoch validation loss picks the winner."""
        cfg = self.cfg
        seed = _model_seed(cfg.seed, 2)
        results = []
        best = None
        for i, candidate in enumerate(cfg.model_grid):
            params = {**cfg.model_params, **candidate}
            window = int(params.get("window", 6))
            sequences = self.sequences
            if window != self.sequences.window:
                sequences = build_sequences(self.monthly, window=window,
                                            fractions=self.sequences_fractions)
            _, curves = train_lstm(sequences, _lstm_train_config(params, seed))
            val_loss = float(curves.val[-1])
            results.append({"candidate": i, "params": _jsonable(candidate),
                            "val_loss": val_loss})
            if best is None or val_loss < best[0]:
                best = (val_loss, params, sequences)
        _, self.chosen_params, self.sequences = best
        self._write_json("grid_results.json", {"results": results,
                                               "chosen": _jsonable(self.chosen_params)})

    def train(self):
        cfg = self.cfg
        seed = _model_seed(cfg.seed, 1)
        if cfg.model_kind == "lstm":
            train_cfg = _lstm_train_config(self.chosen_params, seed)
            self.model, self.curves = train_lstm(self.sequences, train_cfg)
            save_network(self.model, self._path("model.json"))
            return
        X, y, _ = table_to_xy(self._model_table(self.parts[0]), cfg.response)
        if cfg.model_kind == "rf":
            self.model = fit_forest(X, y, _resolve_rf_params(self.chosen_params, seed),
                                    n_workers=self.n_workers)
            save_forest(self.model, self._path("model.json"))
        else:
            self.model = fit_gbm(X, y, _resolve_gbm_params(self.chosen_params, seed))
            save_gbm(self.model, self._path("model.json"))

    def _model_table(self, part: Table) -> Table:
        drop = {self.cfg.id_column} if self.cfg.id_column else set()
        return select_columns(part, [n for n in part.names if n not in drop])

    def _predict(self, part: Table):
        X, y, _ = table_to_xy(self._model_table(part), self.cfg.response)
        if self.cfg.model_kind == "rf":
            return y, predict_forest_matrix(self.model, X)
        return y, predict_gbm_matrix(self.model, X)

    def evaluate(self):
        cfg = self.cfg
        if cfg.model_kind == "lstm":
            seq = self.sequences
            pred_std, _ = forward(self.model, seq.x_test, train_mode=False)
            y_true = seq.raw_targets("test")
            y_pred = seq.raw_outputs(pred_std, "test")
            ids = seq.wells_test
            baseline_rmse = metrics(y_true, seq.raw_persistence("test")).rmse
            baseline = {"persistence_rmse": baseline_rmse}
            emit_validation_curve(
                self.curves.train, self.curves.val,
                self._path("validation_curve.svg"), meta=self.report_meta,
            )
            self.artifacts.append("validation_curve.csv")
        else:
            test = self.parts[-1]
            y_true, y_pred = self._predict(test)
            if cfg.id_column:
                j = test.index(cfg.id_column)
                labels = test.labels[j]
                ids = [
                    labels[int(v)] if labels is not None and not test.mask[j, i] else str(i)
                    for i, v in enumerate(test.values[j])
                ]
            else:
                ids = [str(i) for i in range(test.n_rows)]
            mean_rmse = metrics(y_true, np.full_like(y_true, y_true.mean())).rmse
            baseline = {"mean_predictor_rmse": mean_rmse}

        report = metrics(y_true, y_pred, units=cfg.units)
        self.metrics_report = report
        self._write_json(
            "metrics.json",
            {
                "artifact_version": __version__,
                "model": cfg.model_kind,
                "params": _jsonable(self.chosen_params),
                "tuned": self.study is not None or bool(cfg.model_grid),
                "baselines": baseline,
                "metrics": report.to_dict(),
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            },
        )
        with open(self._path("predictions.csv"), "w", newline="", encoding="utf-8") as fh:
            fh.write("well_id,actual,predicted\n")
            for wid, a, p in zip(ids, y_true, y_pred):
                fh.write(f"{wid},{float(a)!r},{float(p)!r}\n")
        emit_scatter(y_true, y_pred, self._path("scatter.svg"), units=cfg.units,
                     meta=self.report_meta)
        self.artifacts.append("scatter.csv")

    def uncertainty(self):
        cfg = self.cfg
        if not cfg.uncertainty_counts:
            return
        reports = {}
        for count in cfg.uncertainty_counts:
            rep = self._uncertainty_once(count)
            reports[str(count)] = rep.to_dict()
            tag = f"uncertainty_{count}"
            emit_histogram(rep.rmses, (rep.ci_lo, rep.ci_hi), self._path(f"{tag}.svg"),
                           xlabel=f"RMSE ({cfg.units})", meta=self.report_meta)
            self.artifacts.append(f"{tag}.csv")
        self._write_json("uncertainty.json", {"realizations": reports})

    def _uncertainty_once(self, count: int) -> UncertaintyReport:
        cfg = self.cfg
        if cfg.model_kind == "lstm":
            seq = self.sequences
            params = self.chosen_params

            def run_one(split_seed: int, model_seed: int) -> float:
                net, _ = train_lstm(seq, _lstm_train_config(params, model_seed))
                pred, _ = forward(net, seq.x_test, train_mode=False)
                return metrics(seq.raw_targets("test"), seq.raw_outputs(pred, "test")).rmse

            return realizations_from_runner(run_one, count, cfg.seed, n_workers=self.n_workers)

        data = select_columns(
            self.prepared, [n for n in self.prepared.names if n != cfg.id_column]
        )

        def trainer(train_part: Table, test_part: Table, model_seed: int):
            X, y, _ = table_to_xy(train_part, cfg.response)
            Xt, yt, _ = table_to_xy(test_part, cfg.response)
            if cfg.model_kind == "rf":
                model = fit_forest(X, y, _resolve_rf_params(self.chosen_params, model_seed))
                return yt, predict_forest_matrix(model, Xt)
            model = fit_gbm(X, y, _resolve_gbm_params(self.chosen_params, model_seed))
            return yt, predict_gbm_matrix(model, Xt)

        return realizations(trainer, data, cfg.split_spec, count, cfg.seed,
                            n_workers=self.n_workers)

    def report(self):
        self._write_json(
            "manifest.json",
            {
                "artifact_version": __version__,
                "model": self.cfg.model_kind,
                "files": sorted(set(self.artifacts)),
            },
        )


def _lstm_train_config(params: dict, seed: int) -> LstmTrainConfig:
    allowed = {
        f.name for f in dataclasses.fields(LstmTrainConfig) if f.name != "seed"
    }
    unknown = sorted(set(params) - allowed - {"window"})
    if unknown:
        raise ConfigError(f"unknown lstm params: {unknown}")
    kwargs = {k: v for k, v in params.items() if k in allowed}
    return LstmTrainConfig(seed=seed, **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def read_monthly_csv(path) -> dict:
    """Per-well series from a (well_id, month, production) CSV, sorted by month."""
    t = load_csv(path, schema_hints={"month": NUMERIC, "production": NUMERIC})
    for col in ("well_id", "month", "production"):
        if col not in t.names:
            raise ValueError(f"monthly CSV must have well_id, month, production columns")
    if t.column_mask("month").any() or t.column_mask("production").any():
        raise ValueError("monthly CSV cannot have missing month/production cells")
    wells: dict = {}
    j = t.index("well_id")
    labels = t.labels[j]
    for i in range(t.n_rows):
        wid = labels[int(t.values[j, i])] if labels is not None else repr(t.values[j, i])
        wells.setdefault(wid, []).append((t.column_values("month")[i], t.column_values("production")[i]))
    return {
        wid: np.array([v for _, v in sorted(points, key=lambda mv: mv[0])])
        for wid, points in wells.items()
    }


def run_pipeline(cfg: PipelineConfig, out_dir, stop_after: str | None = None,
                 n_workers: int = 1) -> Path:
    """Execute the staged workflow; returns the artifact directory.

    On failure a FAILED file naming the stage is left beside whatever partial
    artifacts exist, and a StageError is raised.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}")
    run = PipelineRun(cfg, out_dir, n_workers=n_workers)
    failed_marker = run.out / "FAILED"
    if failed_marker.exists():
        failed_marker.unlink()
    for stage in STAGES:
        try:
            getattr(run, stage)()
        except Exception as e:
            failed_marker.write_text(f"stage: {stage}\nerror: {e}\n", encoding="utf-8")
            raise StageError(stage, e) from e
        if stage == stop_after:
            break
    return run.out


def regenerate_reports(out_dir) -> list:
    """Rebuild every figure in a run directory from its CSV sidecar."""
    out = Path(out_dir)
    rebuilt = []
    meta = ""
    manifest = out / "manifest.json"
    metrics_file = out / "metrics.json"
    for source in (manifest, metrics_file):
        if source.exists():
            doc = json.loads(source.read_text(encoding="utf-8"))
            meta = f"config={doc.get('config_hash', '')} seed={doc.get('seed', '')}"
            break
    units = ""
    if metrics_file.exists():
        units = json.loads(metrics_file.read_text(encoding="utf-8"))["metrics"].get("units", "")
    hist_xlabel = f"RMSE ({units})" if units else "RMSE"
    uncertainty_doc = None
    if (out / "uncertainty.json").exists():
        uncertainty_doc = json.loads((out / "uncertainty.json").read_text(encoding="utf-8"))
    for svg in sorted(out.glob("*.svg")):
        sidecar = svg.with_suffix(".csv")
        if not sidecar.exists():
            continue
        ci = None
        if svg.stem.startswith("uncertainty_") and uncertainty_doc:
            count = svg.stem.split("_", 1)[1]
            rep = uncertainty_doc["realizations"].get(count)
            if rep:
                ci = (rep["ci_lo"], rep["ci_hi"])
        regenerate_figure(sidecar, svg, ci=ci, meta=meta, xlabel=hist_xlabel, units=units)
        rebuilt.append(svg.name)
    return rebuilt
