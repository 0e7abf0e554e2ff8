"""Config-driven pipeline: stages, artifact writing, and determinism stamping.

A run parses one INI-style config, executes the requested stages in canonical
order against a shared in-memory context, and writes every artifact into the
output directory stamped with the config hash and seed. Identical
(config, seed, input) runs produce byte-identical artifact trees.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .balance import balance_table, love_plot_data, write_love_plot_csv
from .data_model import Dataset, impute_group_mean, load_dataset, write_dataset_csv
from .errors import CausalGapError, StageError
from .estimators import EffectEstimate, Method, ate_iptw, ate_ps_adjust, att_psm, match_nn
from .forest import (
    ForestHyper,
    fit_nuisances,
    grow_forest,
    ite_summary,
    overlap_ate,
    predict_cate,
    write_ite_by_group_csv,
)
from .propensity import estimate_propensity, positivity_check
from .report import ols_effect, summary_table
from .sensitivity import contour_data, sensitivity_report
from .simulate import DgpSpec, generate
from .data_model import DesignSpec, Term, build_design, main_effects_spec
from .estimation import fit_ols

STAGES = (
    "simulate",
    "ingest",
    "impute",
    "ols",
    "ols-interact",
    "ps",
    "match",
    "iptw",
    "ps-adjust",
    "forest",
    "balance",
    "sensitivity",
    "report",
)

# Keeps the forest's tree streams disjoint from the generator's data streams.
_FOREST_SEED_OFFSET = 1_000_003


@dataclass
class RunConfig:
    seed: int
    out_dir: Path
    stages: list[str]
    raw_text: str
    parser: configparser.ConfigParser

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()

    def get(self, section: str, key: str, fallback: str | None = None) -> str | None:
        if self.parser.has_option(section, key):
            value = self.parser.get(section, key).strip()
            return value if value != "" else fallback
        return fallback

    def getfloat(self, section: str, key: str, fallback: float) -> float:
        value = self.get(section, key)
        return float(value) if value is not None else fallback

    def getint(self, section: str, key: str, fallback: int) -> int:
        value = self.get(section, key)
        return int(value) if value is not None else fallback

    def getbool(self, section: str, key: str, fallback: bool) -> bool:
        value = self.get(section, key)
        if value is None:
            return fallback
        return value.lower() in ("1", "true", "yes", "on")


def load_config(
    path: str | Path,
    *,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    stages: list[str] | None = None,
) -> RunConfig:
    """Parse the config file; CLI overrides replace [run] values."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(text)
    run_seed = seed if seed is not None else int(parser.get("run", "seed", fallback="0"))
    run_out = Path(out_dir) if out_dir is not None else Path(parser.get("run", "out_dir", fallback="out"))
    if stages is None:
        raw = parser.get("run", "stages", fallback="")
        if raw.strip():
            stages = [s.strip() for s in raw.split(",") if s.strip()]
        else:
            stages = list(STAGES) if parser.has_section("simulate") else list(STAGES[1:])
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise StageError("config", f"unknown stages: {unknown}")
    ordered = [s for s in STAGES if s in stages]
    return RunConfig(seed=run_seed, out_dir=run_out, stages=ordered, raw_text=text, parser=parser)


@dataclass
class PipelineContext:
    config: RunConfig
    dataset: Dataset | None = None
    truth: object | None = None
    ps = None
    match = None
    iptw_weights: np.ndarray | None = None
    estimates: dict[Method, EffectEstimate] = dc_field(default_factory=dict)
    artifacts: list[str] = dc_field(default_factory=list)


def _stamp(path: Path, cfg: RunConfig) -> None:
    body = path.read_text(encoding="utf-8")
    header = f"# config_sha256={cfg.config_hash} seed={cfg.seed}\n"
    path.write_text(header + body, encoding="utf-8")


def _emit(ctx: PipelineContext, name: str) -> Path:
    path = ctx.config.out_dir / name
    ctx.artifacts.append(name)
    return path


def _finish_artifact(ctx: PipelineContext, path: Path) -> None:
    _stamp(path, ctx.config)


def _require_dataset(ctx: PipelineContext, stage: str) -> Dataset:
    if ctx.dataset is None:
        raise StageError(stage, "no dataset loaded; run the ingest stage first")
    return ctx.dataset


def _stage_simulate(ctx: PipelineContext) -> None:
    cfg = ctx.config
    spec = DgpSpec(
        n=cfg.getint("simulate", "n", 4000),
        seed=cfg.seed,
        effect=cfg.getfloat("simulate", "effect", -0.03),
        noise_sd=cfg.getfloat("simulate", "noise_sd", 0.09),
        profile_prob=cfg.getfloat("simulate", "profile_prob", 1.0),
    )
    dataset, truth = generate(spec)
    ctx.truth = truth
    csv_path = _emit(ctx, "input.csv")
    write_dataset_csv(dataset, csv_path)
    truth_path = _emit(ctx, "truth.csv")
    with truth_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        writer.writerow(["ate", repr(truth.ate)])
        writer.writerow(["att", repr(truth.att)])
        writer.writerow(["overlap_ate", repr(truth.overlap_ate)])
        writer.writerow(["naive_diff", repr(truth.naive_diff)])
    _finish_artifact(ctx, truth_path)


def _stage_ingest(ctx: PipelineContext) -> None:
    cfg = ctx.config
    default_path = str(cfg.out_dir / "input.csv") if "simulate" in cfg.stages else None
    path = cfg.get("input", "path", default_path)
    if path is None:
        raise StageError("ingest", "no input path configured and no simulated file")
    schema_overrides = {}
    from .data_model import DEFAULT_SCHEMA

    schema = dict(DEFAULT_SCHEMA)
    for field_name in DEFAULT_SCHEMA:
        override = cfg.get("input", f"col_{field_name}")
        if override:
            schema[field_name] = override
    schema.update(schema_overrides)
    floor = cfg.getfloat("input", "salary_floor", 27_000.0)
    ctx.dataset = load_dataset(path, schema=schema, salary_floor=floor)
    report_path = _emit(ctx, "load_report.txt")
    ctx.dataset.load_report.write(report_path)
    _finish_artifact(ctx, report_path)


def _stage_impute(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "impute")
    keys_raw = cfg.get("impute", "group_keys", "treatment,department,title")
    keys = tuple(k.strip() for k in keys_raw.split(",") if k.strip())
    scale = cfg.get("impute", "scale", "log")
    ctx.dataset = impute_group_mean(d, keys, scale=scale)
    report_path = _emit(ctx, "load_report.txt")
    ctx.dataset.load_report.write(report_path)
    _finish_artifact(ctx, report_path)
    if "load_report.txt" in ctx.artifacts[:-1]:
        ctx.artifacts.remove("load_report.txt")


def _stage_ols(ctx: PipelineContext, interact: bool) -> None:
    d = _require_dataset(ctx, "ols-interact" if interact else "ols")
    include_flag = ctx.config.getbool("report", "include_profile_flag", False)
    est = ols_effect(d, interact=interact, include_profile_flag=include_flag)
    ctx.estimates[est.method] = est


def _stage_ps(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "ps")
    ctx.ps = estimate_propensity(d)
    band = (cfg.getfloat("propensity", "band_lo", 0.05), cfg.getfloat("propensity", "band_hi", 0.95))
    overlap = positivity_check(ctx.ps, band)
    path = _emit(ctx, "overlap_hist.csv")
    overlap.write_csv(path)
    _finish_artifact(ctx, path)


def _stage_match(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "match")
    if ctx.ps is None:
        raise StageError("match", "propensity stage has not run")
    ctx.match = match_nn(ctx.ps, caliper_mult=cfg.getfloat("match", "caliper", 0.2))
    path = _emit(ctx, "matches.csv")
    ctx.match.write_csv(path)
    _finish_artifact(ctx, path)
    est = att_psm(d, ctx.match, pair_clustered=cfg.getbool("match", "pair_clustered", False))
    ctx.estimates[est.method] = est


def _stage_iptw(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "iptw")
    if ctx.ps is None:
        raise StageError("iptw", "propensity stage has not run")
    truncate = cfg.get("iptw", "truncate")
    q = float(truncate) if truncate is not None else None
    est = ate_iptw(d, ctx.ps, truncate_at=q)
    from .estimators import iptw_weights

    ctx.iptw_weights = iptw_weights(ctx.ps, q)
    ctx.estimates[est.method] = est


def _stage_ps_adjust(ctx: PipelineContext) -> None:
    d = _require_dataset(ctx, "ps-adjust")
    if ctx.ps is None:
        raise StageError("ps-adjust", "propensity stage has not run")
    est = ate_ps_adjust(d, ctx.ps)
    ctx.estimates[est.method] = est


def _stage_forest(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "forest")
    mtry_raw = cfg.get("forest", "mtry")
    hyper = ForestHyper(
        num_trees=cfg.getint("forest", "trees", 500),
        min_node_size=cfg.getint("forest", "min_node_size", 5),
        subsample_fraction=cfg.getfloat("forest", "subsample_fraction", 0.5),
        mtry=int(mtry_raw) if mtry_raw is not None else None,
        honesty_fraction=cfg.getfloat("forest", "honesty_fraction", 0.5),
        threads=cfg.getint("forest", "threads", 1),
    )
    nuisance = fit_nuisances(d, folds=cfg.getint("forest", "folds", 5))
    forest = grow_forest(d, nuisance, hyper, master_seed=cfg.seed + _FOREST_SEED_OFFSET)
    cate = predict_cate(forest)
    ite_path = _emit(ctx, "ite.csv")
    cate.write_csv(ite_path)
    _finish_artifact(ctx, ite_path)

    group_field = cfg.get("forest", "ite_group_by", "working_years")
    rows, _notes = ite_summary(cate, d.column(group_field))
    group_path = _emit(ctx, "ite_by_group.csv")
    write_ite_by_group_csv(rows, group_path)
    _finish_artifact(ctx, group_path)

    est = overlap_ate(forest, d)
    ctx.estimates[est.method] = est


def _stage_balance(ctx: PipelineContext) -> None:
    d = _require_dataset(ctx, "balance")
    if ctx.match is not None:
        adjustment = ctx.match
    elif ctx.iptw_weights is not None:
        adjustment = ctx.iptw_weights
    else:
        raise StageError("balance", "no adjustment available; run match or iptw first")
    table = balance_table(d, adjustment=adjustment)
    bal_path = _emit(ctx, "balance.csv")
    table.write_csv(bal_path)
    _finish_artifact(ctx, bal_path)
    love_path = _emit(ctx, "love_plot.csv")
    write_love_plot_csv(love_plot_data(table), love_path)
    _finish_artifact(ctx, love_path)


def _stage_sensitivity(ctx: PipelineContext) -> None:
    cfg = ctx.config
    d = _require_dataset(ctx, "sensitivity")
    include_flag = cfg.getbool("report", "include_profile_flag", False)
    spec = main_effects_spec(include_profile_flag=include_flag)
    full = DesignSpec(terms=(Term(("treatment",)), *spec.terms), intercept=True)
    design = build_design(d, full)
    fit = fit_ols(design, d.outcome_log)
    report = sensitivity_report(fit, design, d.outcome_log, alpha=cfg.getfloat("sensitivity", "alpha", 0.05))
    rep_path = _emit(ctx, "sensitivity.txt")
    report.write(rep_path)
    _finish_artifact(ctx, rep_path)
    grid = contour_data(
        report.estimate, report.se, report.dof, grid=cfg.getint("sensitivity", "grid", 41)
    )
    grid_path = _emit(ctx, "contours.csv")
    grid.write_csv(grid_path)
    _finish_artifact(ctx, grid_path)


def _stage_report(ctx: PipelineContext) -> None:
    d = _require_dataset(ctx, "report") if ctx.dataset is not None else None
    if d is None or not ctx.estimates:
        raise StageError("report", "no inputs")
    table = summary_table(d, list(ctx.estimates.values()))
    csv_path = _emit(ctx, "summary.csv")
    table.write_csv(csv_path)
    _finish_artifact(ctx, csv_path)
    txt_path = _emit(ctx, "summary.txt")
    txt_path.write_text(table.format(), encoding="utf-8")
    _finish_artifact(ctx, txt_path)

    if ctx.truth is not None:
        rec_path = _emit(ctx, "recovery.csv")
        truth_by_estimand = {
            "ATT": ctx.truth.att,
            "ATE": ctx.truth.ate,
            "OVERLAP_ATE": ctx.truth.overlap_ate,
        }
        with rec_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "estimand", "beta", "se", "truth", "within_2se"])
            for est in ctx.estimates.values():
                target = truth_by_estimand[est.estimand.value]
                flag = abs(est.beta - target) <= 2.0 * est.se
                writer.writerow(
                    [
                        est.method.value,
                        est.estimand.value,
                        repr(est.beta),
                        repr(est.se),
                        repr(target),
                        int(flag),
                    ]
                )
        _finish_artifact(ctx, rec_path)


_STAGE_FUNCS = {
    "simulate": _stage_simulate,
    "ingest": _stage_ingest,
    "impute": _stage_impute,
    "ols": lambda ctx: _stage_ols(ctx, interact=False),
    "ols-interact": lambda ctx: _stage_ols(ctx, interact=True),
    "ps": _stage_ps,
    "match": _stage_match,
    "iptw": _stage_iptw,
    "ps-adjust": _stage_ps_adjust,
    "forest": _stage_forest,
    "balance": _stage_balance,
    "sensitivity": _stage_sensitivity,
    "report": _stage_report,
}


def run_pipeline(
    config_path: str | Path,
    *,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    stages: list[str] | None = None,
) -> Path:
    """Execute the configured stages; returns the artifact directory.

    A stage failure aborts the run with the stage name attached; artifacts
    from completed stages remain on disk.
    """
    cfg = load_config(config_path, seed=seed, out_dir=out_dir, stages=stages)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ctx = PipelineContext(config=cfg)
    for stage in cfg.stages:
        func = _STAGE_FUNCS[stage]
        try:
            func(ctx)
        except StageError:
            raise
        except CausalGapError as err:
            raise StageError(stage, str(err)) from err

    manifest = cfg.out_dir / "run_manifest.txt"
    lines = [
        f"config_sha256: {cfg.config_hash}",
        f"seed: {cfg.seed}",
        f"causalgap_version: {__version__}",
        f"numpy_version: {np.__version__}",
        f"stages: {','.join(cfg.stages)}",
        f"artifacts: {','.join(sorted(set(ctx.artifacts)))}",
    ]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cfg.out_dir
