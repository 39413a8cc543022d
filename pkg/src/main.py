"""
Main entry point for the dmfi command-line pipeline.
"""
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
from dotenv import load_dotenv

from src.common_utils import echo_config, open_text, read_jsonl, write_json, write_jsonl, write_text
from src.errors import EXIT_OK, EXIT_USAGE, BackendError, DataError, DmfiError, UsageError
from src.eval_tools import (
    REFERENCE_ROWS,
    ablation_report,
    default_thetas,
    evaluate_bundles,
    render_text,
    run_name,
    threshold_sweep,
    view_ablation_report,
)
from src.fusion_tools import fuse_scores, score_corpus, train_fusion, training_set
from src.ingest_tools import (
    load_cert_directory,
    load_corpus,
    make_corpus,
    parse_unified_csv,
    read_labels_csv,
    save_corpus,
    split_train_test,
    undersample,
)
from src.models.domain import Label, LabeledCorpus
from src.models.fusion import AggregationMode, MlpParams, ScoreBundle, ViewSet
from src.models.prompts import Modality, Strategy
from src.models.reports import ComparisonReport
from src.models.scoring import SessionScores
from src.models.synth import SynthConfig
from src.prompt_tools import export_sft
from src.schemas.mapping_manager import MappingManager
from src.scorer_tools import backend_calls, build_scorers
from src.settings import PipelineConfig, load_config
from src.synth_tools import generate_events
from src.telemetry import setup_telemetry, shutdown_telemetry, stage_span
from src.view_tools import build_device_profile, compression_stats, export_narratives

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)

TRAIN_SCORES = "train_scores.jsonl"
TEST_SCORES = "test_scores.jsonl"
BUNDLES = "bundles.jsonl"


def _config(ctx: click.Context, **overrides) -> PipelineConfig:
    """Effective config: command flags over global flags over --config file over env"""
    merged = {**ctx.obj["overrides"], **{k: v for k, v in overrides.items() if v is not None}}
    config = load_config(ctx.obj["config_file"], merged)
    logging.getLogger().setLevel(config.log_level)
    setup_telemetry(config.telemetry)
    return config


def _work_path(config: PipelineConfig, given: Optional[Path], name: str) -> Path:
    return given if given is not None else config.work_dir / name


def _load_scores(path: Path) -> List[SessionScores]:
    try:
        return [SessionScores.model_validate(r) for r in read_jsonl(path)]
    except ValueError as e:
        raise DataError(f"invalid score record in {path}: {e}") from e


def _load_bundles(path: Path) -> List[ScoreBundle]:
    try:
        return [ScoreBundle.model_validate(r) for r in read_jsonl(path)]
    except ValueError as e:
        raise DataError(f"invalid score bundle in {path}: {e}") from e


def _write_records(path: Path, records: Sequence, config: PipelineConfig) -> int:
    count = write_jsonl(path, (r.model_dump(mode="json") for r in records))
    echo_config(path, config.effective())
    return count


def _split(corpus: LabeledCorpus, config: PipelineConfig):
    train, test = split_train_test(corpus, config.split_spec())
    return undersample(train, config.split_spec()), test


async def _score_sides(config: PipelineConfig, ctx, sides: Dict[str, LabeledCorpus]):
    scorers = build_scorers(config)
    try:
        results = {}
        for name, corpus in sides.items():
            results[name] = await score_corpus(corpus, scorers, ctx, config.parallelism, ViewSet.BOTH)
        return results, backend_calls(scorers)
    finally:
        for scorer in scorers.values():
            await scorer.aclose()


def _check_scored(records: List[SessionScores], what: str):
    failed = [r for r in records if not r.scored]
    if records and len(failed) == len(records):
        raise BackendError(f"no {what} session could be scored; {failed[0].key_str}: {failed[0].errors[0]}")
    if failed:
        logger.warning(f"{len(failed)} of {len(records)} {what} sessions are unscored")


def scoring_options(f):
    """Flags shared by the commands that call scorer backends"""
    options = [
        click.option("--strategy", type=click.Choice([s.value for s in Strategy]), default=None),
        click.option("--backend", type=click.Choice(["mock", "http"]), default=None),
        click.option("--endpoint", default=None, help="Scoring endpoint (env DMFI_ENDPOINT)"),
        click.option("--parallelism", type=int, default=None),
        click.option("--cache-file", type=click.Path(path_type=Path), default=None),
        click.option("--cache/--no-cache", "use_cache", default=None),
        click.option("--strict-parse/--no-strict-parse", default=None),
        click.option("--mock-rules", type=click.Path(path_type=Path), default=None),
        click.option("--margin-scale", type=float, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def seed_option(f):
    return click.option("--seed", type=int, default=None, help="Random seed, overriding the group --seed")(f)


@click.group()
@click.option("--config", "config_file", type=click.Path(path_type=Path), default=None, help="JSON config file")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
@click.option("--seed", type=int, default=None)
@click.option("--work-dir", type=click.Path(path_type=Path), default=None)
@click.pass_context
def cli(ctx: click.Context, config_file, log_level, seed, work_dir):
    """Dual-modality insider threat detection pipeline."""
    load_dotenv()
    logging.basicConfig(level=(log_level or "INFO").upper(), format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj["config_file"] = config_file
    ctx.obj["overrides"] = {
        k: v for k, v in {"log_level": log_level, "seed": seed, "work_dir": work_dir}.items() if v is not None
    }


@cli.command()
@click.option("--users", type=int, default=10)
@click.option("--days", type=int, default=5)
@click.option("--scenario-rate", type=float, default=0.1)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@seed_option
@click.pass_context
def synth(ctx, users, days, scenario_rate, out_dir, seed):
    """Generate a synthetic labeled corpus."""
    config = _config(ctx, seed=seed)
    try:
        synth_config = SynthConfig(
            users=users, days=days, seed=config.seed, scenario_rate=scenario_rate,
            corporate_domain=config.corporate_domain, calendar=config.calendar(),
        )
    except ValueError as e:
        raise UsageError(f"invalid synth options: {e}") from e
    with stage_span("synth", users=users, days=days):
        events, injected = generate_events(synth_config)
        save_corpus(events, injected.keys(), out_dir)
        echo_config(out_dir, {**config.effective(), "synth": synth_config.model_dump(mode="json")})
    click.echo(json.dumps({"events": len(events), "abnormal_sessions": len(injected), "out": str(out_dir)}))


@cli.command()
@click.option("--cert", "cert_dir", type=click.Path(path_type=Path), default=None, help="Directory of CERT source CSVs")
@click.option("--unified", type=click.Path(path_type=Path), default=None, help="Unified events CSV")
@click.option("--labels", type=click.Path(path_type=Path), default=None, help="Abnormal user,date CSV")
@click.option("--timezone", default=None)
@click.option("--mapping-dir", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.pass_context
def ingest(ctx, cert_dir, unified, labels, timezone, mapping_dir, out_dir):
    """Parse CERT or unified CSV logs into daily sessions."""
    if (cert_dir is None) == (unified is None):
        raise UsageError("give exactly one of --cert or --unified")
    config = _config(ctx, timezone=timezone, mapping_dir=mapping_dir)
    with stage_span("ingest", source=cert_dir or unified):
        if cert_dir is not None:
            manager = MappingManager(config.mapping_dir) if config.mapping_dir else None
            events = asyncio.run(load_cert_directory(cert_dir, manager, tz=config.timezone))
        else:
            if not unified.exists():
                raise DataError(f"missing file {unified}")
            with open_text(unified) as f:
                events = parse_unified_csv(f, source=str(unified), tz=config.timezone)
        abnormal = set()
        if labels is not None:
            if not labels.exists():
                raise DataError(f"missing file {labels}")
            with open_text(labels) as f:
                abnormal = read_labels_csv(f, source=str(labels))
        corpus = make_corpus(events, abnormal, provenance=str(cert_dir or unified))
        save_corpus(events, corpus.abnormal_index, out_dir)
        sessions_path = out_dir / "sessions.jsonl"
        write_jsonl(sessions_path, (
            {"user": s.user, "day": s.day.isoformat(), "label": s.label.word, "events": len(s.events)}
            for s in corpus.sessions
        ))
        echo_config(out_dir, config.effective())
    click.echo(json.dumps({**corpus.counts(), "events": len(events), "out": str(out_dir)}))


@cli.command()
@click.option("--in", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Narratives JSONL")
@click.option("--stats", is_flag=True, help="Print per-session token counts and the mean compression ratio")
@click.option("--compress-after-hours/--no-compress-after-hours", default=None)
@click.pass_context
def abstract(ctx, corpus_dir, out, stats, compress_after_hours):
    """Render 4W behavior narratives for every session."""
    config = _config(ctx, compress_after_hours=compress_after_hours)
    with stage_span("abstract", corpus=corpus_dir):
        corpus = load_corpus(corpus_dir)
        view_ctx = config.view_context(build_device_profile(corpus.sessions))
        out = _work_path(config, out, "narratives.jsonl")
        count = export_narratives(corpus.sessions, view_ctx, out)
        echo_config(out, config.effective())
        logger.info(f"Wrote {count} narratives to {out}")
        if stats:
            summary = compression_stats(corpus.sessions, view_ctx)
            write_json(out.with_name(out.stem + ".stats.json"), summary)
            for row in summary["sessions"]:
                click.echo(
                    f"{row['user']} {row['day']} {row['original_tokens']} -> {row['compressed_tokens']} tokens "
                    f"({row['original_sentences']} -> {row['compressed_sentences']} sentences)"
                )
            click.echo(f"mean compression ratio {summary['mean_ratio']:.4f}")


@cli.command("export-sft")
@click.option("--in", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]), default=None)
@click.option("--modality", type=click.Choice(["semantic", "behavioral", "both"]), default="both")
@click.option("--all-sessions", is_flag=True, help="Export the whole corpus instead of the undersampled training side")
@seed_option
@click.pass_context
def export_sft_command(ctx, corpus_dir, out_dir, strategy, modality, all_sessions, seed):
    """Write instruction/input/output JSONL for fine-tuning."""
    config = _config(ctx, strategy=strategy, seed=seed)
    modalities = list(Modality) if modality == "both" else [Modality(modality)]
    with stage_span("export-sft", strategy=config.strategy.value):
        corpus = load_corpus(corpus_dir)
        view_ctx = config.view_context(build_device_profile(corpus.sessions))
        source = corpus if all_sessions else _split(corpus, config)[0]
        summary = {}
        for m in modalities:
            result = export_sft(
                source, config.strategy, m, out_dir / f"{m.value}.jsonl", view_ctx, seed=config.seed,
                normal_score=config.sft_normal_score, abnormal_score=config.sft_abnormal_score,
            )
            for path in result.paths:
                echo_config(path, config.effective())
            summary[m.value] = result.counts
    click.echo(json.dumps(summary))


@cli.command()
@click.option("--in", "corpus_dir", type=click.Path(path_type=Path), required=True)
@scoring_options
@seed_option
@click.pass_context
def score(ctx, corpus_dir, **flags):
    """Score the train and test sides of a corpus, filling the score cache."""
    config = _config(ctx, **flags)
    with stage_span("score", strategy=config.strategy.value, backend=config.backend.value):
        corpus = load_corpus(corpus_dir)
        train, test = _split(corpus, config)
        view_ctx = config.view_context(build_device_profile(corpus.sessions))
        results, calls = asyncio.run(_score_sides(config, view_ctx, {"train": train, "test": test}))
        for name, records in results.items():
            _check_scored(records, name)
        _write_records(config.work_dir / TRAIN_SCORES, results["train"], config)
        _write_records(config.work_dir / TEST_SCORES, results["test"], config)
    logger.info(f"Backend calls: {calls}")
    click.echo(json.dumps({
        "train_sessions": len(results["train"]),
        "test_sessions": len(results["test"]),
        "backend_calls": calls,
    }))


@cli.command("fuse-train")
@click.option("--scores", type=click.Path(path_type=Path), default=None, help="Training SessionScores JSONL")
@click.option("--params-out", "params_file", type=click.Path(path_type=Path), default=None)
@click.option("--aggregation", type=click.Choice([m.value for m in AggregationMode]), default=None)
@click.option("--views", type=click.Choice([v.value for v in ViewSet]), default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@seed_option
@click.pass_context
def fuse_train(ctx, scores, params_file, **flags):
    """Train the fusion MLP on stored training scores."""
    config = _config(ctx, params_file=params_file, **flags)
    with stage_span("fuse-train", mode=config.aggregation.value):
        records = _load_scores(_work_path(config, scores, TRAIN_SCORES))
        params, loss = train_fusion(training_set(records), config.fusion_hyper())
        target = config.resolved_params_file()
        params.save(target)
        echo_config(target, config.effective())
    click.echo(json.dumps({"params": str(target), "final_loss": loss, "sessions": len(records)}))


@cli.command()
@click.option("--in", "corpus_dir", type=click.Path(path_type=Path), default=None, help="Score this corpus afresh")
@click.option("--scores", type=click.Path(path_type=Path), default=None, help="Stored SessionScores JSONL")
@click.option("--params", "params_file", type=click.Path(path_type=Path), default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@scoring_options
@click.pass_context
def detect(ctx, corpus_dir, scores, params_file, threshold, out, **flags):
    """Run multi-modality inference and write ScoreBundles."""
    if corpus_dir is not None and scores is not None:
        raise UsageError("give at most one of --in or --scores")
    config = _config(ctx, params_file=params_file, threshold=threshold, **flags)
    params = MlpParams.load(config.resolved_params_file())
    with stage_span("detect", mode=params.mode.value):
        if corpus_dir is not None:
            corpus = load_corpus(corpus_dir)
            view_ctx = config.view_context(build_device_profile(corpus.sessions))
            results, _ = asyncio.run(_score_sides(config, view_ctx, {"corpus": corpus}))
            records = results["corpus"]
            _check_scored(records, "corpus")
        else:
            records = _load_scores(_work_path(config, scores, TEST_SCORES))
        bundles = fuse_scores(records, params, threshold)
        target = _work_path(config, out, BUNDLES)
        _write_records(target, bundles, config)
    flagged = sum(1 for b in bundles if b.prediction is Label.ABNORMAL)
    click.echo(json.dumps({"sessions": len(bundles), "abnormal": flagged, "out": str(target)}))


def _emit_report(report, target: Path, config: PipelineConfig, references=()):
    payload = report.model_dump(mode="json")
    payload["config"] = config.effective()
    if references:
        payload["references"] = [r.model_dump() for r in references]
    write_json(target, payload)
    text = render_text(report, references)
    write_text(target.with_suffix(".txt"), text)
    click.echo(text, nl=False)


@cli.command("eval")
@click.option("--bundles", type=click.Path(path_type=Path), default=None)
@click.option("--ablation", is_flag=True, help="Retrain and evaluate once per aggregation mode")
@click.option("--views-ablation", is_flag=True, help="Retrain and evaluate once per input view set")
@click.option("--sweep", is_flag=True, help="Metrics over a grid of thresholds")
@click.option("--train-scores", type=click.Path(path_type=Path), default=None)
@click.option("--test-scores", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Report JSON")
@seed_option
@click.pass_context
def eval_command(ctx, bundles, ablation, views_ablation, sweep, train_scores, test_scores, out, seed):
    """Compute detection metrics and comparison reports."""
    config = _config(ctx, seed=seed)
    with stage_span("eval", ablation=ablation, views_ablation=views_ablation, sweep=sweep):
        if ablation or views_ablation:
            train = _load_scores(_work_path(config, train_scores, TRAIN_SCORES))
            test = _load_scores(_work_path(config, test_scores, TEST_SCORES))
            hyper = config.fusion_hyper()
            if ablation:
                report = ablation_report(train, test, list(AggregationMode), hyper)
                _emit_report(report, _work_path(config, out, "ablation.json"), config)
            if views_ablation:
                target = out.with_name(out.stem + ".views.json") if out and ablation else out
                report = view_ablation_report(train, test, hyper)
                _emit_report(report, _work_path(config, target, "views_ablation.json"), config)
            return

        records = _load_bundles(_work_path(config, bundles, BUNDLES))
        if sweep:
            decided = [b for b in records if b.scored and b.truth is not None]
            rows = threshold_sweep([b.alpha_joint for b in decided], [b.truth for b in decided], default_thetas())
            report = ComparisonReport(title="Threshold sweep", rows=rows)
            _emit_report(report, _work_path(config, out, "sweep.json"), config)
            return
        report = evaluate_bundles(records, name=run_name(records, config.strategy, config.aggregation))
        _emit_report(report, _work_path(config, out, "metrics.json"), config, REFERENCE_ROWS["headline"])


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code (0 ok, 1 usage, 2 data, 3 backend)"""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="dmfi", standalone_mode=False)
        return result if isinstance(result, int) else EXIT_OK
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except DmfiError as e:
        logger.error(e.message)
        click.echo(json.dumps(e.to_dict()), err=True)
        return e.exit_code
    finally:
        shutdown_telemetry()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
