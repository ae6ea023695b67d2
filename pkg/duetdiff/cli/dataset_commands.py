"""
Dataset CLI commands.

Render the synthetic corpus, then curate it: filter, annotate, calibrate,
split and summarize.
"""

from pathlib import Path

import click
import numpy as np
from flask.cli import AppGroup

from duetdiff.cli import config_option, resolve_run_config, write_resolved_config
from duetdiff.middleware.error_handlers import cli_errors
from duetdiff.models.annotation import CalibrationResult
from duetdiff.utils.constants import RECORDS_FILE, ReviewReason, Split
from duetdiff.utils.exceptions import DuplicateDetectionError
from duetdiff.utils.formatters import format_percentage

dataset_cli = AppGroup("dataset", help="Dataset building and curation commands.")

out_option = click.option(
    "--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory."
)
records_option = click.option(
    "--records",
    "records_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Input records (JSON Lines).",
)


@dataset_cli.command("synth")
@click.option("--count", type=int, default=None, help="Number of records to render")
@click.option("--seed", type=int, default=None, help="Corpus seed")
@click.option("--detector-jitter", type=float, default=None, help="Std of simulated detector noise")
@out_option
@config_option
@cli_errors
def synth(count, seed, detector_jitter, out_dir, config_path):
    """Render a synthetic two-identity corpus with simulated detections."""
    from duetdiff.services import ArtifactService, SynthService

    run_config = resolve_run_config(config_path, {"count": count, "seed": seed, "detector_jitter": detector_jitter})
    samples = SynthService.make_dataset(run_config["count"], run_config["seed"])
    rng = np.random.default_rng([run_config["seed"], 1])

    records, grounding, detections = [], [], []
    for sample in samples:
        image_path = f"images/{sample.record.image_id}.png"
        ArtifactService.write_png(sample.image, out_dir / image_path)
        record = sample.record.with_changes(image_path=image_path)
        records.append(record)
        llava, sets = SynthService.simulate_detections(record, rng, jitter=run_config["detector_jitter"])
        grounding.append({"image_id": record.image_id, "boxes": [b.to_list() for b in llava]})
        detections.extend(sets)

    ArtifactService.write_jsonl(records, out_dir / RECORDS_FILE)
    ArtifactService.write_jsonl(grounding, out_dir / "llava.jsonl")
    ArtifactService.write_jsonl(detections, out_dir / "detections.jsonl")
    write_resolved_config(out_dir, run_config, "dataset synth")
    click.echo(f"Rendered {len(records)} records into {out_dir}")


@dataset_cli.command("filter")
@records_option
@click.option("--min-dim", type=int, default=None, help="Minimum smaller image side (exclusive)")
@out_option
@config_option
@cli_errors
def filter_records(records_path, min_dim, out_dir, config_path):
    """Drop duplicate, small, non-pair and text-bearing images."""
    from duetdiff.services import AnnotationService, ArtifactService

    run_config = resolve_run_config(config_path, {"min_dim": min_dim})
    records = ArtifactService.read_records(records_path)
    kept, rejected = AnnotationService.filter_records(records, run_config["min_dim"])

    ArtifactService.write_jsonl(kept, out_dir / RECORDS_FILE)
    ArtifactService.write_jsonl(
        [{"image_id": r.image_id, "reason": reason} for r, reason in rejected], out_dir / "rejected.jsonl"
    )
    write_resolved_config(out_dir, run_config, "dataset filter")
    click.echo(f"Kept {len(kept)} of {len(records)} records")


@dataset_cli.command("annotate")
@records_option
@out_option
@config_option
@cli_errors
def annotate(records_path, out_dir, config_path):
    """Match caption mentions to persons, derive face boxes and compositions."""
    from duetdiff.services import AnnotationService, ArtifactService

    run_config = resolve_run_config(config_path, {})
    records = [AnnotationService.annotate(r) for r in ArtifactService.read_records(records_path)]
    flagged = sum(1 for r in records if r.review_flag)

    ArtifactService.write_jsonl(records, out_dir / RECORDS_FILE)
    write_resolved_config(out_dir, run_config, "dataset annotate")
    click.echo(f"Annotated {len(records)} records, {flagged} flagged for review")


@dataset_cli.command("calibrate")
@click.option("--llava", "llava_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--detections", "detections_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--iou-dup", type=float, default=None, help="Duplicate threshold on grounding-box IoU")
@click.option("--iou-review", type=float, default=None, help="Review threshold on agreement IoU")
@click.option("--quorum", type=int, default=None, help="Detection sets with two boxes required")
@click.option("--per-person/--per-pair", default=None, help="Choose the nearer detector per person or per pair")
@out_option
@config_option
@cli_errors
def calibrate(llava_path, detections_path, iou_dup, iou_review, quorum, per_person, out_dir, config_path):
    """Calibrate person boxes against several detectors."""
    from duetdiff.services import ArtifactService, CalibrationService

    run_config = resolve_run_config(
        config_path, {"iou_dup": iou_dup, "iou_review": iou_review, "quorum": quorum, "per_person": per_person}
    )
    grounding = ArtifactService.read_grounding(llava_path)
    detections = ArtifactService.read_detections(detections_path)

    results = []
    for image_id in sorted(grounding):
        try:
            result = CalibrationService.calibrate(
                grounding[image_id],
                detections.get(image_id, []),
                iou_dup=run_config["iou_dup"],
                iou_review=run_config["iou_review"],
                quorum=run_config["quorum"],
                per_person=run_config["per_person"],
                image_id=image_id,
            )
        except DuplicateDetectionError:
            result = CalibrationResult(boxes=None, reasons=(ReviewReason.DUPLICATE,), image_id=image_id)
        results.append(result)

    ArtifactService.write_jsonl(results, out_dir / "calibrated.jsonl")
    write_resolved_config(out_dir, run_config, "dataset calibrate")
    review = sum(1 for r in results if r.needs_review)
    click.echo(f"Calibrated {len(results)} images, {review} flagged for review")


@dataset_cli.command("split")
@records_option
@click.option("--ratio", type=float, default=None, help="Train share")
@click.option("--seed", type=int, default=None, help="Split seed")
@click.option("--rare-scene-min", type=int, default=None, help="Scenes rarer than this merge into 'other'")
@out_option
@config_option
@cli_errors
def split(records_path, ratio, seed, rare_scene_min, out_dir, config_path):
    """Label records train/test, stratified by topic, composition and scene."""
    from duetdiff.services import AnnotationService, ArtifactService

    run_config = resolve_run_config(config_path, {"ratio": ratio, "seed": seed, "rare_scene_min": rare_scene_min})
    records = ArtifactService.read_records(records_path)
    labeled = AnnotationService.stratified_split(
        records, ratio=run_config["ratio"], seed=run_config["seed"], rare_scene_min=run_config["rare_scene_min"]
    )

    ArtifactService.write_jsonl(labeled, out_dir / RECORDS_FILE)
    write_resolved_config(out_dir, run_config, "dataset split")
    test = sum(1 for r in labeled if r.split == Split.TEST)
    click.echo(f"Split {len(labeled)} records: {len(labeled) - test} train / {test} test")


@dataset_cli.command("stats")
@records_option
@out_option
@config_option
@cli_errors
def stats(records_path, out_dir, config_path):
    """Write statistics panels as text and CSV tables."""
    from duetdiff.services import ArtifactService, StatsService

    run_config = resolve_run_config(config_path, {})
    report = StatsService.compute_stats(ArtifactService.read_records(records_path))

    ArtifactService.write_text(report.to_text(), out_dir / "stats.txt")
    for name, frame in report.panels.items():
        ArtifactService.write_csv(frame, out_dir / f"{name}.csv")
    write_resolved_config(out_dir, run_config, "dataset stats")
    if report.record_count:
        top = report["topics"].iloc[0]
        click.echo(f"{report.record_count} records; top topic {top['topic']} ({format_percentage(top['share'] * 100)})")
    else:
        click.echo("0 records")
