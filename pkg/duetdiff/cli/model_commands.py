"""
Model CLI commands: train, sample, sweep, saliency and gradcheck.
"""

from pathlib import Path
from typing import Optional, Tuple

import click
import numpy as np
from flask import current_app, has_app_context

from duetdiff.cli import config_option, resolve_run_config, write_resolved_config
from duetdiff.config import RunConfig
from duetdiff.middleware.error_handlers import cli_errors
from duetdiff.utils.constants import (
    BASE_LOSS_CURVE_FILE,
    CHECKPOINT_FILE,
    LOSS_CURVE_FILE,
    ExitCode,
    Split,
)
from duetdiff.utils.exceptions import InputError
from duetdiff.utils.formatters import format_float, format_scientific, format_table

out_option = click.option(
    "--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory."
)
checkpoint_option = click.option(
    "--checkpoint",
    "checkpoint_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Checkpoint written by train.",
)


def sampling_options(f):
    """Flags shared by every sampling command."""
    options = [
        click.option("--steps", type=int, default=None, help="Sampling iterations"),
        click.option("--guidance", type=float, default=None, help="Classifier-free guidance scale"),
        click.option("--stage-split", type=float, default=None, help="Fraction of early iterations"),
        click.option("--seed", type=int, default=None, help="Seed of the initial latent"),
        click.option("--prompt", type=str, default=None, help="Prompt naming two subjects"),
        click.option("--id1-seed", type=int, default=None, help="Identity seed of reference 1"),
        click.option("--id2-seed", type=int, default=None, help="Identity seed of reference 2"),
        click.option("--m-recompute/--m-fixed", default=None, help="Recompute the fusion map every late step"),
        click.option("--m-override", type=float, default=None, help="Force the fusion map to a constant"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


SAMPLING_KEYS = (
    "steps",
    "guidance",
    "stage_split",
    "seed",
    "prompt",
    "id1_seed",
    "id2_seed",
    "m_recompute",
    "m_override",
)


def _sampling_flags(**kwargs) -> dict:
    return {key: kwargs.get(key) for key in SAMPLING_KEYS}


def _show_progress() -> bool:
    return bool(current_app.config.get("SHOW_PROGRESS")) if has_app_context() else False


def _schedule(run_config: RunConfig, metadata: Optional[dict] = None):
    """Training schedule; a checkpoint's stored settings win over the current ones."""
    from duetdiff.services import DiffusionService

    stored = (metadata or {}).get("run_config", {})
    settings = {key: stored.get(key, run_config[key]) for key in ("train_timesteps", "beta_start", "beta_end")}
    return DiffusionService.make_schedule(settings["train_timesteps"], settings["beta_start"], settings["beta_end"])


def _default_scene():
    """Layout whose template caption serves as the default prompt."""
    from duetdiff.services import SynthService

    return SynthService.make_scene(0, np.random.default_rng(0))


def _conditioning(run_config: RunConfig, model) -> Tuple:
    """Bundle and identities for the configured prompt and reference seeds."""
    from duetdiff.models.prompt import PromptSpec
    from duetdiff.services import ConditioningService, SynthService

    caption = run_config["prompt"] or _default_scene().caption
    identities = tuple(SynthService.make_identity(run_config[key]) for key in ("id1_seed", "id2_seed"))
    refs = [SynthService.render_reference(identity) for identity in identities]
    bundle = ConditioningService.build_bundle(PromptSpec.from_caption(caption), refs[0], refs[1], model)
    return bundle, identities


@click.command("train")
@click.option("--records", "records_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--images",
    "images_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Root of record image paths; defaults to the records file's directory",
)
@click.option("--train-steps", type=int, default=None, help="Adapter optimization steps")
@click.option("--base-steps", type=int, default=None, help="Backbone steps before the adapter stage")
@click.option("--batch-size", type=int, default=None, help="Training batch size")
@click.option("--lr", type=float, default=None, help="Adapter learning rate")
@click.option("--cond-drop-prob", type=float, default=None, help="Null-condition probability")
@click.option("--seed", type=int, default=None, help="Seed of initialization and every draw")
@out_option
@config_option
@cli_errors
def train(
    records_path, images_dir, train_steps, base_steps, batch_size, lr, cond_drop_prob, seed, out_dir, config_path
):
    """Train the adapters on a rendered corpus."""
    from duetdiff.models.settings import ModelConfig, TrainConfig
    from duetdiff.services import ArtifactService, CheckpointService, TrainingService

    run_config = resolve_run_config(
        config_path,
        {
            "train_steps": train_steps,
            "base_steps": base_steps,
            "batch_size": batch_size,
            "lr": lr,
            "cond_drop_prob": cond_drop_prob,
            "seed": seed,
        },
    )
    model_config = ModelConfig.from_run_config(run_config)
    train_config = TrainConfig.from_run_config(run_config)

    records = ArtifactService.read_records(records_path)
    if any(r.split == Split.TRAIN for r in records):
        records = [r for r in records if r.split == Split.TRAIN]
    if not records:
        raise InputError(f"No training records in {records_path}")
    root = images_dir or records_path.parent
    items = TrainingService.prepare_items([(ArtifactService.record_image(r, root), r) for r in records], model_config)

    schedule = _schedule(run_config)
    result = TrainingService.train(items, model_config, train_config, schedule, show_progress=_show_progress())

    CheckpointService.save(result.model, out_dir / CHECKPOINT_FILE, extra={"run_config": run_config.to_dict()})
    ArtifactService.write_loss_curve(result.losses, out_dir / LOSS_CURVE_FILE)
    if result.base_losses:
        ArtifactService.write_loss_curve(result.base_losses, out_dir / BASE_LOSS_CURVE_FILE)
    write_resolved_config(out_dir, run_config, "train")
    click.echo(f"Trained on {len(items)} records; final loss {format_float(result.final_loss)}")


@click.command("sample")
@checkpoint_option
@click.option("--lambda", "lam", type=float, default=None, help="Image-conditioning weight of the early stage")
@sampling_options
@out_option
@config_option
@cli_errors
def sample(checkpoint_path, lam, out_dir, config_path, **kwargs):
    """Generate one image with two-stage sampling."""
    from duetdiff.models.settings import SamplerConfig
    from duetdiff.services import ArtifactService, CheckpointService, SamplerService

    run_config = resolve_run_config(config_path, {"lambda": lam, **_sampling_flags(**kwargs)})
    model, metadata = CheckpointService.load(checkpoint_path)
    sampler_config = SamplerConfig.from_run_config(run_config)
    bundle, _ = _conditioning(run_config, model)

    image, trace = SamplerService.sample(bundle, model, _schedule(run_config, metadata), sampler_config)

    ArtifactService.write_png(image, out_dir / "sample.png", config=run_config.to_dict())
    ArtifactService.write_trace(trace, out_dir / "trace.jsonl")
    write_resolved_config(out_dir, run_config, "sample")
    click.echo(f"Wrote {out_dir / 'sample.png'}")


@click.command("sweep")
@checkpoint_option
@click.option("--lambda", "lambdas", type=str, default=None, help="Comma-separated lambda values")
@click.option("--seeds", type=int, default=None, help="Seeds per lambda, counted up from --seed")
@click.option("--workers", type=int, default=None, help="Sampling threads")
@sampling_options
@out_option
@config_option
@cli_errors
def sweep(checkpoint_path, lambdas, seeds, workers, out_dir, config_path, **kwargs):
    """Measure face area and identity similarity across lambda values."""
    from duetdiff.models.settings import SamplerConfig
    from duetdiff.services import ArtifactService, CheckpointService, EvaluationService

    run_config = resolve_run_config(
        config_path, {"sweep_lambdas": lambdas, "sweep_seeds": seeds, "workers": workers, **_sampling_flags(**kwargs)}
    )
    model, metadata = CheckpointService.load(checkpoint_path)
    bundle, identities = _conditioning(run_config, model)
    first = run_config["seed"]

    summary, samples = EvaluationService.lambda_sweep(
        model,
        bundle,
        _schedule(run_config, metadata),
        SamplerConfig.from_run_config(run_config),
        run_config["sweep_lambdas"],
        list(range(first, first + run_config["sweep_seeds"])),
        identities,
        workers=run_config["workers"],
    )

    ArtifactService.write_csv(summary, out_dir / "sweep.csv")
    ArtifactService.write_csv(samples, out_dir / "sweep_samples.csv")
    write_resolved_config(out_dir, run_config, "sweep")
    rows = [
        (format_float(r["lambda"], 2), int(r["n"]), format_float(r["face_area_mean"]), format_float(r["margin_mean"]))
        for _, r in summary.iterrows()
    ]
    click.echo(format_table(["lambda", "n", "face_area", "margin"], rows, [10, 6, 14, 14]))


@click.command("saliency")
@checkpoint_option
@click.option("--lambda", "lam", type=float, default=None, help="Image-conditioning weight of the early stage")
@click.option(
    "--records",
    "records_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Take prompt, identities and subject boxes from a record instead of the default layout",
)
@click.option("--index", type=int, default=0, help="Record index within --records")
@sampling_options
@out_option
@config_option
@cli_errors
def saliency(checkpoint_path, lam, records_path, index, out_dir, config_path, **kwargs):
    """Attention heatmaps of both reference branches and their mass in each subject box."""
    from duetdiff.models.prompt import PromptSpec
    from duetdiff.models.settings import SamplerConfig
    from duetdiff.services import (
        ArtifactService,
        CheckpointService,
        ConditioningService,
        EvaluationService,
        SamplerService,
        SynthService,
    )

    run_config = resolve_run_config(config_path, {"lambda": lam, **_sampling_flags(**kwargs)})
    model, metadata = CheckpointService.load(checkpoint_path)

    if records_path is not None:
        records = ArtifactService.read_records(records_path)
        if not 0 <= index < len(records):
            raise InputError(f"Record index {index} outside {len(records)} records")
        record = records[index]
        if record.identity_seeds is None:
            raise InputError(f"Record {record.image_id} has no identity seeds")
        identities = tuple(SynthService.make_identity(s) for s in record.identity_seeds)
    else:
        identities = tuple(SynthService.make_identity(run_config[key]) for key in ("id1_seed", "id2_seed"))
        _, record = SynthService.render_pair(identities[0], identities[1], _default_scene())

    slots = [p.caption_slot for p in record.persons]
    if run_config["prompt"]:
        prompt = PromptSpec.from_caption(run_config["prompt"])
    elif None in slots:
        prompt = PromptSpec.from_caption(record.caption)
    else:
        prompt = PromptSpec.from_caption(record.caption, *sorted(slots))
    refs = [SynthService.render_reference(identity) for identity in identities]
    bundle = ConditioningService.build_bundle(prompt, refs[0], refs[1], model)
    sampler_config = SamplerConfig.from_run_config(run_config)
    image, trace = SamplerService.sample(bundle, model, _schedule(run_config, metadata), sampler_config)

    boxes = EvaluationService.subject_boxes(record)
    report = EvaluationService.saliency_report(trace, boxes, model.config.image_size)

    ArtifactService.write_png(image, out_dir / "sample.png", config=run_config.to_dict())
    ArtifactService.write_csv(report.mass, out_dir / "saliency.csv")
    EvaluationService.save_heatmaps(report, boxes, out_dir / "heatmaps.png")
    write_resolved_config(out_dir, run_config, "saliency")
    for branch in ("i1", "i2"):
        click.echo(
            f"{branch}: subject 1 {format_float(report.mass_in(branch, 1))}, "
            f"subject 2 {format_float(report.mass_in(branch, 2))}"
        )


@click.command("gradcheck")
@click.option("--seed", type=int, default=None, help="Seed of weights and inputs")
@click.option("--h", "step", type=float, default=None, help="Central difference step")
@click.option("--tol", type=float, default=None, help="Relative error tolerance")
@click.option("--max-coords", type=int, default=None, help="Coordinates checked per group; 0 checks all")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Optional directory for the report table",
)
@config_option
@cli_errors
def gradcheck(seed, step, tol, max_coords, out_dir, config_path):
    """Compare analytic and finite-difference gradients of every adapter group."""
    import pandas as pd

    from duetdiff.services import ArtifactService, TrainingService

    run_config = resolve_run_config(
        config_path, {"seed": seed, "gradcheck_h": step, "gradcheck_tol": tol, "gradcheck_max_coords": max_coords}
    )
    report = TrainingService.gradient_check(
        seed=run_config["seed"],
        h=run_config["gradcheck_h"],
        tol=run_config["gradcheck_tol"],
        max_coords=run_config["gradcheck_max_coords"],
    )

    rows = [(g.group, g.coords, format_scientific(g.rel_error), "ok" if g.passed else "FAIL") for g in report.groups]
    click.echo(format_table(["group", "coords", "rel_error", "status"], rows, [28, 8, 14, 8]))
    if out_dir is not None:
        frame = pd.DataFrame(
            [
                {"group": g.group, "coords": g.coords, "rel_error": g.rel_error, "passed": g.passed}
                for g in report.groups
            ]
        )
        ArtifactService.write_csv(frame, out_dir / "gradcheck.csv")
        write_resolved_config(out_dir, run_config, "gradcheck")

    if not report.passed:
        click.echo(f"Gradient check failed: worst relative error {format_scientific(report.worst)}", err=True)
        click.get_current_context().exit(ExitCode.VALIDATION)
    click.echo(f"Gradient check passed for {len(report.groups)} groups")


COMMANDS = (train, sample, sweep, saliency, gradcheck)
