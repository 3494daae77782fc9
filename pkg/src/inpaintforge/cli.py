"""The ``forge`` command line: ingest, relations, build, stats, eval."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import metrics
from .errors import ForgeError
from .pipeline import BuildConfig, build, emit_statistics, load_manifest
from .relations import (
    DEFAULT_RELATION_THRESHOLD,
    compute_relation_frequencies,
    corpus_hash,
    filter_relations,
    save_retained_cache,
)
from .scene_graph import parse_scene_graphs, save_scene_graphs


@click.group()
def main() -> None:
    """Compile object-removal datasets from scene graphs and score outputs."""


@main.command()
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Write the validated graphs back out as a normalized annotation file.")
def ingest(annotations: Path, out: Path | None) -> None:
    """Parse and validate an annotation file, reporting what was kept."""
    graphs, report = parse_scene_graphs(annotations)
    nodes = sum(len(graph.objects) for graph in graphs)
    relations = sum(len(node.relations) for graph in graphs for node in graph.objects.values())
    click.echo(f"graphs: {report.graphs}")
    click.echo(f"objects: {nodes}")
    click.echo(f"relations: {relations}")
    click.echo(f"skipped_records: {report.skipped_records}")
    click.echo(f"invalid_nodes: {report.invalid_nodes}")
    click.echo(f"dropped_relations: {report.dropped_relations}")
    if out is not None:
        save_scene_graphs(graphs, out)
        click.echo(f"normalized annotations written to {out}")


@main.command()
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--threshold", type=float, default=DEFAULT_RELATION_THRESHOLD, show_default=True,
              help="Minimum frequency a predicate needs to be retained.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Where to write the retained-predicate cache.")
def relations(annotations: Path, threshold: float, out: Path) -> None:
    """Compute corpus relation frequencies and cache the retained set."""
    graphs, _ = parse_scene_graphs(annotations)
    try:
        table = compute_relation_frequencies(graphs)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    retained = filter_relations(table, threshold)
    save_retained_cache(out, retained, threshold, corpus_hash(table))
    click.echo(f"predicates: {len(table.counts)} seen, {len(retained)} retained")
    click.echo(f"cache written to {out}")


@main.command(name="build")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=None, help="Override the config worker count.")
def build_command(config_path: Path, seed: int | None, workers: int | None) -> None:
    """Build the dataset manifest described by a config file."""
    try:
        config = BuildConfig.from_file(config_path)
        if seed is not None:
            config.seed = seed
        if workers is not None:
            config.workers = workers
        result = build(config)
    except ForgeError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"records: {len(result.records)}")
    click.echo(f"manifest: {result.manifest_path}")
    click.echo(f"report: {result.report_path}")


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--annotations", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Annotation file the manifest was built from.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory for the TSV occurrence tables.")
def stats(manifest: Path, annotations: Path, out_dir: Path | None) -> None:
    """Emit object/relation occurrence tables for a built manifest."""
    records = load_manifest(manifest)
    graphs, _ = parse_scene_graphs(annotations)
    result = emit_statistics(records, graphs, out_dir=out_dir)
    click.echo(f"removable classes: {len(result.removable_objects)}")
    click.echo(f"reference classes: {len(result.reference_objects)}")
    click.echo(f"relation predicates: {len(result.relation_occurrences)}")
    if out_dir is not None:
        click.echo(f"tables written to {out_dir}")


@main.group()
def eval() -> None:
    """Score externally produced model outputs."""


def _echo_score(value: float) -> None:
    click.echo(f"{value:.6f}")


@eval.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
def fid(path_a: Path, path_b: Path) -> None:
    """Frechet distance between two feature files."""
    try:
        _echo_score(metrics.fid(metrics.read_features(path_a), metrics.read_features(path_b)))
    except ForgeError as exc:
        raise click.ClickException(str(exc)) from exc


@eval.command(name="clip-distance")
@click.argument("samples", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def clip_distance(samples: Path) -> None:
    """Percentage of samples whose crop similarity decreased."""
    try:
        _echo_score(metrics.clip_distance(metrics.load_similarity_pairs(samples)))
    except ForgeError as exc:
        raise click.ClickException(str(exc)) from exc


@eval.command(name="clip-accuracy")
@click.argument("samples", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--k", type=click.Choice(["1", "5"]), required=True,
              help="How many top predictions the source label must vanish from.")
def clip_accuracy(samples: Path, k: str) -> None:
    """Percentage of samples whose source label left the top-k list."""
    try:
        _echo_score(metrics.clip_accuracy(metrics.load_classification_pairs(samples), int(k)))
    except ForgeError as exc:
        raise click.ClickException(str(exc)) from exc


@eval.command()
@click.argument("samples", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def relsim(samples: Path) -> None:
    """Average recall of ground-truth relations among detections."""
    try:
        report: dict = {}
        score = metrics.relsim(metrics.load_relation_sets(samples), report=report)
    except ForgeError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_score(score)
    if report.get("excluded_empty_ground_truth"):
        click.echo(f"excluded samples with empty ground truth: {report['excluded_empty_ground_truth']}", err=True)


if __name__ == "__main__":
    sys.exit(main())
