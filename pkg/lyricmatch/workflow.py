import json
import logging
from dataclasses import asdict, replace
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tagsong.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tagsong.dataset import (
    TripletRecord,
    favorite_count_stats,
    filter_triplets,
    group_by_song,
    load_split,
    load_triplets,
    make_split,
    records_for_split,
    save_split,
    save_triplets,
    tag_distribution_stats,
)
from tagsong.exceptions import ConfigError, ParameterError, SchemaError, TagsongParseError
from tagsong.gradcheck import GRADCHECK_TOLERANCE, run_gradcheck as check_model_gradients, summarize
from tagsong.models import Featurizer, ModelConfig, RetrievalModel, build_model
from tagsong.numerics import Rng
from tagsong.retrieval import default_ks, evaluate, rank_by_scores, score_matrix
from tagsong.synthetic import make_corpus, write_corpus
from tagsong.text import EmbeddingTable, load_embeddings, load_tag_names
from tagsong.training import EpochLog, TrainConfig, train
from tagsong.types import MetricsReport

from .display import (
    console,
    print_compare_table,
    print_gradcheck_table,
    print_metrics_table,
    print_prepare_summary,
    print_retrieval_table,
    print_section_header,
    print_stats_table,
    print_training_summary,
    training_progress,
)
from .types import CompareRow, PrepareSummary, RetrievalHit, StatsEntry, TrainSummary
from .utils import ensure_dir, report_name, write_json_report

if TYPE_CHECKING:
    from .config import Context, RunConfig

logger = logging.getLogger(__name__)

# seed stream for parameter initialisation, apart from the per-epoch streams
INIT_STREAM = 2**31 - 1


def _output_dir(run: "RunConfig") -> Path:
    return ensure_dir(run.output_dir)


def _split_path(run: "RunConfig") -> Path:
    return Path(run.split) if run.split else _output_dir(run) / "split.json"


def _checkpoint_path(run: "RunConfig") -> Path:
    return Path(run.checkpoint) if run.checkpoint else _output_dir(run) / "model.ckpt.json"


def _load_inputs(run: "RunConfig") -> Tuple[EmbeddingTable, List[str]]:
    run.require("embeddings", "tag_names")
    table = load_embeddings(run.embeddings, expected_dim=run.embedding_dim)
    tag_names = load_tag_names(run.tag_names, run.layout.dim)
    return table, tag_names


def _load_split_records(run: "RunConfig") -> Tuple[str, List[TripletRecord], List[TripletRecord]]:
    run.require("triplets")
    records = load_triplets(run.triplets, run.layout)
    split = load_split(_split_path(run))
    train_records, test_records = records_for_split(records, split)
    return split.mode, train_records, test_records


def _featurizer(model: RetrievalModel, table: EmbeddingTable, tag_names: Sequence[str]) -> Featurizer:
    return Featurizer(model.config, table, tag_names, mood_vocab=model.extra_state().get("mood_vocab"))


def run_prepare(ctx: "Context") -> PrepareSummary:
    """
    Filter the triplet corpus and write the train/test split.
    """
    run = ctx.run
    run.require("triplets")
    records = load_triplets(run.triplets, run.layout)
    kept = filter_triplets(records, run.min_occurrence, run.per_song, run.min_favorites)
    if not kept:
        raise ParameterError(f"no song has at least {run.min_occurrence} triplets; nothing to split")
    split = make_split(kept, run.mode, run.seed, run.test_songs)

    out_dir = _output_dir(run)
    filtered_path = out_dir / "filtered.jsonl"
    split_path = _split_path(run)
    save_triplets(kept, filtered_path)
    save_split(split, split_path)

    train_records, test_records = records_for_split(kept, split)
    summary: PrepareSummary = {
        "mode": split.mode,
        "seed": split.seed,
        "loaded": len(records),
        "triplets": len(kept),
        "songs": len(group_by_song(kept)),
        "train": len(train_records),
        "test": len(test_records),
        "train_songs": len(group_by_song(train_records)),
        "test_songs": len(group_by_song(test_records)),
        "favorites": favorite_count_stats(kept),
        "split_path": str(split_path),
        "filtered_path": str(filtered_path),
    }
    print_prepare_summary(summary)
    write_json_report(summary, out_dir / "prepare.json")
    return summary


def _effective_loss(kind: str, loss: str) -> str:
    if kind == "attreader" and loss != "mrl":
        logger.warning(f"The attentive reader trains with the margin ranking hinge; loss '{loss}' ignored")
        return "mrl"
    return loss


def fit_model(
    model: RetrievalModel,
    featurizer: Featurizer,
    train_records: Sequence[TripletRecord],
    train_config: TrainConfig,
    checkpoint: Optional[Checkpoint] = None,
    description: str = "Training",
):
    """Run ``train_config.epochs`` epochs with a progress bar, continuing ``checkpoint`` if given."""
    pairs = featurizer.pairs(train_records)
    if not pairs:
        raise ParameterError("no usable training pairs")
    state = checkpoint.state if checkpoint else None
    if state is not None:
        state.learning_rate, state.rho, state.epsilon = train_config.learning_rate, train_config.rho, train_config.epsilon
    start_epoch = checkpoint.epoch if checkpoint else 0
    history = checkpoint.history if checkpoint else None

    with training_progress() as progress:
        task = progress.add_task(description, total=train_config.epochs, loss="-")

        def on_epoch(log: EpochLog):
            progress.update(task, advance=1, loss=f"{log.loss:.5f}")

        return train(pairs, train_config, model, state=state, start_epoch=start_epoch, history=history, on_epoch=on_epoch)


def run_train(ctx: "Context", resume: bool = False) -> TrainSummary:
    """
    Train one model on the split's training triplets and write its checkpoint.
    """
    run = ctx.run
    table, tag_names = _load_inputs(run)
    _, train_records, _ = _load_split_records(run)
    checkpoint_path = _checkpoint_path(run)

    previous = None
    if resume:
        previous = load_checkpoint(checkpoint_path, table)
        model = previous.model
        logger.info(f"Resuming {model.kind} from epoch {previous.epoch}")
    else:
        model = build_model(run.model_config(), Rng(run.seed, (INIT_STREAM,)), train_records)

    train_config = run.train_config(_effective_loss(model.kind, run.loss))
    if previous is not None and previous.seed != train_config.seed:
        logger.warning(f"Checkpoint was trained with seed {previous.seed}; continuing with that seed")
        train_config = replace(train_config, seed=previous.seed)
    featurizer = _featurizer(model, table, tag_names)
    print_section_header(f"Training {model.kind} for {train_config.epochs} epochs")
    result = fit_model(model, featurizer, train_records, train_config, previous)

    start_epoch = previous.epoch if previous else 0
    end_epoch = start_epoch + train_config.epochs
    save_checkpoint(
        Checkpoint(
            model=model,
            state=result.state,
            epoch=end_epoch,
            history=result.history,
            seed=train_config.seed,
            embedding_checksum=table.checksum(),
            train_config=asdict(train_config),
        ),
        checkpoint_path,
    )

    out_dir = _output_dir(run)
    with open(out_dir / "train.log", "a" if resume else "w", encoding="utf-8") as log_file:
        for log in result.history[len(previous.history) if previous else 0:]:
            log_file.write(f"{log.epoch}\t{log.loss!r}\t{log.wallclock_ms:.1f}\n")

    summary: TrainSummary = {
        "model": model.kind,
        "loss": train_config.loss,
        "seed": train_config.seed,
        "start_epoch": start_epoch,
        "epoch": end_epoch,
        "final_loss": result.final_loss,
        "history": [{"epoch": log.epoch, "loss": log.loss} for log in result.history],
        "checkpoint": str(checkpoint_path),
        "train_config": asdict(train_config),
        "model_config": model.config.to_json(),
    }
    print_training_summary(summary)
    write_json_report(summary, out_dir / "train.json")
    return summary


def _recall_ks(run: "RunConfig", mode: str) -> Tuple[int, ...]:
    return tuple(sorted(set(default_ks(mode)) | set(run.recall_ks)))


def run_eval(ctx: "Context") -> MetricsReport:
    """
    Evaluate a checkpoint on the split's test triplets.
    """
    run = ctx.run
    table, tag_names = _load_inputs(run)
    mode, _, test_records = _load_split_records(run)
    model = load_checkpoint(_checkpoint_path(run), table).model
    featurizer = _featurizer(model, table, tag_names)

    report = evaluate(
        model,
        featurizer,
        test_records,
        mode,
        directions=run.directions,
        tag_group=run.tag_group or model.config.tag_group,
        ks=_recall_ks(run, mode),
        seed=run.seed,
    )
    print_metrics_table(report)
    write_json_report(report, _output_dir(run) / report_name("metrics", model.kind, mode, model.config.tag_group))
    return report


def _read_query_tags(path: str, dim: int) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as file:
            values = json.load(file)
    except json.JSONDecodeError as ex:
        raise TagsongParseError(f"malformed tag vector JSON: {ex.msg}", path, ex.lineno) from None
    if isinstance(values, dict):
        values = values.get("tags")
    if not isinstance(values, list) or len(values) != dim:
        raise SchemaError(f"query must be a list of {dim} tag probabilities", path)
    return np.array(values, dtype=np.float64)


def run_retrieve(
    ctx: "Context", query_tags: Optional[str] = None, query_lyric: Optional[str] = None
) -> List[RetrievalHit]:
    """
    Rank the test split's songs for an image tag vector, or its images for a lyric.
    """
    run = ctx.run
    if (query_tags is None) == (query_lyric is None):
        raise ConfigError("give exactly one of --query-tags and --query-lyric")
    direction = "image2song" if query_tags is not None else "song2image"
    if run.direction and run.direction != direction:
        raise ConfigError(f"--direction {run.direction} does not match the query kind ({direction})")

    table, tag_names = _load_inputs(run)
    _, _, test_records = _load_split_records(run)
    model = load_checkpoint(_checkpoint_path(run), table).model
    featurizer = _featurizer(model, table, tag_names)
    images, lyrics, moods = featurizer.gallery(test_records)

    if direction == "image2song":
        tags = _read_query_tags(query_tags, run.layout.dim)
        tags.setflags(write=False)
        query = featurizer.image(TripletRecord("query", "", "", tags, None, 1))
        scores = score_matrix(model, [query], lyrics, moods)[0]
        result = rank_by_scores(query.id, [lyric.song_id for lyric in lyrics], scores)
    else:
        with open(query_lyric, "r", encoding="utf-8") as file:
            raw = file.read()
        query = featurizer.lyric("<query>", raw)
        scores = score_matrix(model, images, [query])[:, 0]
        result = rank_by_scores(query.song_id, [image.id for image in images], scores)

    hits: List[RetrievalHit] = [
        {"rank": rank, "id": item_id, "score": score} for rank, (item_id, score) in enumerate(result.top(run.top_n), start=1)
    ]
    print_retrieval_table(hits, direction)
    write_json_report({"direction": direction, "results": hits}, _output_dir(run) / "retrieval.json")
    return hits


def run_gradcheck(ctx: "Context", kinds: Sequence[str], seeds: Sequence[int], loss: Optional[str] = None, corrupt: Optional[str] = None) -> bool:
    """
    Finite-difference check of every parameter block of small random models.
    """
    reports = check_model_gradients(kinds, seeds, loss=loss, share_attention=ctx.run.share_attention, corrupt=corrupt)
    worst = summarize(reports)
    print_gradcheck_table(worst, GRADCHECK_TOLERANCE)
    write_json_report(
        {"tolerance": GRADCHECK_TOLERANCE, "seeds": list(seeds), "objective": loss or "projection", "max_rel_error": worst},
        _output_dir(ctx.run) / "gradcheck.json",
    )
    passed = all(report.passed for report in reports)
    if passed:
        console.print("All gradient blocks agree with finite differences", style="bold green")
    else:
        failed = sorted(name for name, error in worst.items() if error >= GRADCHECK_TOLERANCE)
        logger.error(f"Gradient check failed for {len(failed)} blocks: {', '.join(failed)}")
    return passed


def run_stats(ctx: "Context", group: Optional[str] = None) -> List[StatsEntry]:
    """
    Mean probability of every tag dimension, highest first.
    """
    run = ctx.run
    run.require("triplets")
    records = load_triplets(run.triplets, run.layout)
    names = load_tag_names(run.tag_names, run.layout.dim) if run.tag_names else None
    group = group or run.tag_group or "obj-attr"
    ranked = tag_distribution_stats(records, group, run.layout)[: run.top_n]
    entries: List[StatsEntry] = [{"dim": dim, "name": names[dim] if names else None, "mean": mean} for dim, mean in ranked]
    favorites = favorite_count_stats(records)
    print_stats_table([(e["dim"], e["name"], e["mean"]) for e in entries], favorites, group)
    write_json_report({"tag_group": group, "top": entries, "favorites": favorites}, _output_dir(run) / report_name("stats", group))
    return entries


def run_compare(ctx: "Context", kinds: Sequence[str], groups: Sequence[str]) -> List[CompareRow]:
    """
    Train and evaluate every model kind on every tag group with the same split and seed.
    """
    run = ctx.run
    table, tag_names = _load_inputs(run)
    mode, train_records, test_records = _load_split_records(run)
    ks = _recall_ks(run, mode)

    rows: List[CompareRow] = []
    reports: Dict[str, MetricsReport] = {}
    for group in groups:
        for kind in kinds:
            config: ModelConfig = run.model_config(kind=kind, tag_group=group)
            model = build_model(config, Rng(run.seed, (INIT_STREAM,)), train_records)
            featurizer = _featurizer(model, table, tag_names)
            train_config = run.train_config(_effective_loss(kind, run.loss))
            fit_model(model, featurizer, train_records, train_config, description=f"{kind} / {group}")
            report = evaluate(model, featurizer, test_records, mode, run.directions, group, ks, run.seed)
            reports[f"{kind}/{group}"] = report
            for entry in report["directions"]:
                rows.append(
                    {
                        "model": kind,
                        "tag_group": group,
                        "direction": entry["direction"],
                        "recall": entry["recall"],
                        "median_rank": entry["median_rank"],
                    }
                )
    print_compare_table(rows)
    write_json_report({"mode": mode, "seed": run.seed, "rows": rows}, _output_dir(run) / report_name("compare", mode))
    return rows


def run_synth(ctx: "Context", directory: str, n_songs: int, images_per_song: int, tag_words: bool = True) -> Dict[str, Path]:
    """
    Write a synthetic corpus whose lyrics name their images' dominant tags.
    """
    run = ctx.run
    corpus = make_corpus(
        n_songs=n_songs,
        images_per_song=images_per_song,
        layout=run.layout,
        embedding_dim=run.embedding_dim,
        tag_words=tag_words,
        seed=run.seed,
    )
    paths = write_corpus(corpus, directory)
    console.print(f"Wrote {len(corpus.records)} triplets over {n_songs} songs to {directory}", style="bold green")
    for name, path in paths.items():
        logger.info(f"{name}: {path}")
    return paths
