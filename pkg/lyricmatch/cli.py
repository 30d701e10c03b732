import argparse
import configparser
import logging
import os

from .config import Context, optional_int, resolve_run_config, setup_logging, validate_config
from .display import console, print_startup_banner
from .utils import run_lock
from .workflow import (
    run_compare,
    run_eval,
    run_gradcheck,
    run_prepare,
    run_retrieve,
    run_stats,
    run_synth,
    run_train,
)
from tagsong.exceptions import NumericError, TagsongError
from tagsong.types import DIRECTIONS, LOSS_KINDS, MODEL_KINDS, POOLINGS, SPLIT_MODES, TAG_GROUPS

logger = logging.getLogger("lyricmatch")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NUMERIC = 2


def _common_options() -> argparse.ArgumentParser:
    """Flags shared by every sub-command; unset flags fall back to config.ini, then defaults."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config-dir",
        default=os.getcwd(),
        type=str,
        help="Directory holding config.ini and the run lock (default: %(default)s)",
    )
    paths = common.add_argument_group("paths")
    paths.add_argument("--triplets", help="Triplet JSONL file")
    paths.add_argument("--embeddings", help="word2vec text embedding file")
    paths.add_argument("--tag-names", dest="tag_names", help="Tag names, one per line in dimension order")
    paths.add_argument("--split", help="Split JSON (default: <output-dir>/split.json)")
    paths.add_argument("--checkpoint", help="Checkpoint file (default: <output-dir>/model.ckpt.json)")
    paths.add_argument("--output-dir", dest="output_dir", help="Directory for reports")

    model = common.add_argument_group("model")
    model.add_argument("--model", choices=MODEL_KINDS)
    model.add_argument("--tag-group", dest="tag_group", choices=TAG_GROUPS)
    model.add_argument("--pooling", choices=POOLINGS)
    model.add_argument("--k-tags", dest="k_tags", type=int, help="Top tags pooled into the attention vector (default 5)")
    model.add_argument("--hidden-size", dest="hidden_size", type=int)
    model.add_argument("--attention-size", dest="attention_size", type=int)
    model.add_argument("--mlp-hidden", dest="mlp_hidden", type=int, nargs="+", help="Hidden widths of the projection MLP")
    model.add_argument("--share-attention", dest="share_attention", action="store_const", const=True)
    model.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    model.add_argument("--max-len", dest="max_len", type=int)
    model.add_argument("--objects", dest="n_objects", type=int, help="Number of object tag dimensions")
    model.add_argument("--attributes", dest="n_attributes", type=int, help="Number of attribute tag dimensions")

    training = common.add_argument_group("training")
    training.add_argument("--loss", choices=LOSS_KINDS)
    training.add_argument("--seed", type=int)
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch", type=int, help="Mini-batch size (default 100)")
    training.add_argument("--learning-rate", dest="learning_rate", type=float)

    dataset = common.add_argument_group("dataset")
    dataset.add_argument("--mode", choices=SPLIT_MODES)
    dataset.add_argument("--min-occurrence", dest="min_occurrence", type=int)
    dataset.add_argument("--per-song", dest="per_song", type=optional_int, help="Triplets kept per song ('all' keeps every one)")
    dataset.add_argument("--test-songs", dest="test_songs", type=int)
    dataset.add_argument("--min-favorites", dest="min_favorites", type=int)

    evaluation = common.add_argument_group("evaluation")
    evaluation.add_argument("--direction", choices=DIRECTIONS, help="Retrieval direction (default: both)")
    evaluation.add_argument("--top-n", dest="top_n", type=int)
    evaluation.add_argument("--recall-ks", dest="recall_ks", type=int, nargs="+", help="Extra R@K cut-offs")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="""lyricmatch: image2song and song2image retrieval with tag attention""")
    common = _common_options()
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("prepare", parents=[common], help="Filter triplets and write the train/test split")
    train = commands.add_parser("train", parents=[common], help="Train a model and write its checkpoint")
    train.add_argument("--resume", action="store_true", help="Continue training the checkpoint")
    commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint on the test split")

    retrieve = commands.add_parser("retrieve", parents=[common], help="Rank the test gallery for one query")
    retrieve.add_argument("--query-tags", dest="query_tags", help="JSON list of tag probabilities (image2song)")
    retrieve.add_argument("--query-lyric", dest="query_lyric", help="Lyric text file (song2image)")

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="Compare analytic gradients with finite differences")
    gradcheck.add_argument("--kinds", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    gradcheck.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    gradcheck.add_argument("--objective-loss", dest="objective_loss", choices=LOSS_KINDS, help="Check through a training loss")
    gradcheck.add_argument("--corrupt", metavar="BLOCK", help=argparse.SUPPRESS)

    commands.add_parser("stats", parents=[common], help="Tag distribution of the triplet corpus")

    compare = commands.add_parser("compare", parents=[common], help="Train and evaluate a grid of models and tag groups")
    compare.add_argument("--kinds", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    compare.add_argument("--groups", nargs="+", choices=TAG_GROUPS, default=list(TAG_GROUPS))

    synth = commands.add_parser("synth", parents=[common], help="Write a synthetic fixture corpus")
    synth.add_argument("--out", required=True, help="Directory to write the corpus into")
    synth.add_argument("--songs", type=int, default=20)
    synth.add_argument("--images-per-song", dest="images_per_song", type=int, default=1)
    synth.add_argument("--no-tag-words", dest="tag_words", action="store_false", help="Leave tag names out of the lyrics")
    return parser


def dispatch(ctx: Context, args: argparse.Namespace) -> int:
    command = args.command
    if command == "prepare":
        run_prepare(ctx)
    elif command == "train":
        with run_lock(ctx.config_dir):
            run_train(ctx, resume=args.resume)
    elif command == "eval":
        run_eval(ctx)
    elif command == "retrieve":
        run_retrieve(ctx, query_tags=args.query_tags, query_lyric=args.query_lyric)
    elif command == "gradcheck":
        if not run_gradcheck(ctx, args.kinds, args.seeds, loss=args.objective_loss, corrupt=args.corrupt):
            return EXIT_NUMERIC
    elif command == "stats":
        run_stats(ctx)
    elif command == "compare":
        with run_lock(ctx.config_dir):
            run_compare(ctx, args.kinds, args.groups)
    elif command == "synth":
        run_synth(ctx, args.out, args.songs, args.images_per_song, tag_words=args.tag_words)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config_dir = args.config_dir
    config_file_path = os.path.join(config_dir, "config.ini")

    # Disable interpolation to make storing logging formats in the config file much easier
    config = configparser.ConfigParser(interpolation=None)
    if os.path.exists(config_file_path):
        config.read(config_file_path)

    try:
        setup_logging(config)
        validate_config(config)
        if not os.path.exists(config_file_path):
            logger.info(f"No config.ini in {config_dir}; using flags and built-in defaults")
        run = resolve_run_config(config, vars(args))
        ctx = Context(config=config, run=run, config_dir=config_dir)
        print_startup_banner(args.command)
        return dispatch(ctx, args)
    except KeyboardInterrupt:
        console.print("\nOperation cancelled by user", style="bold yellow")
        return EXIT_ERROR
    except NumericError as ex:
        logger.error(f"Numeric failure: {ex}")
        return EXIT_NUMERIC
    except TagsongError as ex:
        logger.error(f"{ex}")
        return EXIT_ERROR
    except OSError as ex:
        logger.error(f"{ex}")
        return EXIT_ERROR
