import json
from pathlib import Path

import pytest

from lyricmatch import cli
from lyricmatch.cli import EXIT_ERROR, EXIT_NUMERIC, EXIT_OK, main
from lyricmatch.utils import LOCK_FILE_NAME
from tagsong.exceptions import NumericError

CONFIG_TEMPLATE = """
[Paths]
triplets = {data}/triplets.jsonl
embeddings = {data}/embeddings.txt
tag_names = {data}/tag_names.txt
output_dir = {out}

[Tags]
objects = 6
attributes = 4

[Model]
model = ours-attention
hidden_size = 4
attention_size = 4
mlp_hidden = 6
k_tags = 2
max_len = 20
embedding_dim = 8
bow_vocab = 50

[Training]
loss = mse
batch = 8
epochs = 2
seed = 3
learning_rate = 0.01

[Dataset]
mode = dagger
min_occurrence = 3
per_song = all
test_songs = 4

[Evaluation]
top_n = 3

[Logging]
level = WARNING
"""


def make_workspace(root: Path) -> Path:
    """config.ini plus a synthetic corpus of 12 songs with 3 images each."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(CONFIG_TEMPLATE.format(data=root / "data", out=root / "out"), encoding="utf-8")
    assert main(["synth", "-c", str(root), "--out", str(root / "data"), "--songs", "12", "--images-per-song", "3"]) == EXIT_OK
    return root


def run(root: Path, *args: str) -> int:
    return main([args[0], "-c", str(root), *args[1:]])


def read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def workspace(tmp_path):
    return make_workspace(tmp_path / "ws")


def test_synth_writes_corpus(workspace):
    data = workspace / "data"
    assert len((data / "tag_names.txt").read_text().split()) == 10
    assert len((data / "triplets.jsonl").read_text().splitlines()) == 36
    assert (data / "embeddings.txt").read_text().splitlines()[0].endswith(" 8")


def test_prepare_writes_split(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    summary = read_json(workspace / "out" / "prepare.json")
    assert summary["songs"] == 12
    assert summary["test_songs"] == 4
    assert summary["train_songs"] == 8
    assert summary["test"] == 12
    split = read_json(workspace / "out" / "split.json")
    assert split["mode"] == "dagger"
    assert len(split["train"]) + len(split["test"]) == 36


def test_prepare_section_mode(workspace):
    assert run(workspace, "prepare", "--mode", "section") == EXIT_OK
    summary = read_json(workspace / "out" / "prepare.json")
    assert summary["test"] == 12
    assert summary["train_songs"] == summary["test_songs"] == 12


def test_prepare_with_nothing_left(workspace):
    assert run(workspace, "prepare", "--min-occurrence", "4") == EXIT_ERROR


def test_train_and_eval(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    out = workspace / "out"
    summary = read_json(out / "train.json")
    assert summary["model"] == "ours-attention"
    assert summary["epoch"] == 2
    assert summary["seed"] == 3
    assert summary["train_config"]["learning_rate"] == 0.01
    assert summary["train_config"]["batch_size"] == 8
    assert summary["model_config"]["kind"] == "ours-attention"
    assert summary["model_config"]["mlp_hidden"] == [6]
    assert len((out / "train.log").read_text().splitlines()) == 2
    assert (out / "model.ckpt.json").exists()
    assert not (workspace / LOCK_FILE_NAME).exists()

    assert run(workspace, "eval") == EXIT_OK
    report = read_json(out / "metrics-ours-attention-dagger-obj-attr.json")
    assert [d["direction"] for d in report["directions"]] == ["image2song", "song2image"]
    image2song = report["directions"][0]
    assert list(image2song["recall"]) == ["R@1", "R@5", "R@10"]
    assert image2song["gallery"] == 4
    assert image2song["recall"]["R@5"] == 100.0


def test_eval_with_extra_cutoffs_and_one_direction(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train", "--model", "conse", "--loss", "cpl") == EXIT_OK
    assert run(workspace, "eval", "--direction", "song2image", "--recall-ks", "2") == EXIT_OK
    report = read_json(workspace / "out" / "metrics-conse-dagger-obj-attr.json")
    assert len(report["directions"]) == 1
    assert list(report["directions"][0]["recall"]) == ["R@1", "R@2", "R@5", "R@10"]


def test_eval_rejects_other_tag_group(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    assert run(workspace, "eval", "--tag-group", "obj") == EXIT_ERROR


def test_group_model_evaluates_on_its_group(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train", "--model", "ours", "--tag-group", "attr") == EXIT_OK
    assert run(workspace, "eval") == EXIT_OK
    assert (workspace / "out" / "metrics-ours-dagger-attr.json").exists()


def test_resume_continues_epochs(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    first = read_json(workspace / "out" / "train.json")
    assert run(workspace, "train", "--resume", "--epochs", "1") == EXIT_OK
    second = read_json(workspace / "out" / "train.json")
    assert second["start_epoch"] == 2 and second["epoch"] == 3
    assert second["history"][:2] == first["history"]
    assert len((workspace / "out" / "train.log").read_text().splitlines()) == 3


def test_resume_matches_uninterrupted_run(tmp_path):
    split_run = make_workspace(tmp_path / "a")
    straight_run = make_workspace(tmp_path / "b")
    for root in (split_run, straight_run):
        assert run(root, "prepare") == EXIT_OK
    assert run(split_run, "train", "--epochs", "1") == EXIT_OK
    assert run(split_run, "train", "--resume", "--epochs", "1") == EXIT_OK
    assert run(straight_run, "train") == EXIT_OK
    resumed = read_json(split_run / "out" / "train.json")["history"]
    straight = read_json(straight_run / "out" / "train.json")["history"]
    assert resumed == straight


def test_same_seed_gives_identical_files(tmp_path):
    outputs = []
    for name in ("a", "b"):
        root = make_workspace(tmp_path / name)
        assert run(root, "prepare") == EXIT_OK
        assert run(root, "train") == EXIT_OK
        assert run(root, "eval") == EXIT_OK
        out = root / "out"
        outputs.append(
            (
                (out / "split.json").read_bytes(),
                (out / "model.ckpt.json").read_bytes(),
                (out / "metrics-ours-attention-dagger-obj-attr.json").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]


def test_retrieve_by_tags_and_lyric(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    query = workspace / "query.json"
    query.write_text(json.dumps([0.9, 0.8] + [0.05] * 8), encoding="utf-8")
    assert run(workspace, "retrieve", "--query-tags", str(query)) == EXIT_OK
    hits = read_json(workspace / "out" / "retrieval.json")
    assert hits["direction"] == "image2song"
    assert [hit["rank"] for hit in hits["results"]] == [1, 2, 3]
    scores = [hit["score"] for hit in hits["results"]]
    assert scores == sorted(scores, reverse=True)

    lyric = workspace / "query.txt"
    lyric.write_text("obj1 and obj2 under word3", encoding="utf-8")
    assert run(workspace, "retrieve", "--query-lyric", str(lyric)) == EXIT_OK
    hits = read_json(workspace / "out" / "retrieval.json")
    assert hits["direction"] == "song2image"
    assert all("-img" in hit["id"] for hit in hits["results"])


def test_retrieve_needs_exactly_one_query(workspace):
    assert run(workspace, "retrieve") == EXIT_ERROR


def test_retrieve_rejects_wrong_length(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "train") == EXIT_OK
    query = workspace / "query.json"
    query.write_text(json.dumps([0.5] * 9), encoding="utf-8")
    assert run(workspace, "retrieve", "--query-tags", str(query)) == EXIT_ERROR


def test_stats(workspace):
    assert run(workspace, "stats", "--tag-group", "obj") == EXIT_OK
    report = read_json(workspace / "out" / "stats-obj.json")
    assert len(report["top"]) == 3
    assert all(entry["dim"] < 6 for entry in report["top"])
    means = [entry["mean"] for entry in report["top"]]
    assert means == sorted(means, reverse=True)
    assert report["top"][0]["name"].startswith("obj")


def test_gradcheck_command(workspace):
    assert run(workspace, "gradcheck", "--kinds", "conse", "bow", "--seeds", "0") == EXIT_OK
    report = read_json(workspace / "out" / "gradcheck.json")
    assert report["objective"] == "projection"
    assert all(error < report["tolerance"] for error in report["max_rel_error"].values())


def test_gradcheck_failure_exit_code(workspace):
    assert run(workspace, "gradcheck", "--kinds", "conse", "--seeds", "0", "--corrupt", "pool_mlp.0.weight") == EXIT_NUMERIC


def test_compare_grid(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "compare", "--kinds", "conse", "ours", "--groups", "obj", "attr", "--epochs", "1") == EXIT_OK
    report = read_json(workspace / "out" / "compare-dagger.json")
    assert len(report["rows"]) == 2 * 2 * 2
    assert {(row["model"], row["tag_group"]) for row in report["rows"]} == {
        ("conse", "obj"),
        ("conse", "attr"),
        ("ours", "obj"),
        ("ours", "attr"),
    }


def test_missing_inputs(tmp_path):
    assert main(["prepare", "-c", str(tmp_path)]) == EXIT_ERROR
    assert main(["eval", "-c", str(tmp_path), "--embeddings", str(tmp_path / "none.txt"), "--tag-names", "x"]) == EXIT_ERROR


def test_missing_checkpoint(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    assert run(workspace, "eval") == EXIT_ERROR


def test_held_lock_blocks_training(workspace):
    assert run(workspace, "prepare") == EXIT_OK
    (workspace / LOCK_FILE_NAME).write_text("1")
    assert run(workspace, "train") == EXIT_ERROR
    assert (workspace / LOCK_FILE_NAME).exists()


def test_invalid_config_file(tmp_path):
    (tmp_path / "config.ini").write_text("[Model]\npooling = median\n", encoding="utf-8")
    assert main(["stats", "-c", str(tmp_path)]) == EXIT_ERROR
    (tmp_path / "config.ini").write_text("[Colours]\nred = 1\n", encoding="utf-8")
    assert main(["stats", "-c", str(tmp_path)]) == EXIT_ERROR


def test_zero_triplets_per_song_is_rejected(workspace):
    config = workspace / "config.ini"
    config.write_text(config.read_text(encoding="utf-8").replace("per_song = all", "per_song = 0"), encoding="utf-8")
    assert run(workspace, "prepare") == EXIT_ERROR
    with pytest.raises(SystemExit):
        main(["prepare", "-c", str(workspace), "--per-song", "0"])


def test_numeric_failures_exit_with_two(workspace, monkeypatch):
    def explode(ctx, args):
        raise NumericError("non-finite gradient for parameter 'mlp.0.weight'")

    monkeypatch.setattr(cli, "dispatch", explode)
    assert run(workspace, "stats") == EXIT_NUMERIC
