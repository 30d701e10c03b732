import pytest

from tagsong.gradcheck import (
    GRADCHECK_TOLERANCE,
    check_gradients,
    run_gradcheck,
    summarize,
    toy_config,
    toy_problem,
)
from tagsong.types import MODEL_KINDS


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_projection_gradients(kind):
    reports = run_gradcheck([kind], seeds=(0, 1, 2))
    for report in reports:
        assert report.passed, [(c.name, c.max_rel_error) for c in report.blocks if not c.passed]
        assert report.objective == "projection"


def test_shared_attention_gradients():
    (report,) = run_gradcheck(["ours-attention"], seeds=(3,), share_attention=True)
    assert report.passed
    assert not any(check.name.startswith("att_bwd.") for check in report.blocks)


@pytest.mark.parametrize("kind,loss", [("ours", "mse"), ("ours-mood", "cpl"), ("ours-attention", "mrl"), ("attreader", "mrl")])
def test_loss_gradients(kind, loss):
    (report,) = run_gradcheck([kind], seeds=(0,), loss=loss)
    assert report.passed
    assert report.objective == loss


def test_every_block_is_checked():
    model, pairs = toy_problem(toy_config("ours-mood"), seed=0)
    report = check_gradients(model, pairs)
    assert {check.name for check in report.blocks} == set(model.blocks())
    assert "mood_table" in model.blocks()


def test_corrupted_gradient_is_caught():
    (report,) = run_gradcheck(["ours-attention"], seeds=(0,), corrupt="att_fwd.w_ms")
    assert not report.passed
    failed = [check.name for check in report.blocks if not check.passed]
    assert failed == ["att_fwd.w_ms"]
    assert report.max_rel_error >= GRADCHECK_TOLERANCE


def test_summarize_keeps_worst_error():
    reports = run_gradcheck(["conse"], seeds=(0, 1))
    worst = summarize(reports)
    assert set(worst) == {f"conse/{check.name}" for check in reports[0].blocks}
    for key, value in worst.items():
        name = key.split("/", 1)[1]
        assert value == max(c.max_rel_error for r in reports for c in r.blocks if c.name == name)
