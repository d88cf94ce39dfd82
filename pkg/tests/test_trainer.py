import math

import numpy as np
import pytest

from itpnet import checkpoint as ckpt
from itpnet import forecaster
from itpnet.config import TrainConfig
from itpnet.data import build_arrays, generate_dataset
from itpnet.model import ITPNet
from itpnet.numerics import NumericError, Tape, Tensor
from itpnet.trainer import (
    LOG_COLUMNS,
    batch_schedule,
    from_checkpoint,
    predict,
    read_log,
    to_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def default_run():
    """200 steps of the default model on 64 synthetic scenes."""
    cfg = TrainConfig(steps=200, seed=3)
    data = build_arrays(generate_dataset(64, 21), cfg.T, cfg.N, cfg.M)
    return cfg, data, train(cfg, data)


@pytest.fixture(scope="module")
def tiny_run(tiny_config, tiny_arrays):
    return train(tiny_config, tiny_arrays)


def test_loss_decreases(default_run):
    _, _, res = default_run
    assert len(res.log) == 200
    first = np.mean([r["l_total"] for r in res.log[:10]])
    last = np.mean([r["l_total"] for r in res.log[-10:]])
    assert res.log[-1]["l_total"] < res.log[0]["l_total"]
    assert last < first


def test_same_seed_bit_identical_checkpoints(tiny_config, tiny_arrays, tiny_run):
    again = train(tiny_config, tiny_arrays)
    assert ckpt.encode(again.checkpoint()) == ckpt.encode(tiny_run.checkpoint())
    assert [r["l_total"] for r in again.log] == [r["l_total"] for r in tiny_run.log]


def test_different_seed_differs(tiny_config, tiny_arrays, tiny_run):
    other = train(tiny_config.replace(seed=1), tiny_arrays)
    assert ckpt.encode(other.checkpoint()) != ckpt.encode(tiny_run.checkpoint())


def test_baseline_reduction(tiny_config, tiny_scenes):
    cfg = tiny_config.replace(N=0, nrrformer=False, alpha=0.0, beta=0.0)
    data = build_arrays(tiny_scenes, cfg.T, 0, cfg.M)
    res = train(cfg, data)
    assert set(res.model.groups()) == {"backbone", "forecaster", "decoder"}
    for r in res.log:
        assert r["l_rec"] == 0.0 and r["l_cts"] == 0.0
        assert r["l_total"] == pytest.approx(r["l_reg"] + r["l_cls"], rel=1e-15)


def test_non_finite_term_aborts_with_name(tiny_config, tiny_arrays, monkeypatch):
    monkeypatch.setattr(forecaster, "loss_rec", lambda a, b: Tensor(np.full(a.shape[0], np.nan)))
    with pytest.raises(NumericError, match="step 1: loss term l_rec"):
        train(tiny_config, tiny_arrays)


def test_dataset_mismatch_before_training(tiny_config, tiny_scenes):
    wrong = build_arrays(tiny_scenes, 2, 6, 12)
    with pytest.raises(ValueError, match="do not match config"):
        train(tiny_config, wrong, progress=lambda row: pytest.fail("a step ran"))


def test_too_few_scenes(tiny_config, tiny_arrays):
    with pytest.raises(ValueError, match="fewer than batch size"):
        train(tiny_config, tiny_arrays.take(np.arange(4)))


@pytest.mark.parametrize("overrides", [dict(), dict(nrrformer=False)])
def test_every_parameter_group_gets_gradient(tiny_config, tiny_arrays, overrides):
    model = ITPNet(tiny_config.replace(**overrides))
    params = model.named_parameters()
    batch = tiny_arrays.take(np.arange(8))
    with Tape() as tape:
        terms, _ = model.losses(batch.x_obs, batch.x_unobs, batch.x_gt)
    tape.backward(terms["l_total"], params.values())
    expected = {"backbone", "forecaster", "decoder"} | ({"nrrformer", "query"} if model.config.nrrformer else set())
    assert set(model.groups()) == expected
    for group, names in model.groups().items():
        assert any(np.any(params[n].grad != 0) for n in names), group


def test_batch_schedule_epochs_and_partial_batches():
    cfg = TrainConfig(batch_size=8, epochs=2)
    steps = list(batch_schedule(cfg, 30))
    assert [s for s, _ in steps] == list(range(1, 7))  # 3 full batches per epoch
    first_epoch = np.concatenate([idx for _, idx in steps[:3]])
    assert len(set(first_epoch)) == 24


def test_log_file_and_checkpoints(tiny_config, tiny_arrays, tmp_path):
    cfg = tiny_config.replace(checkpoint_every=10)
    res = train(cfg, tiny_arrays, log_path=tmp_path / "log.csv", checkpoint_path=tmp_path / "ck.itpn")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == ",".join(LOG_COLUMNS)
    rows = read_log(tmp_path / "log.csv")
    assert rows == res.log
    assert ckpt.load_checkpoint(tmp_path / "ck.itpn").step == 20


def test_resume_matches_uninterrupted(tiny_config, tiny_arrays, tiny_run):
    half = train(tiny_config.replace(steps=10), tiny_arrays)
    resumed = train(tiny_config, tiny_arrays, resume=ckpt.decode(ckpt.encode(half.checkpoint())))
    assert [r["step"] for r in resumed.log] == list(range(11, 21))
    assert ckpt.encode(resumed.checkpoint()) == ckpt.encode(tiny_run.checkpoint())


# -- checkpoints ---------------------------------------------------------------------


def test_save_load_save_byte_identical(tiny_run, tmp_path):
    a, b = tmp_path / "a.itpn", tmp_path / "b.itpn"
    ckpt.save_checkpoint(tiny_run.checkpoint(), a)
    loaded = ckpt.load_checkpoint(a)
    ckpt.save_checkpoint(loaded, b)
    assert a.read_bytes() == b.read_bytes()
    model, opt = from_checkpoint(loaded)
    for name, t in tiny_run.model.named_parameters().items():
        assert model.named_parameters()[name].data.tobytes() == t.data.tobytes()
    assert opt.step == tiny_run.step == 20


def test_corrupted_byte_fails_checksum(tiny_run):
    buf = bytearray(ckpt.encode(tiny_run.checkpoint()))
    buf[len(buf) // 2] ^= 0x10
    with pytest.raises(ckpt.CheckpointChecksumError):
        ckpt.decode(bytes(buf))


def test_truncated_file(tiny_run):
    buf = ckpt.encode(tiny_run.checkpoint())
    with pytest.raises(ckpt.CheckpointTruncatedError):
        ckpt.decode(buf[: len(buf) // 3])


def test_version_mismatch(tiny_run):
    buf = bytearray(ckpt.encode(tiny_run.checkpoint()))
    buf[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(ckpt.CheckpointVersionError):
        ckpt.decode(bytes(buf))


def test_error_kinds_are_distinct():
    kinds = {ckpt.CheckpointVersionError, ckpt.CheckpointTruncatedError, ckpt.CheckpointChecksumError}
    assert all(not issubclass(a, b) for a in kinds for b in kinds if a is not b)


def test_width_incompatible_config_rejected(tmp_path):
    small = ITPNet(TrainConfig(d=64, steps=1))
    path = ckpt.save_checkpoint(to_checkpoint(small, _adam()), tmp_path / "d64.itpn")
    with pytest.raises(ckpt.CheckpointConfigError, match="d: checkpoint=64 config=128"):
        ckpt.load_checkpoint(path, expect=TrainConfig(d=128))
    with pytest.raises(ckpt.CheckpointConfigError):
        train(TrainConfig(d=128, steps=1), build_arrays(generate_dataset(32, 1), 2, 4, 12), resume=ckpt.load_checkpoint(path))


def _adam():
    from itpnet.numerics import AdamState

    return AdamState()


# -- prediction ----------------------------------------------------------------------


def test_predict_shapes(tiny_run):
    ck = tiny_run.checkpoint()
    pred = predict(ck, [[0.0, 0.0], [1.0, 0.5]])
    assert pred.trajectories.shape == (6, 12, 2)
    assert pred.scores.shape == (6,)
    assert pred.scores.sum() == pytest.approx(1.0, abs=1e-9)


def test_predict_translation_exact(tiny_run):
    x = np.array([[0.0, 0.0], [1.0, 0.5]])
    a = predict(tiny_run.model, x)
    b = predict(tiny_run.model, x + 10.0)
    np.testing.assert_allclose(b.trajectories, a.trajectories + 10.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a.scores, b.scores)


@pytest.mark.parametrize("angle", [0.3, 1.7, -2.5])
def test_predict_rotation_equivariant(tiny_run, angle):
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    x = np.array([[2.0, -1.0], [3.0, 0.5]])
    a = predict(tiny_run.model, x)
    b = predict(tiny_run.model, x @ R.T)
    np.testing.assert_allclose(b.trajectories, a.trajectories @ R.T, atol=1e-6)
    np.testing.assert_allclose(b.scores, a.scores, atol=1e-9)


@pytest.mark.parametrize("pts", [[[0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]])
def test_predict_wrong_count(tiny_run, pts):
    with pytest.raises(ValueError, match="exactly 2"):
        predict(tiny_run.model, pts)
