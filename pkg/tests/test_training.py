import math

import numpy as np
import pytest

from wavesep.autodiff import NonFiniteError, Parameter, Tensor, backward
from wavesep.data import synth_manifest, synth_track
from wavesep.gradcases import run_op_check
from wavesep.models.io import build_model, load_model
from wavesep.training import (LOG_HEADER, ConfigError, OptimizerState, TrainConfig, adam_step,
                              clip_grad_norm, config_to_text, global_norm, load_config,
                              load_optimizer, loss_l1, loss_l2, parse_config, per_source_losses,
                              read_log, save_optimizer, source_sum_objective, train, validation_l1)

SR = 8000
TINY = {"depth": "2", "initial_channels": "4", "lstm_layers": "1"}


def tiny_config(tmp_path, **kw) -> TrainConfig:
    values = dict(model="demucs", learning_rate=1e-3, batch_size=4, epochs=2, seed=0,
                  checkpoint=str(tmp_path / "ck"), extract_seconds=2.0, crop_seconds=1.0,
                  shift_seconds=1.0, model_overrides=dict(TINY))
    values.update(kw)
    return TrainConfig(**values)


@pytest.fixture(scope="module")
def tiny_manifest():
    return synth_manifest(6, 3.0, SR, seed=4)  # 4 train / 1 valid / 1 test


# --- losses -----------------------------------------------------------------------

def test_losses_identity_and_offset():
    x = np.random.default_rng(0).standard_normal((2, 4, 2, 10))
    assert float(loss_l1(Tensor(x), x).data) == 0.0
    assert float(loss_l2(Tensor(x), x).data) == 0.0
    assert float(loss_l1(Tensor(x + 0.3), x).data) == pytest.approx(0.3, rel=1e-12)
    assert float(loss_l2(Tensor(x - 0.3), x).data) == pytest.approx(0.09, rel=1e-12)
    with pytest.raises(ValueError, match="shape"):
        loss_l1(Tensor(x), x[..., :5])


@pytest.mark.parametrize("loss", ["l1", "l2"])
def test_objective_decomposes_over_sources(loss):
    rng = np.random.default_rng(1)
    est, target = rng.standard_normal((3, 4, 2, 20)), rng.standard_normal((3, 4, 2, 20))
    total = float(source_sum_objective(Tensor(est), target, loss).data)
    per_source = per_source_losses(est, target, loss)
    assert per_source.shape == (4,)
    assert total == pytest.approx(per_source.sum(), rel=1e-12)
    assert total / 4 == pytest.approx(per_source.mean(), rel=1e-12)


def test_loss_gradients_match_finite_differences():
    assert run_op_check("loss_l1") <= 1e-4
    assert run_op_check("loss_l2") <= 1e-4


# --- optimizer ----------------------------------------------------------------------

def test_adam_minimizes_quadratic_bowl():
    x = Parameter(np.array([1.0]))
    state = OptimizerState.for_params([x])
    for _ in range(200):
        adam_step([x], [2 * x.data], state, lr=0.1)
    assert abs(x.data[0]) <= 1e-3 and state.step == 200


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.arange(4.0))
    state = OptimizerState.for_params([p])
    adam_step([p], [None], state, lr=0.1)
    adam_step([p], [np.zeros(4)], state, lr=0.1)
    assert np.array_equal(p.data, np.arange(4.0)) and state.step == 2


def test_adam_is_deterministic_and_rejects_non_finite():
    def run():
        p = Parameter(np.random.default_rng(0).standard_normal(5))
        state = OptimizerState.for_params([p])
        for k in range(10):
            adam_step([p], [np.sin(p.data * (k + 1))], state, lr=0.01)
        return p.data
    assert run().tobytes() == run().tobytes()
    p = Parameter(np.ones(3))
    state = OptimizerState.for_params([p])
    with pytest.raises(NonFiniteError):
        adam_step([p], [np.array([1.0, np.nan, 0.0])], state, lr=0.1)
    assert state.step == 0 and np.array_equal(p.data, np.ones(3))


def test_gradient_clipping():
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert global_norm([a.grad, b.grad]) == pytest.approx(1.0)
    np.testing.assert_allclose(a.grad, [0.6, 0.0])
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0)
    a.grad[0] = np.inf
    with pytest.raises(NonFiniteError):
        clip_grad_norm([a, b], 1.0)


def test_optimizer_state_round_trip(tmp_path):
    params = [Parameter(np.ones((2, 3))), Parameter(np.ones(4))]
    state = OptimizerState.for_params(params)
    adam_step(params, [np.ones((2, 3)), np.arange(4.0)], state, 0.1)
    save_optimizer(state, tmp_path)
    back = load_optimizer(tmp_path, params)
    assert back.step == 1
    for x, y in zip(state.first + state.second, back.first + back.second):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(ValueError):
        load_optimizer(tmp_path, [Parameter(np.ones((3, 2))), Parameter(np.ones(4))])


# --- configuration ----------------------------------------------------------------

def test_config_defaults_per_model():
    assert (TrainConfig().extract_seconds, TrainConfig().crop_seconds) == (11.0, 10.0)
    c = TrainConfig(model="convtasnet")
    assert (c.extract_seconds, c.crop_seconds) == (3.0, 2.0)
    assert TrainConfig().batch_size == 4 and TrainConfig().epochs == 20


@pytest.mark.parametrize("text, fragment", [
    ("[train]\nlearning_rat = 0.1\n", "'learning_rat'"),
    ("[data]\nmodel = demucs\n", "'model'"),
    ("[optim]\nlr = 1\n", "[optim]"),
    ("[train]\nloss = l3\n", "loss"),
    ("[train]\nbatch_size = 0\n", "batch_size"),
    ("[train]\nbatch_size = four\n", "batch_size"),
    ("[model]\nwidth = 3\n", "'width'"),
    ("[data]\ncrop_seconds = 11\n", "crop_seconds"),
])
def test_config_errors_name_the_key(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_config_file_round_trip(tmp_path):
    config = tiny_config(tmp_path, loss="l2", p_swap=0.25, shuffle=False)
    path = tmp_path / "c.ini"
    path.write_text(config_to_text(config))
    back = load_config(path)
    assert back.loss == "l2" and back.p_swap == 0.25 and back.shuffle is False
    assert back.model_spec() == config.model_spec()
    (tmp_path / "rel.ini").write_text("[data]\nmanifest = data/m.txt\n")
    assert load_config(tmp_path / "rel.ini").manifest == str(tmp_path / "data" / "m.txt")


# --- training loop --------------------------------------------------------------------

def test_one_small_step_decreases_batch_loss():
    for kind in ("demucs", "convtasnet"):
        model = build_model(kind, TrainConfig(model=kind).model_spec(), seed=0, dtype=np.float64)
        stems = synth_track(2, 1.0, SR).stacked()[None].astype(np.float64)[..., :4000]
        mix = stems.sum(axis=1)
        params = model.parameters()
        model.zero_grad()
        loss = loss_l1(model(Tensor(mix)), stems)
        backward(loss)
        adam_step(params, [p.grad for p in params], OptimizerState.for_params(params), lr=1e-5)
        after = float(loss_l1(model(Tensor(mix)), stems).data)
        assert after < float(loss.data), kind


@pytest.mark.parametrize("loss", ["l1", "l2"])
def test_smoke_training_writes_log_and_checkpoints(tmp_path, tiny_manifest, loss):
    config = tiny_config(tmp_path, loss=loss, epochs=1)
    result = train(config, tiny_manifest)
    assert [r["epoch"] for r in result.log_rows] == [0, 1]
    assert math.isnan(result.log_rows[0]["train_loss"])
    assert all(math.isfinite(r["valid_l1"]) for r in result.log_rows)
    header = (tmp_path / "ck" / "log.csv").read_text().splitlines()[0]
    assert header.split(",") == LOG_HEADER
    for sub in ("best", "last"):
        assert (tmp_path / "ck" / sub / "params.bin").exists()
    assert (tmp_path / "ck" / "config.ini").exists()


def test_resume_reproduces_uninterrupted_run(tmp_path, tiny_manifest):
    full = train(tiny_config(tmp_path / "a", epochs=3), tiny_manifest)
    partial = tiny_config(tmp_path / "b", epochs=1)
    train(partial, tiny_manifest)
    partial.epochs = 3
    resumed = train(partial, tiny_manifest, resume=True)
    assert [r["train_loss"] for r in resumed.log_rows[1:]] == [r["train_loss"] for r in full.log_rows[1:]]
    assert [r["valid_l1"] for r in resumed.log_rows] == [r["valid_l1"] for r in full.log_rows]
    a = (tmp_path / "a" / "ck" / "last" / "params.bin").read_bytes()
    b = (tmp_path / "b" / "ck" / "last" / "params.bin").read_bytes()
    assert a == b
    assert len(read_log(tmp_path / "b" / "ck" / "log.csv")) == 4


def test_resume_without_checkpoint_fails(tmp_path, tiny_manifest):
    with pytest.raises(FileNotFoundError):
        train(tiny_config(tmp_path), tiny_manifest, resume=True)


def test_checkpoint_round_trip_gives_identical_validation_loss(tmp_path, tiny_manifest):
    result = train(tiny_config(tmp_path, epochs=1), tiny_manifest)
    valid = [tiny_manifest.load(e) for e in tiny_manifest.split("valid")]
    model = load_model(tmp_path / "ck" / "last")
    recomputed = validation_l1(model, valid)
    assert abs(recomputed - result.log_rows[-1]["valid_l1"]) <= 1e-7
    best = load_model(result.checkpoint)
    assert abs(validation_l1(best, valid) - result.best_valid_l1) <= 1e-7


def test_convtasnet_training_smoke(tmp_path, tiny_manifest):
    config = tiny_config(tmp_path, model="convtasnet", epochs=1, model_overrides={
        "repeats": "1", "blocks_per_repeat": "2"}, extract_seconds=2.0, crop_seconds=1.0)
    result = train(config, tiny_manifest)
    assert math.isfinite(result.log_rows[-1]["train_loss"])


def test_non_finite_training_aborts(tmp_path, tiny_manifest):
    config = tiny_config(tmp_path, epochs=1)
    bad = synth_manifest(6, 3.0, SR, seed=4)
    original = bad.load

    def poisoned(entry):
        track = original(entry)
        if entry.split == "train":
            track.sources["bass"][:] = np.nan
        return track
    bad.load = poisoned
    with pytest.raises(NonFiniteError, match="track_"):
        train(config, bad)


def test_non_finite_validation_aborts(tmp_path):
    bad = synth_manifest(6, 3.0, SR, seed=4)
    original = bad.load

    def poisoned(entry):
        track = original(entry)
        if entry.split == "valid":
            track.sources["vocals"][:, :5] = np.nan
        return track
    bad.load = poisoned
    with pytest.raises(NonFiniteError, match="validation"):
        train(tiny_config(tmp_path, epochs=1), bad)


def test_saved_config_reloads_from_checkpoint_dir(tmp_path, tiny_manifest):
    config = tiny_config(tmp_path, epochs=1, manifest=str(tmp_path / "data" / "m.txt"))
    train(config, tiny_manifest)
    saved = (tmp_path / "ck" / "config.ini").read_text()
    assert str(tmp_path) not in saved
    back = load_config(tmp_path / "ck" / "config.ini")
    assert back.manifest == str(tmp_path / "ck" / ".." / "data" / "m.txt")
    assert back.model_spec() == config.model_spec()
