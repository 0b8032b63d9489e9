import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import training
from checkpoint import to_bytes
from config import ModelConfig, TrainConfig
from data import ApplicationRecord, Dataset, RawDocument
from embedding import embed_document
from errors import ContractError, DataError, NumericError, UndefinedMetricError
from model import PJFNN
from tensor_core import Tensor, default_dtype, gradient_check
from training import AdamState, adam_step, contrastive_loss, cosine_distance, objective, train


# ==================== 距离 / 损失 ====================
def test_cosine_distance_examples():
    u = np.array([0.3, -1.2, 2.0])
    assert cosine_distance(u, u) == pytest.approx(-1.0)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
    assert cosine_distance(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(-0.70710678)


def test_cosine_distance_zero_vector():
    with pytest.raises(UndefinedMetricError):
        cosine_distance(np.zeros(2), np.ones(2))


def test_loss_single_positive_identical_latents():
    v = Tensor([[0.5, 1.0, -2.0]])
    assert contrastive_loss(v, v).item() == pytest.approx(-1.0, abs=1e-6)


def test_loss_positive_and_negative_cancel():
    v = Tensor([[0.5, 1.0, -2.0]])
    assert contrastive_loss(v, v, v, v).item() == pytest.approx(0.0, abs=1e-6)


def test_loss_regularizer_isolated():
    v = Tensor([[1.0, 2.0]])
    theta = [Tensor([1.0, -2.0]), Tensor([[3.0]])]
    loss = contrastive_loss(v, v, v, v, regularized=theta, lam=0.01)
    assert loss.item() == pytest.approx(0.01 * (1 + 4 + 9), abs=1e-6)


def test_loss_monotone_in_pair_cosines():
    base_j = Tensor([[1.0, 0.0], [1.0, 0.0]])
    close = Tensor([[1.0, 0.1], [1.0, 1.0]])
    far = Tensor([[1.0, 1.0], [1.0, 1.0]])
    neg_j, neg_r = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])
    # 正样本余弦升高 -> 损失下降
    assert contrastive_loss(base_j, close, neg_j, neg_r).item() < contrastive_loss(base_j, far, neg_j, neg_r).item()
    # 负样本余弦升高 -> 损失上升
    closer_neg = Tensor([[1.0, 0.5]])
    assert contrastive_loss(base_j, far, neg_j, closer_neg).item() > contrastive_loss(base_j, far, neg_j, neg_r).item()


def test_objective_requires_positives(tiny_model_config):
    model = PJFNN.create(tiny_model_config, 6, 4)
    with pytest.raises(ContractError):
        objective(model, [], [], lam=0.0)


def test_objective_gradients_match_finite_differences(tiny_model_config, make_doc):
    model = PJFNN.create(tiny_model_config, 6, 4, seed=0)
    rng = np.random.default_rng(0)
    params = {}
    for name, arr in model.params.weights.items():
        noise = rng.normal(scale=0.1, size=arr.shape)
        params[name] = 1.0 + noise if name.endswith(".gamma") else noise

    jobs = [make_doc(f"j{i}", "job", [int(n) for n in rng.integers(2, 12, size=2)], seed=i) for i in range(4)]
    resumes = [make_doc(f"r{i}", "resume", [int(n) for n in rng.integers(2, 12, size=3)], seed=50 + i) for i in range(4)]
    pos = list(zip(jobs, resumes))
    neg = [(jobs[(i + 1) % 4], resumes[i]) for i in range(4)]

    def loss_fn(t):
        return objective(model, pos, neg, lam=1e-2, mode="train", weights=t)

    with default_dtype(np.float64):
        report = gradient_check(loss_fn, params, eps=1e-6, rtol=1e-3, atol=1e-6)
    worst = max(report, key=report.get)
    assert report[worst] < 1e-3, f"{worst}: {report[worst]}"


# ==================== Adam ====================
def _adam_config(**kwargs):
    return TrainConfig(**kwargs)


def test_adam_zero_gradients_keep_params():
    params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params), _adam_config())
    assert_array_equal(new["w"], params["w"])
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    params = {"w": np.zeros(3, dtype=np.float64)}
    grads = {"w": np.array([0.5, -3.0, 10.0])}
    new, _ = adam_step(params, grads, AdamState.zeros_like(params), _adam_config(lr=0.01))
    assert_allclose(new["w"], -0.01 * np.sign(grads["w"]), rtol=1e-6)


def test_adam_does_not_mutate_inputs():
    params = {"w": np.ones(2)}
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": np.ones(2)}, state, _adam_config())
    assert_array_equal(params["w"], np.ones(2))
    assert_array_equal(state.m["w"], np.zeros(2))
    assert state.t == 0


def test_adam_key_mismatch():
    params = {"w": np.ones(2)}
    with pytest.raises(ContractError):
        adam_step(params, {"v": np.ones(2)}, AdamState.zeros_like(params), _adam_config())
    with pytest.raises(ContractError):
        adam_step(params, {"w": np.ones(3)}, AdamState.zeros_like(params), _adam_config())


# ==================== 训练循环 ====================
def _config(**kwargs):
    values = {"epochs": 2, "batch_size": 16, "lr": 1e-2, "seed": 0}
    values.update(kwargs)
    return TrainConfig(**values)


def test_train_lr_zero_keeps_learnable_params(tiny_dataset, tiny_tables, tiny_model_config):
    result = train(tiny_dataset, *tiny_tables, _config(lr=0.0), tiny_model_config)
    for name, arr in result.checkpoint.params.weights.items():
        assert_array_equal(arr, result.initial_weights[name])


def test_train_deterministic(tiny_dataset, tiny_tables, tiny_model_config):
    a = train(tiny_dataset, *tiny_tables, _config(), tiny_model_config)
    b = train(tiny_dataset, *tiny_tables, _config(), tiny_model_config)
    assert to_bytes(a.checkpoint) == to_bytes(b.checkpoint)
    assert [e.loss for e in a.losses] == [e.loss for e in b.losses]


def test_train_leaves_embeddings_frozen(tiny_dataset, tiny_tables, tiny_model_config):
    job_table, resume_table = tiny_tables
    before = job_table.vectors.copy(), resume_table.vectors.copy()
    result = train(tiny_dataset, job_table, resume_table, _config(), tiny_model_config)
    assert_array_equal(result.checkpoint.job_table.vectors, before[0])
    assert_array_equal(result.checkpoint.resume_table.vectors, before[1])


def test_train_loss_log_and_running_stats(tiny_dataset, tiny_tables, tiny_model_config, tmp_path):
    result = train(tiny_dataset, *tiny_tables, _config(epochs=3), tiny_model_config)
    assert [e.epoch for e in result.losses] == [1, 2, 3]
    n_pos = len(tiny_dataset.positives())
    assert all(e.negatives == n_pos for e in result.losses)
    assert not np.array_equal(result.checkpoint.params.buffers["job.bn1.running_var"], np.ones(5))

    path = tmp_path / "loss.jsonl"
    result.write_loss_log(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["epoch"] == 1


def test_train_real_mode(tiny_dataset, tiny_tables, tiny_model_config):
    result = train(tiny_dataset, *tiny_tables, _config(negative_mode="real", epochs=1), tiny_model_config)
    assert result.checkpoint.config["train"]["negative_mode"] == "real"


def test_train_without_positives(tiny_dataset, tiny_tables, tiny_model_config):
    failures_only = tiny_dataset.subset(tiny_dataset.failures())
    with pytest.raises(DataError):
        train(failures_only, *tiny_tables, _config(), tiny_model_config)


def test_train_non_finite_loss_aborts(tiny_dataset, tiny_tables, tiny_model_config, monkeypatch):
    monkeypatch.setattr(training, "objective", lambda *args, **kwargs: Tensor(np.nan))
    with pytest.raises(NumericError) as exc:
        train(tiny_dataset, *tiny_tables, _config(), tiny_model_config)
    assert "epoch=1" in str(exc.value) and "batch=1" in str(exc.value)


def _short_resume_dataset():
    jobs = {
        f"j{i}": RawDocument(id=f"j{i}", side="job", category="T", year=2013, items=[["j1", "j2", "j3"], ["j4"]])
        for i in range(3)
    }
    resumes = {"r0": RawDocument(id="r0", side="resume", category="T", year=2013, items=[["r1", "r2"]])}
    apps = [ApplicationRecord(job_id="j0", resume_id="r0", label="success", year=2013)]
    return Dataset(jobs, resumes, apps)


@pytest.mark.parametrize("model_config", [ModelConfig(), ModelConfig(latent_dim=4, job_hidden=5, resume_hidden=3, kernel1=2, kernel2=2)])
def test_train_single_positive_with_one_short_resume_item(job_table, resume_table, model_config):
    dataset = _short_resume_dataset()
    result = train(dataset, job_table, resume_table, _config(epochs=1), model_config)
    assert len(result.losses) == 1
    assert np.isfinite(result.losses[0].loss)


def test_train_batch_size_one_with_short_items(job_table, resume_table, tiny_model_config):
    dataset = _short_resume_dataset()
    dataset.applications.append(ApplicationRecord(job_id="j1", resume_id="r0", label="success", year=2014))
    result = train(dataset, job_table, resume_table, _config(batch_size=1), tiny_model_config)
    assert [e.epoch for e in result.losses] == [1, 2]
    job = embed_document(dataset.jobs["j0"], job_table)
    resume = embed_document(dataset.resumes["r0"], resume_table)
    assert np.isfinite(result.checkpoint.model().score(job, resume))
