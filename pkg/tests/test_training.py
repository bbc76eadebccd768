import json
import math
import struct

import numpy as np
import pytest

from mcan import tensor as T
from mcan.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mcan.config import build_config
from mcan.data import collate, make_batches
from mcan.losses import ALPHA, BETA, main_loss, total_loss
from mcan.metrics import MetricError, compute_metrics
from mcan.model import TRACE_NAMES, ModelConfig, forward_full, init_params
from mcan.optim import Adam, AdamState, adam_step, clip_grad_norm
from mcan.params import ParamStore
from mcan.training import run_training, train_steps


def tiny_cfg(**kw):
    base = dict(d=8, heads=2, ffn_hidden=16, d_t_raw=8, d_v_raw=5, d_a_raw=4, micro_layers=1)
    base.update(kw)
    return ModelConfig(**base)


class TestLossFunctions:
    def test_main_loss_examples(self):
        y = T.Tensor(np.array([0.5, -1.0]))
        assert main_loss(y, y).item() == 0.0
        assert main_loss(T.Tensor(np.array([0.0])), T.Tensor(np.array([2.0]))).item() == 4.0

    def test_main_loss_loop(self, rng):
        a, b = rng.normal(size=17), rng.normal(size=17)
        acc = 0.0
        for x, y in zip(a, b):
            acc += (x - y) ** 2
        assert main_loss(T.Tensor(a), T.Tensor(b)).item() == pytest.approx(acc / 17, abs=1e-14)

    def test_main_loss_empty(self):
        with pytest.raises(ValueError):
            main_loss(T.Tensor(np.zeros(0)), T.Tensor(np.zeros(0)))

    def test_total_examples(self):
        rep = total_loss(1.0, 1.0, 1.0, 1.5, 1.5, ALPHA, BETA)
        assert abs(rep.total - 1.023) <= 1e-12
        assert total_loss(0.7, 5.0, 2.0, 3.0, 1.0, 0.0, 0.0).total == 0.7
        assert total_loss(0, 0, 0, 0, 0).total == 0.0
        assert (ALPHA, BETA) == (1e-2, 1e-3)

    def test_total_rejects_non_finite(self):
        with pytest.raises(T.NumericError):
            total_loss(1.0, float("nan"), 0, 0, 0)


class TestAdam:
    def test_first_step(self):
        p = {"x": np.array([1.0])}
        adam_step(p, {"x": np.array([1.0])}, AdamState(), 0.1)
        assert p["x"][0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_is_inert(self):
        p = {"x": np.array([0.3, -2.0])}
        state = AdamState()
        for _ in range(20):
            adam_step(p, {"x": np.zeros(2)}, state, 0.1)
        assert p["x"].tolist() == [0.3, -2.0]

    def test_descends_quadratic(self):
        p = {"x": np.array([1.0])}
        state = AdamState()
        values = [1.0]
        for _ in range(10):
            adam_step(p, {"x": 2 * p["x"]}, state, 1e-2)
            values.append(float(p["x"][0] ** 2))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState(), 0.1)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
        assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0, abs=1e-9)

    def test_learning_rate_groups(self):
        params = init_params(tiny_cfg(text_encoder="project"))
        opt = Adam(params, lr=1e-4, lr_text=5e-5)
        assert {opt.lrs[n] for n in params.names("encoder.text")} == {5e-5}
        assert {opt.lrs[n] for n in params if not n.startswith("encoder.text.")} == {1e-4}


def loop_metrics(preds, labels):
    n = len(preds)
    mae = sum(abs(p - y) for p, y in zip(preds, labels)) / n
    mp, my = sum(preds) / n, sum(labels) / n
    cov = sum((p - mp) * (y - my) for p, y in zip(preds, labels))
    corr = cov / math.sqrt(sum((p - mp) ** 2 for p in preds) * sum((y - my) ** 2 for y in labels))

    def cls(v):
        v = min(3.0, max(-3.0, v))
        return round(v)  # python round is half-even

    acc7 = sum(cls(p) == cls(y) for p, y in zip(preds, labels)) / n
    hit = tp = fp = fn = m = 0
    for p, y in zip(preds, labels):
        if y == 0:
            continue
        m += 1
        pos_p, pos_y = p >= 0, y > 0
        hit += pos_p == pos_y
        tp += pos_p and pos_y
        fp += pos_p and not pos_y
        fn += (not pos_p) and pos_y
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return dict(acc2=hit / m, acc7=acc7, f1=f1, corr=corr, mae=mae)


class TestMetrics:
    def test_perfect(self):
        y = np.array([-2.0, -0.5, 1.0, 2.5, 0.0])
        m = compute_metrics(y, y)
        assert (m.acc2, m.acc7, m.f1, m.mae) == (1.0, 1.0, 1.0, 0.0)
        assert m.corr == pytest.approx(1.0)
        assert m.n_binary == 4 and m.n_total == 5

    def test_anti(self):
        y = np.array([-2.0, -0.5, 1.0, 2.5])
        m = compute_metrics(-y, y)
        assert m.acc2 == 0.0 and m.corr == pytest.approx(-1.0)

    def test_matches_loop_oracle(self, rng):
        labels = np.round(rng.uniform(-3, 3, size=100) * 2) / 2
        preds = labels + rng.normal(scale=1.0, size=100)
        m = compute_metrics(preds, labels)
        ref = loop_metrics(list(preds), list(labels))
        for k, v in ref.items():
            assert getattr(m, k) == pytest.approx(v, abs=1e-12), k

    def test_errors(self):
        with pytest.raises(MetricError):
            compute_metrics([1.0], [1.0])
        with pytest.raises(MetricError):
            compute_metrics([1.0, 1.0], [0.0, 2.0])


class TestForward:
    def test_trace_names(self, small_samples):
        cfg = tiny_cfg()
        trace, rep = forward_full(collate(small_samples[:3]), init_params(cfg), cfg)
        assert trace.names() == set(TRACE_NAMES)
        assert len(TRACE_NAMES) == 22
        parts = rep.main + ALPHA * (rep.oc_micro + rep.oc_macro) + BETA * (rep.diff_micro + rep.diff_macro)
        assert abs(rep.total - parts) <= 1e-12

    def test_zero_weights_match_main_only_model(self, small_samples):
        full, bare = tiny_cfg(), tiny_cfg(use_cmb=False)
        pf, pb = init_params(full, 5), init_params(bare, 5)
        assert not pb.names("cmb")
        for name in pb:
            assert np.array_equal(pf[name].data, pb[name].data)
        batch = collate(small_samples[:4])
        _, rf = forward_full(batch, pf, full, 0.0, 0.0)
        _, rb = forward_full(batch, pb, bare, 0.0, 0.0)
        assert rf.total == rb.total

        batches = make_batches(small_samples, 4, seed=0)
        lf = train_steps(pf, batches, full, Adam(pf, lr=1e-3), 0.0, 0.0)
        lb = train_steps(pb, batches, bare, Adam(pb, lr=1e-3), 0.0, 0.0)
        assert lf == lb
        for name in pb:
            assert np.array_equal(pf[name].data, pb[name].data), name

    def test_every_parameter_gets_a_finite_gradient(self, small_samples):
        cfg = tiny_cfg(text_encoder="project")
        params = init_params(cfg)
        _, rep = forward_full(collate(small_samples[:4]), params, cfg)
        T.backward(rep.tensor)
        for name, t in params.items():
            assert t.grad is not None, name
            assert np.all(np.isfinite(t.grad)), name
        assert any(np.any(params[n].grad != 0) for n in params.names("cmb"))

    def test_batch_loss_is_mean_of_per_sample(self, small_samples):
        cfg = tiny_cfg()
        params = init_params(cfg)
        with T.no_grad():
            _, whole = forward_full(collate(small_samples[:3]), params, cfg)
            singles = [forward_full(collate([s]), params, cfg)[1] for s in small_samples[:3]]
        for key in ("main", "oc_micro", "diff_micro", "oc_macro", "diff_macro", "total"):
            assert getattr(whole, key) == pytest.approx(np.mean([getattr(r, key) for r in singles]), rel=1e-9)


class TestCheckpoint:
    def test_byte_layout(self, tmp_path):
        path = tmp_path / "a.ckpt"
        save_checkpoint(path, {"w": np.array([[1.0, 2.0, 3.0]])})
        expected = struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 1, 3)
        expected += np.array([1, 2, 3], "<f4").tobytes()
        assert path.read_bytes() == expected

    def test_roundtrip(self, tmp_path):
        params = init_params(tiny_cfg(), 1)
        save_checkpoint(tmp_path / "p.ckpt", params.state())
        back = load_checkpoint(tmp_path / "p.ckpt")
        assert list(back) == list(params)
        for name, t in params.items():
            assert np.array_equal(back[name], t.data.astype(np.float32).astype(np.float64))

    def test_truncated(self, tmp_path):
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, {"w": np.ones((4, 4))})
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_training_is_deterministic(tmp_path, small_samples):
    from mcan.data import write_dataset
    write_dataset(small_samples, tmp_path / "d.jsonl")
    cfg = build_config(None, [f"data.path={json.dumps(str(tmp_path / 'd.jsonl'))}", "train.epochs=2",
                              "train.batch_size=4", "model.d=8", "model.heads=2", "model.ffn_hidden=16",
                              "model.micro_layers=1", "data.val_fraction=0.25", "data.test_fraction=0.25"])
    run_training(cfg, tmp_path / "r1")
    run_training(cfg, tmp_path / "r2")
    assert (tmp_path / "r1" / "metrics.jsonl").read_text() == (tmp_path / "r2" / "metrics.jsonl").read_text()
    assert (tmp_path / "r1" / "best.ckpt").read_bytes() == (tmp_path / "r2" / "best.ckpt").read_bytes()
