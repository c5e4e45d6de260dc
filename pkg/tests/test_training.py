import json

import numpy as np
import pytest

from graphcage.config import ModelConfig, TrainConfig
from graphcage.data import SyntheticSpec, generate_dataset, load_dataset
from graphcage.model import GraphCage
from graphcage.tensor import ParameterRegistry
from graphcage.training import (NaNLossError, RMSPROP_DECAY, RMSPROP_EPS,
                                RMSprop, clip_global_norm, evaluate, train)

TINY_MODEL = dict(d_t=3, d_a=3, d_v=3, max_len_t=4, max_len_a=6, max_len_v=6,
                  d_h=4, heads=1, depth=1, d_c=4, n_nodes=3)
TINY_SPEC = SyntheticSpec(d_t=3, d_a=3, d_v=3, len_t=(4, 4), len_a=(6, 6),
                          len_v=(6, 6), n_train=8, n_val=4, n_test=4)


def tiny_cfg(data_dir, **kw):
    defaults = dict(model=ModelConfig(**TINY_MODEL), epochs=2, batch_size=4,
                    seed=0, train_path=f"{data_dir}/train.jsonl",
                    val_path=f"{data_dir}/val.jsonl")
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    generate_dataset(TINY_SPEC, 0, str(out))
    return str(out)


class TestRMSprop:
    def test_matches_manual_update(self):
        reg = ParameterRegistry()
        w = reg.register("w", np.array([1.0, -2.0, 3.0]))
        opt = RMSprop(reg, lr=0.1)
        v = np.zeros(3)
        data = w.data.copy()
        rng = np.random.default_rng(0)
        for _ in range(5):
            g = rng.normal(size=3)
            w.grad = g.copy()
            opt.step()
            v = RMSPROP_DECAY * v + (1 - RMSPROP_DECAY) * g * g
            data = data - 0.1 * g / (np.sqrt(v) + RMSPROP_EPS)
            assert np.allclose(w.data, data, atol=1e-15)

    def test_skips_frozen_and_gradless(self):
        reg = ParameterRegistry()
        frozen = reg.register("frozen", np.ones(2), trainable=False)
        gradless = reg.register("gradless", np.ones(2))
        frozen.grad = np.ones(2)
        opt = RMSprop(reg, lr=0.5)
        opt.step()
        assert np.all(frozen.data == 1.0)
        assert np.all(gradless.data == 1.0)


class TestClipping:
    def test_norm_above_threshold_scaled_to_threshold(self):
        reg = ParameterRegistry()
        a = reg.register("a", np.zeros(3))
        b = reg.register("b", np.zeros(4))
        a.grad = np.full(3, 2.0)
        b.grad = np.full(4, -2.0)
        before = np.sqrt(sum((t.grad ** 2).sum() for t in (a, b)))
        returned = clip_global_norm(reg, 1.0)
        after = np.sqrt(sum((t.grad ** 2).sum() for t in (a, b)))
        assert returned == pytest.approx(before)
        assert after == pytest.approx(1.0)
        # direction preserved
        assert np.allclose(a.grad / np.linalg.norm(a.grad),
                           np.full(3, 2.0) / np.linalg.norm(np.full(3, 2.0)))

    def test_norm_below_threshold_untouched(self):
        reg = ParameterRegistry()
        a = reg.register("a", np.zeros(2))
        a.grad = np.array([0.3, 0.4])
        clip_global_norm(reg, 1.0)
        assert np.array_equal(a.grad, [0.3, 0.4])


class TestLossDecomposition:
    def test_total_is_mae_plus_penalty(self, tiny_data):
        cfg = tiny_cfg(tiny_data)
        model = GraphCage(cfg.model, seed=1)
        examples = load_dataset(cfg.train_path)
        from graphcage.data import make_batch
        batch = make_batch(examples[:4])
        total, mae, penalty, pred = model.loss(batch, cfg.l2_lambda)
        assert total.item() == pytest.approx(mae.item() + penalty.item())
        assert penalty.item() > 0.0
        assert mae.item() == pytest.approx(
            np.mean(np.abs(pred.data - batch.labels)))

    def test_zero_lambda_drops_penalty(self, tiny_data):
        cfg = tiny_cfg(tiny_data)
        model = GraphCage(cfg.model, seed=1)
        from graphcage.data import make_batch
        batch = make_batch(load_dataset(cfg.train_path)[:4])
        total, mae, penalty, _ = model.loss(batch, 0.0)
        assert penalty.item() == 0.0
        assert total.item() == pytest.approx(mae.item())


class TestTrainLoop:
    def test_overfits_a_small_split(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data, epochs=8, learning_rate=5e-3)
        out = train(cfg, str(tmp_path / "run"))
        first = out["history"][0]["train_mae"]
        last = out["history"][-1]["train_mae"]
        assert last < first

    def test_log_structure(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data)
        out = train(cfg, str(tmp_path / "run"))
        lines = open(out["log_path"]).read().splitlines()
        header = json.loads(lines[0])
        assert header["optimizer"]["name"] == "rmsprop"
        assert header["config"]["learning_rate"] == cfg.learning_rate
        assert len(lines) == 1 + cfg.epochs
        for line in lines[1:]:
            entry = json.loads(line)
            for key in ("epoch", "train_mae", "train_penalty", "train_loss",
                        "val_loss", "val_mae", "val_penalty"):
                assert key in entry

    def test_checkpoint_written_and_loadable(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data)
        out = train(cfg, str(tmp_path / "run"))
        restored = GraphCage.load(out["checkpoint_path"])
        assert restored.cfg == cfg.model
        report = evaluate(restored, load_dataset(f"{tiny_data}/test.jsonl"))
        assert 0.0 <= report.acc2 <= 1.0

    def test_seed_determinism_bitwise(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data)
        out1 = train(cfg, str(tmp_path / "one"))
        out2 = train(cfg, str(tmp_path / "two"))
        assert open(out1["log_path"], "rb").read() == \
               open(out2["log_path"], "rb").read()
        assert open(out1["checkpoint_path"], "rb").read() == \
               open(out2["checkpoint_path"], "rb").read()

    def test_nan_abort_names_parameter(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data, epochs=1)
        model = GraphCage(cfg.model, seed=0)
        model.parameters()["fuse.v2t.proj_t.kernel"].tensor.data[:] = np.nan
        with pytest.raises(NaNLossError, match="fuse.v2t.proj_t.kernel"):
            train(cfg, str(tmp_path / "run"), model=model)

    def test_dimension_mismatch_rejected(self, tiny_data, tmp_path):
        cfg = tiny_cfg(tiny_data)
        cfg.model = ModelConfig(**{**TINY_MODEL, "d_t": 5})
        with pytest.raises(ValueError, match="modality 't'"):
            train(cfg, str(tmp_path / "run"))
