import pytest

from graphcage.config import (ModelConfig, TrainConfig, config_to_dict,
                              load_config, parse_config_text)


class TestModelConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.fused_dim == 2 * cfg.d_h
        assert cfg.max_len("a") == cfg.max_len_a

    @pytest.mark.parametrize("field,value", [
        ("d_t", 0), ("n_nodes", 0), ("routing_iters", -1), ("depth", 0),
    ])
    def test_nonpositive_sizes_rejected(self, field, value):
        with pytest.raises(ValueError, match=field):
            ModelConfig(**{field: value})

    def test_odd_branch_width_rejected(self):
        with pytest.raises(ValueError, match="even"):
            ModelConfig(d_h=7, heads=1)

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ValueError, match="heads"):
            ModelConfig(d_h=8, heads=3)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError, match="aggregation"):
            ModelConfig(aggregation="median")
        with pytest.raises(ValueError, match="construction"):
            ModelConfig(construction="conv")


class TestTrainConfig:
    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(l2_lambda=-1e-4)

    def test_zero_clip_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(grad_clip=0.0)


class TestParser:
    def test_flat_keys_route_to_both_dataclasses(self):
        cfg = parse_config_text("d_h = 4\nheads = 1\nlearning_rate = 0.01\n"
                                "epochs = 3\n")
        assert cfg.model.d_h == 4
        assert cfg.model.heads == 1
        assert cfg.learning_rate == 0.01
        assert cfg.epochs == 3

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# header\n\nseed = 5  # trailing\n")
        assert cfg.seed == 5

    def test_quoted_strings(self):
        cfg = parse_config_text('train_path = "data/train.jsonl"\n')
        assert cfg.train_path == "data/train.jsonl"

    def test_bare_string_value(self):
        cfg = parse_config_text("aggregation = mean\n")
        assert cfg.model.aggregation == "mean"

    def test_bool_coercion(self):
        # no bool fields today, but the parser must still read them literally
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_text("verbose = true\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_text("dropout = 0.5\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_config_text("just some words\n")

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("GRAPHCAGE_SEED", "99")
        cfg = parse_config_text("seed = 3\n")
        assert cfg.seed == 99

    def test_env_seed_absent(self, monkeypatch):
        monkeypatch.delenv("GRAPHCAGE_SEED", raising=False)
        assert parse_config_text("seed = 3\n").seed == 3

    def test_load_config_roundtrip(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("d_c = 4\nbatch_size = 2\n")
        cfg = load_config(str(path))
        assert cfg.model.d_c == 4
        assert cfg.batch_size == 2

    def test_config_to_dict_nests_model(self):
        d = config_to_dict(TrainConfig())
        assert d["model"]["d_c"] == 16
        assert d["learning_rate"] == 1e-3
