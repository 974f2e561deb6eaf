import pytest

from pmce.config import TrainConfig, load_config, preset, read_kv, toy, write_kv


def test_kv_comments_and_blank_lines(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# header\n\nlr = 5e-4   # trailing\n steps=10\nzero_features = yes\n")
    assert read_kv(f) == {"lr": "5e-4", "steps": "10", "zero_features": "yes"}
    cfg = load_config(f)
    assert (cfg.lr, cfg.steps, cfg.zero_features) == (5e-4, 10, True)


def test_flag_overrides_beat_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("steps = 10\n")
    assert load_config(f, {"steps": "20"}).steps == 20


def test_preset_selected_in_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("preset = full\n")
    assert load_config(f).num_joints == 24


def test_bad_line(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("just words\n")
    with pytest.raises(ValueError):
        read_kv(f)


def test_unknown_key():
    with pytest.raises(KeyError):
        load_config(overrides={"learning_rate": "1"})


def test_bad_values():
    with pytest.raises(ValueError):
        load_config(overrides={"steps": "many"})
    with pytest.raises(ValueError):
        load_config(overrides={"zero_features": "perhaps"})


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("huge")


def test_dashes_accepted():
    assert load_config(overrides={"batch-size": "4"}).batch_size == 4


def test_write_read_round_trip(tmp_path):
    cfg = toy().replace(lr=3e-4, zero_features=True, dataset="data/x")
    write_kv(cfg, tmp_path / "c.cfg")
    assert load_config(tmp_path / "c.cfg") == cfg


def test_dict_round_trip():
    cfg = toy().replace(seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        TrainConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_surface_warmup_ramp():
    cfg = toy().replace(steps=100, surface_warmup=0.5)
    assert cfg.loss_weights(0).edge == 0.0
    assert cfg.loss_weights(25).edge == pytest.approx(cfg.w_edge / 2)
    assert cfg.loss_weights(50).normal == cfg.w_normal
    assert cfg.loss_weights().edge == cfg.w_edge
    assert cfg.replace(surface_warmup=0.0).loss_weights(0).edge == cfg.w_edge
