import numpy as np
import pytest
import torch

from hardnet_cws.colour import CHANNEL_MODES, EyConfig
from hardnet_cws.encoder import StemConfig, builtin_schedule
from hardnet_cws.model import (ModelConfig, ModelConfigError, build_model, freeze_prefix, parameter_inventory,
                               scope_prefixes)


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig())


@pytest.mark.parametrize("mode", list(CHANNEL_MODES))
def test_forward_every_channel_mode(mode, rng):
    m = build_model(ModelConfig(channel_mode=mode)).eval()
    imgs = rng.integers(0, 256, (2, 32, 32, 3), dtype=np.uint8)
    out = m(imgs)
    assert out.main.shape == (2, 1, 32, 32)
    assert m.encoder.stem.in_channels == len(CHANNEL_MODES[mode])


def test_merged_and_raw_inputs_agree(model, rng):
    model.eval()
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    a = model(img).main
    b = model(model.adapt(img)).main
    assert torch.equal(a, b)


def test_predict_restores_mode(model, rng):
    model.train()
    p = model.predict(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
    assert model.training
    assert p.shape == (32, 32) and 0 <= p.min() and p.max() <= 1


def test_build_is_seeded():
    a = build_model(ModelConfig(seed=3)).state_dict()
    b = build_model(ModelConfig(seed=3)).state_dict()
    c = build_model(ModelConfig(seed=4)).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_config_roundtrip():
    cfg = ModelConfig(channel_mode="RGB+Y+A", ey=EyConfig(3, True), schedule=builtin_schedule("dfus"), seed=9)
    assert ModelConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_stem_mode_mismatch():
    with pytest.raises(ModelConfigError):
        ModelConfig(channel_mode="RGB", stem=StemConfig(in_channels=4))


def test_schedules_change_parameter_count():
    d = parameter_inventory(build_model(ModelConfig(schedule=builtin_schedule("dfus"))))["total"]
    c = parameter_inventory(build_model(ModelConfig(schedule=builtin_schedule("cws"))))["total"]
    assert d != c


def test_freeze_scopes(model):
    assert scope_prefixes(model, "none") == []
    assert scope_prefixes(model, "stem") == ["encoder.stem."]
    assert scope_prefixes(model, "stem+block2") == ["encoder.stem.", "encoder.blocks.0.", "encoder.blocks.1.",
                                                    "encoder.downs.0."]
    frozen = freeze_prefix(model, "stem+block1")
    assert frozen and all(n.startswith(("encoder.stem.", "encoder.blocks.0.")) for n in frozen)
    inv = parameter_inventory(model)
    assert inv["frozen"] == sum(p.numel() for n, p in model.named_parameters() if n in frozen)
    freeze_prefix(model, "none")
    assert parameter_inventory(model)["frozen"] == 0
    for bad in ("block1", "stem+block9", "stem+"):
        with pytest.raises(ModelConfigError):
            freeze_prefix(model, bad)
