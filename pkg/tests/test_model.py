import dataclasses

import pytest
import torch

from ecgdiff.conditioning import ConditioningError
from ecgdiff.model import (
    DESK_SCALE,
    FULL_SCALE,
    Denoiser,
    ModelConfig,
    StepEmbedding,
    diffusion_step_embedding,
    init_params,
    sinusoidal_encoding,
)

SMALL = ModelConfig(channels=2, length=32, residual_channels=8, skip_channels=8, num_blocks=2,
                    s4_state_dim=4, embed_dim=16, step_embed_dim=16, step_hidden_dim=32, num_labels=2)


def test_raw_encoding_at_zero():
    enc = sinusoidal_encoding(0, 128)[0]
    assert torch.all(enc[:64] == 0)
    assert torch.all(enc[64:] == 1)


def test_raw_encoding_has_no_collisions():
    enc = sinusoidal_encoding(torch.arange(1, 10_001), 128)
    d = torch.cdist(enc[:-1], enc[1:]).diagonal()
    assert d.min().item() > 1e-3
    # nearest pair over the whole range, computed blockwise
    best = float("inf")
    for start in range(0, enc.shape[0], 2000):
        block = torch.cdist(enc[start:start + 2000], enc)
        rows = torch.arange(block.shape[0])
        block[rows, rows + start] = float("inf")
        best = min(best, block.min().item())
    assert best > 1e-6


def test_step_embedding_dims_and_errors():
    assert diffusion_step_embedding(torch.tensor([3, 4]), 64).shape == (2, 64)
    emb = StepEmbedding(32, 48)
    assert diffusion_step_embedding(torch.tensor([3, 4]), 32, emb).shape == (2, 48)
    with pytest.raises(ValueError):
        sinusoidal_encoding(1, 7)
    with pytest.raises(ValueError):
        diffusion_step_embedding(1, 16, emb)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        ModelConfig(num_blocks=0)
    with pytest.raises(ValueError):
        ModelConfig(mechanism="film")
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ValueError):
        ModelConfig.from_dict({**SMALL.to_dict(), "dropout": 0.1})
    assert DESK_SCALE.channels == 2 and DESK_SCALE.length == 256 and DESK_SCALE.num_blocks == 4
    assert DESK_SCALE.residual_channels == 32 and DESK_SCALE.s4_state_dim == 16
    assert FULL_SCALE.channels == 8 and FULL_SCALE.length == 1000


def test_full_scale_io_shape():
    # the full-scale I/O contract at reduced width keeps the test cheap
    cfg = dataclasses.replace(FULL_SCALE, residual_channels=8, skip_channels=8, num_blocks=2,
                              s4_state_dim=8, step_hidden_dim=32)
    model = init_params(cfg, 0)
    with torch.no_grad():
        out = model(torch.randn(2, 8, 1000), torch.tensor([1, 50]), torch.tensor([[0], [1]]))
    assert out.shape == (2, 8, 1000)


@pytest.mark.parametrize("cfg", [SMALL, dataclasses.replace(SMALL, num_blocks=1, residual_channels=4),
                                 dataclasses.replace(SMALL, mechanism="legacy")])
def test_shape_preserved_and_deterministic(cfg):
    model = init_params(cfg, 1)
    x = torch.randn(3, 2, 32)
    t = torch.tensor([1, 10, 100])
    y = torch.tensor([[0, 1], [1, 1], [0, 0]])
    with torch.no_grad():
        a, b = model(x, t, y), model(x, t, y)
    assert a.shape == x.shape
    assert torch.equal(a, b)


def test_forward_errors():
    model = init_params(SMALL, 0)
    with pytest.raises(ValueError):
        model(torch.randn(1, 3, 32), 1, torch.tensor([[0, 1]]))
    with pytest.raises(ConditioningError):
        model(torch.randn(1, 2, 32), 1, torch.tensor([[0, 1, 1]]))


def test_label_flip_changes_output():
    model = init_params(SMALL, 2)
    x = torch.randn(1, 2, 32)
    with torch.no_grad():
        a = model(x, 5, torch.tensor([[0, 0]]))
        b = model(x, 5, torch.tensor([[0, 1]]))
    assert (a - b).norm().item() > 0


def test_same_seed_same_params_and_finite():
    a, b = init_params(SMALL, 7), init_params(SMALL, 7)
    c = init_params(SMALL, 8)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)
    assert all(torch.isfinite(v).all() for v in sa.values())


def test_init_does_not_touch_global_rng():
    torch.manual_seed(123)
    before = torch.rand(1)
    torch.manual_seed(123)
    init_params(SMALL, 0)
    assert torch.equal(torch.rand(1), before)


def test_init_output_scale():
    model = init_params(DESK_SCALE, 0)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(8, 2, 256, generator=g)
    with torch.no_grad():
        out = model(x, torch.randint(1, 201, (8,), generator=g), torch.zeros(8, 1, dtype=torch.long))
    assert 0.1 <= out.std().item() <= 10


def test_embedding_table_gradient_is_live():
    model = init_params(SMALL, 3).double()
    x = torch.randn(2, 2, 32, dtype=torch.float64)
    y = torch.tensor([[0, 1], [1, 0]])

    def f():
        return model(x, torch.tensor([3, 7]), y).pow(2).sum().item()

    table = model.conditioner.table
    h = 1e-4
    with torch.no_grad():
        orig = table[0, 0, 0].item()
        table[0, 0, 0] = orig + h
        up = f()
        table[0, 0, 0] = orig - h
        down = f()
        table[0, 0, 0] = orig
    assert abs((up - down) / (2 * h)) > 1e-8


def test_denoiser_is_module():
    assert isinstance(init_params(SMALL), Denoiser)
