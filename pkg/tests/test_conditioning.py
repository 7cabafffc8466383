import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ecgdiff.conditioning import (
    PAD,
    ConditioningError,
    LegacyConditioner,
    NleConditioner,
    all_label_vectors,
    embed_legacy,
    embed_nle,
    legacy_distinguishability,
    make_conditioner,
    neutral_distinguishability,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_legacy_zero_labels_give_zero(rng):
    E = rng.standard_normal((5, 128))
    out = embed_legacy(E, np.zeros(5, dtype=int))
    assert out.shape == (128,)
    assert np.all(out == 0.0)


def test_legacy_single_label_and_sum(rng):
    E1 = rng.standard_normal((1, 16))
    np.testing.assert_array_equal(embed_legacy(E1, [1]), E1[0])
    E = rng.standard_normal((3, 16))
    np.testing.assert_allclose(embed_legacy(E, [1, 1, 0]), E[0] + E[1])


def test_legacy_rejects_pad(rng):
    with pytest.raises(ConditioningError):
        embed_legacy(rng.standard_normal((2, 4)), [PAD, 1])


def test_nle_neutral_label_is_not_zero(rng):
    table = rng.standard_normal((1, 2, 128)) / np.sqrt(128)
    out = embed_nle(table, [1.0], [0])
    np.testing.assert_array_equal(out, table[0, 0])
    assert np.linalg.norm(out) > 0


def test_nle_zero_fold_gives_zero(rng):
    table = rng.standard_normal((3, 2, 8))
    for y in all_label_vectors(3):
        np.testing.assert_array_equal(embed_nle(table, np.zeros(3), y), 0)


def test_nle_two_label_hand_expansion(rng):
    table = rng.standard_normal((2, 2, 8))
    a, b = 0.3, -1.7
    np.testing.assert_allclose(embed_nle(table, [a, b], [1, 0]), a * table[0, 1] + b * table[1, 0])


def test_nle_padding_row(rng):
    table = rng.standard_normal((2, 2, 8))
    pad = rng.standard_normal(8)
    np.testing.assert_allclose(embed_nle(table, [1.0, 1.0], [PAD, 1], pad_row=pad), pad + table[1, 1])
    with pytest.raises(ConditioningError):
        embed_nle(table, [1.0, 1.0], [PAD, 1])


def test_neutral_distinguishability(rng):
    table = rng.standard_normal((4, 2, 128)) / np.sqrt(128)
    assert neutral_distinguishability(table, np.full(4, 0.25)) > 0
    forced = table.copy()
    forced[:, 1] = forced[:, 0]
    assert neutral_distinguishability(forced, np.full(4, 0.25)) == 0.0
    E = rng.standard_normal((3, 16))
    assert legacy_distinguishability(E) == pytest.approx(np.linalg.norm(E, axis=1).min())


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_nle_injective_over_all_label_vectors(n):
    torch.manual_seed(n)
    cond = NleConditioner(n, 128)
    ys = torch.as_tensor(all_label_vectors(n))
    emb = cond(ys).detach().double()
    gaps = torch.cdist(emb, emb) + torch.eye(len(ys), dtype=emb.dtype) * 1e9
    assert gaps.min().item() > 1e-6


def test_nle_gather_changes_only_one_channel():
    torch.manual_seed(0)
    cond = NleConditioner(3, 8)
    with torch.no_grad():
        cond.fold.weight.copy_(torch.tensor([[[0.5], [2.0], [-1.0]]]))
    y0 = torch.tensor([[0, 1, 0]])
    y1 = torch.tensor([[0, 0, 0]])
    diff = cond(y0) - cond(y1)
    expected = 2.0 * (cond.table[1, 1] - cond.table[1, 0])
    torch.testing.assert_close(diff[0], expected)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.data())
def test_nle_flip_moves_embedding_by_one_folded_row(n, data):
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    j = data.draw(st.integers(0, n - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31 - 1)))
    table, w, b = rng.standard_normal((n, 2, 5)), rng.standard_normal(n), rng.standard_normal()
    flipped = y.copy()
    flipped[j] = 1 - y[j]
    diff = embed_nle(table, w, flipped, b) - embed_nle(table, w, y, b)
    np.testing.assert_allclose(diff, w[j] * (table[j, flipped[j]] - table[j, y[j]]), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_nle_injective_for_any_init(n, seed):
    torch.manual_seed(seed)
    emb = NleConditioner(n, 128)(torch.as_tensor(all_label_vectors(n))).detach().double()
    gaps = torch.cdist(emb, emb) + torch.eye(2 ** n, dtype=emb.dtype) * 1e9
    assert gaps.min().item() > 1e-6


def test_torch_conditioners_match_numpy_reference():
    torch.manual_seed(1)
    nle = NleConditioner(3, 16, padding=True)
    with torch.no_grad():
        nle.fold.weight.copy_(torch.tensor([[[0.2], [-0.4], [1.3]]]))
        nle.fold.bias.fill_(0.1)
    table = nle.table.detach().numpy()
    w = nle.fold.weight.detach().numpy().reshape(-1)
    pad = nle.pad_row.detach().numpy()
    for y in itertools.product((0, 1, PAD), repeat=3):
        ref = embed_nle(table, w, y, fold_b=0.1, pad_row=pad)
        np.testing.assert_allclose(nle(torch.tensor([y]))[0].detach().numpy(), ref, rtol=1e-5, atol=1e-6)
    leg = LegacyConditioner(3, 16)
    E = leg.E.detach().numpy()
    for y in all_label_vectors(3):
        np.testing.assert_allclose(leg(torch.tensor(y)[None])[0].detach().numpy(), embed_legacy(E, y), atol=1e-6)


def test_torch_conditioner_errors():
    with pytest.raises(ConditioningError):
        LegacyConditioner(2)(torch.tensor([[PAD, 0]]))
    with pytest.raises(ConditioningError):
        NleConditioner(2)(torch.tensor([[PAD, 0]]))
    with pytest.raises(ConditioningError):
        NleConditioner(2)(torch.tensor([[0, 0, 1]]))
    with pytest.raises(ConditioningError):
        make_conditioner("legacy", 2, padding=True)
    with pytest.raises(ConditioningError):
        make_conditioner("film", 2)


def test_nle_initialization():
    torch.manual_seed(0)
    cond = NleConditioner(4, 128)
    torch.testing.assert_close(cond.fold.weight, torch.full((1, 4, 1), 0.25))
    assert cond.fold.bias.item() == 0.0
    assert abs(cond.table.std().item() - 128 ** -0.5) < 0.01
    assert not torch.allclose(cond.table[:, 0], cond.table[:, 1])
