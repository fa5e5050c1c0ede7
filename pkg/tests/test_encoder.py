import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from emo_mllm.encoder import (FrameFeatures, LocalAttention, VisualEncoder, encode_frame, encode_tokens,
                              masked_local_attention, patch_embed, patchify)
from emo_mllm.errors import ContractViolation, NumericError, ShapeError
from emo_mllm.geometry import AttentionMask, PatchGrid
from emo_mllm.gradcheck import check_entries

from oracles import dense_masked_attention


def make_encoder(grid, channels=3, d=16, layers=1, heads=2, seed=0):
    return VisualEncoder(grid, channels, d, layers, heads, torch.Generator().manual_seed(seed)).double()


def heads_oracle(x, allowed, attn):
    """Per-head dense softmax on numpy, then the output projection."""
    xs = x.detach().numpy()
    q = attn.q_proj(x).detach().numpy()
    k = attn.k_proj(x).detach().numpy()
    v = attn.v_proj(x).detach().numpy()
    dh = q.shape[-1] // attn.n_heads
    outs = [dense_masked_attention(q[:, s], k[:, s], v[:, s], allowed)
            for s in (slice(h * dh, (h + 1) * dh) for h in range(attn.n_heads))]
    W, b = attn.o_proj.weight.detach().numpy(), attn.o_proj.bias.detach().numpy()
    assert xs.shape[0] == allowed.shape[0]
    return np.concatenate(outs, axis=-1) @ W.T + b


def test_zero_image_gives_positions():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid)
    torch.nn.init.zeros_(enc.patch_proj.bias)
    out = patch_embed(torch.zeros(8, 8, 3, dtype=torch.float64), grid, enc)
    assert torch.equal(out, enc.pos)


def test_identity_projection_hand_oracle():
    grid = PatchGrid(4, 4, 2)
    enc = make_encoder(grid, channels=1, d=4, layers=0)
    with torch.no_grad():
        enc.patch_proj.weight.copy_(torch.eye(4))
        enc.patch_proj.bias.zero_()
        enc.pos.zero_()
    image = torch.arange(16, dtype=torch.float64).reshape(4, 4, 1)
    expected = torch.tensor([[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]], dtype=torch.float64)
    assert torch.equal(patch_embed(image, grid, enc), expected)


def test_swapping_patches_swaps_rows():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid)
    img = torch.rand(8, 8, 3, dtype=torch.float64)
    swapped = img.clone()
    swapped[:4, :4], swapped[4:, 4:] = img[4:, 4:], img[:4, :4]
    a = enc.patch_proj(patchify(img, grid))
    b = enc.patch_proj(patchify(swapped, grid))
    assert torch.equal(a[[3, 1, 2, 0]], b)


def test_zero_layers_equals_patch_embed():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid, layers=0)
    img = torch.rand(8, 8, 3, dtype=torch.float64)
    feats = encode_frame(img, 1.0, grid, enc)
    assert torch.equal(feats.tokens, patch_embed(img, grid, enc))
    assert feats.timestamp_s == 1.0


@pytest.mark.parametrize("size,patch", [(8, 4), (16, 4), (12, 6)])
def test_output_shape(size, patch):
    grid = PatchGrid(size, size, patch)
    out = encode_frame(torch.rand(size, size, 3, dtype=torch.float64), 0.0, grid, make_encoder(grid))
    assert out.tokens.shape == (grid.n_patches, 16)


def test_batched_matches_single():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid, layers=2)
    imgs = torch.rand(3, 8, 8, 3, dtype=torch.float64)
    batch = encode_tokens(imgs, grid, enc)
    for f in range(3):
        torch.testing.assert_close(batch[f], encode_frame(imgs[f], 0.0, grid, enc).tokens, rtol=0, atol=1e-12)


def test_shape_errors():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid)
    with pytest.raises(ShapeError):
        encode_frame(torch.rand(8, 12, 3, dtype=torch.float64), 0.0, grid, enc)
    with pytest.raises(ShapeError):
        encode_frame(torch.rand(8, 8, 1, dtype=torch.float64), 0.0, grid, enc)


def test_non_finite_reports_layer():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid)
    img = torch.rand(8, 8, 3, dtype=torch.float64)
    img[0, 0, 0] = float("nan")
    with pytest.raises(NumericError) as info:
        encode_frame(img, 0.0, grid, enc)
    assert info.value.layer == 0


def test_encoder_gradients_match_finite_differences():
    grid = PatchGrid(8, 8, 4)
    enc = make_encoder(grid, layers=2)
    img = torch.rand(8, 8, 3, dtype=torch.float64)
    probe = torch.randn(grid.n_patches, 16, dtype=torch.float64)
    fn = lambda: (encode_frame(img, 0.0, grid, enc).tokens * probe).sum()  # noqa: E731
    rng = np.random.default_rng(0)
    for name, p in enc.named_parameters():
        idx = rng.choice(p.numel(), size=min(4, p.numel()), replace=False)
        res = check_entries(fn, name, p, idx, h=1e-5, tol=1e-4, floor=1e-6)
        assert res.passed, (name, res.failures)


# -- masked local attention --------------------------------------------------


def make_local(d=16, heads=2, seed=0):
    return LocalAttention(d, heads, torch.Generator().manual_seed(seed)).double()


def test_all_true_mask_is_bitwise_unmasked():
    la = make_local()
    x = torch.randn(9, 16, dtype=torch.float64)
    out = masked_local_attention(x, np.ones((9, 9), dtype=bool), la)
    assert torch.equal(out, la.attn(x))


def test_identity_mask_returns_own_value():
    la = make_local()
    x = torch.randn(5, 16, dtype=torch.float64)
    out = masked_local_attention(FrameFeatures(x, 0.0), AttentionMask(np.eye(5, dtype=bool)), la)
    torch.testing.assert_close(out, la.attn.o_proj(la.attn.v_proj(x)), rtol=0, atol=1e-12)


def test_three_patch_dense_oracle():
    la = make_local()
    x = torch.randn(3, 16, dtype=torch.float64)
    allowed = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=bool)
    out = masked_local_attention(x, allowed, la).detach().numpy()
    np.testing.assert_allclose(out, heads_oracle(x, allowed, la.attn), rtol=0, atol=1e-10)


def random_allowed(rng, n):
    m = rng.random((n, n)) < 0.3
    np.fill_diagonal(m, True)
    return m


def test_weights_normalized_and_disallowed_exactly_zero():
    rng = np.random.default_rng(5)
    la = make_local()
    for _ in range(50):
        n = int(rng.integers(2, 20))
        allowed = random_allowed(rng, n)
        x = torch.from_numpy(rng.normal(size=(n, 16)))
        _, w = masked_local_attention(x, allowed, la, return_weights=True)
        w = w.detach()
        assert torch.all(w[:, ~torch.from_numpy(allowed)] == 0)
        torch.testing.assert_close(w.sum(-1), torch.ones_like(w.sum(-1)), rtol=0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_masked_out_tokens_do_not_influence_row(seed):
    rng = np.random.default_rng(seed)
    la = make_local()
    n = 8
    allowed = random_allowed(rng, n)
    x = torch.from_numpy(rng.normal(size=(n, 16)))
    i = int(rng.integers(n))
    blocked = np.flatnonzero(~allowed[i])
    if blocked.size == 0:
        return
    y = x.clone()
    y[blocked] += torch.from_numpy(rng.normal(size=(blocked.size, 16)))
    a = masked_local_attention(x, allowed, la)[i]
    b = masked_local_attention(y, allowed, la)[i]
    assert torch.equal(a, b)


def test_all_false_row_is_contract_violation():
    la = make_local()
    allowed = np.eye(4, dtype=bool)
    allowed[2, 2] = False
    with pytest.raises(ContractViolation):
        masked_local_attention(torch.randn(4, 16, dtype=torch.float64), allowed, la)


def test_mask_shape_mismatch():
    with pytest.raises(ShapeError):
        masked_local_attention(torch.randn(4, 16, dtype=torch.float64), np.ones((5, 5), dtype=bool), make_local())


def test_local_attention_deterministic():
    x = torch.randn(6, 16, dtype=torch.float64)
    allowed = random_allowed(np.random.default_rng(1), 6)
    assert torch.equal(masked_local_attention(x, allowed, make_local()), masked_local_attention(x, allowed, make_local()))
