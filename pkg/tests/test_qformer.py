import numpy as np
import pytest
import torch

from emo_mllm.errors import DomainError, InputError, ShapeError
from emo_mllm.qformer import GlobalLocalFusion, QFormer, fuse_global_local, qformer_forward
from emo_mllm.tokenizer import default_tokenizer, format_timestamp
from emo_mllm.tokens import Provenance, TokenSeq

VOCAB = 512


def make_qformer(n_q=32, blocks=2, d=32, seed=0):
    return QFormer(d, n_q, blocks, 4, vocab_size=VOCAB, generator=torch.Generator().manual_seed(seed)).double()


@pytest.mark.parametrize("t,text", [(0.0, "This frame is sampled at 0.0s."), (2.5, "This frame is sampled at 2.5s.")])
def test_timestamp_text(t, text):
    cond = format_timestamp(t)
    assert cond.text == text
    assert default_tokenizer(VOCAB).decode(cond.token_ids) == text
    assert default_tokenizer().unk_id not in cond.token_ids


def test_negative_timestamp_rejected():
    with pytest.raises(DomainError):
        format_timestamp(-1.0)


@pytest.mark.parametrize("n_kv", [4, 16, 64])
def test_output_always_n_queries(n_kv):
    qf = make_qformer()
    out = qformer_forward(None, torch.randn(n_kv, 32, dtype=torch.float64), format_timestamp(1.0), qf)
    assert out.tokens.shape == (32, 32)
    assert out.provenance is Provenance.FRAME_GLOBAL


def test_zero_blocks_returns_queries():
    qf = make_qformer(blocks=0)
    out = qformer_forward(None, torch.randn(7, 32, dtype=torch.float64), format_timestamp(0.0), qf)
    assert torch.equal(out.tokens, qf.queries)


def test_explicit_query_bank():
    qf = make_qformer(blocks=0)
    q = torch.randn(5, 32, dtype=torch.float64)
    assert torch.equal(qformer_forward(q, torch.randn(3, 32, dtype=torch.float64), None, qf).tokens, q)


def test_condition_changes_output():
    qf = make_qformer()
    kv = torch.randn(16, 32, dtype=torch.float64)
    a = qformer_forward(None, kv, format_timestamp(0.0), qf).tokens
    b = qformer_forward(None, kv, format_timestamp(5.0), qf).tokens
    assert (a - b).abs().max() > 0


def test_queries_break_symmetry():
    out = qformer_forward(None, torch.randn(16, 32, dtype=torch.float64), None, make_qformer()).tokens
    assert torch.unique(out, dim=0).shape[0] == out.shape[0]


def test_batched_streams_match_separate_calls():
    qf = make_qformer()
    kv = torch.randn(2, 16, 32, dtype=torch.float64)
    cond = format_timestamp(3.0)
    both = qf(kv, cond)
    for i in range(2):
        torch.testing.assert_close(both[i], qf(kv[i], cond), rtol=0, atol=1e-12)


def test_bad_inputs():
    qf = make_qformer()
    with pytest.raises(InputError):
        qf(torch.zeros(0, 32, dtype=torch.float64))
    with pytest.raises(ShapeError):
        qformer_forward(None, torch.zeros(2, 3, 32, dtype=torch.float64), None, qf)
    with pytest.raises(InputError):
        QFormer(32, 4, 1, 4).embed_condition([1, 2])


# -- global/local fusion -----------------------------------------------------


def streams(n=32, d=32):
    g = TokenSeq(torch.randn(n, d, dtype=torch.float64), Provenance.FRAME_GLOBAL)
    l = TokenSeq(torch.randn(n, d, dtype=torch.float64), Provenance.FRAME_LOCAL)
    return g, l


def test_fusion_identity_construction():
    fusion = GlobalLocalFusion(32).double()
    with torch.no_grad():
        fusion.proj.weight.copy_(torch.cat([torch.eye(32), torch.randn(32, 32)], dim=1))
        fusion.proj.bias.zero_()
    g, _ = streams()
    zero = TokenSeq(torch.zeros_like(g.tokens), Provenance.FRAME_LOCAL)
    out = fuse_global_local(g, zero, fusion)
    torch.testing.assert_close(out.tokens, torch.nn.functional.layer_norm(g.tokens, (32,)), rtol=0, atol=1e-12)
    assert out.provenance is Provenance.FRAME_FUSED


def test_fusion_matches_explicit_oracle():
    fusion = GlobalLocalFusion(32, torch.Generator().manual_seed(3)).double()
    with torch.no_grad():
        fusion.norm.weight.uniform_(0.5, 1.5)
        fusion.norm.bias.uniform_(-0.5, 0.5)
    g, l = streams()
    out = fuse_global_local(g, l, fusion).tokens.detach().numpy()
    W, b = fusion.proj.weight.detach().numpy(), fusion.proj.bias.detach().numpy()
    h = np.concatenate([g.tokens.numpy(), l.tokens.numpy()], axis=1) @ W.T + b
    mu, var = h.mean(1, keepdims=True), h.var(1, keepdims=True)
    want = (h - mu) / np.sqrt(var + fusion.norm.eps) * fusion.norm.weight.detach().numpy() + fusion.norm.bias.detach().numpy()
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-10)
    assert out.shape == (32, 32)


def test_fusion_rejects_wrong_streams():
    fusion = GlobalLocalFusion(32).double()
    g, l = streams()
    with pytest.raises(InputError):
        fuse_global_local(l, g, fusion)
    with pytest.raises(ShapeError):
        fuse_global_local(g, TokenSeq(l.tokens[:5], Provenance.FRAME_LOCAL), fusion)


def test_tokenizer_round_trip_and_unknowns():
    tok = default_tokenizer(VOCAB)
    assert len(tok) == VOCAB
    text = "Transcript: I can't believe it!\nWhat emotions does the person show at 12.5s?"
    assert tok.decode(tok.encode(text)) == text
    assert tok.encode("zzyzx") == [tok.unk_id]
    assert [tok.vocab[i] for i in tok.encode("2.5")] == ["2", ".", "5"]
