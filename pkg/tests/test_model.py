import math

import numpy as np
import pytest

from autosizer import tensor as T
from autosizer.model import (
    ModelConfig,
    Transformer,
    count_parameters,
    label_smoothed_loss,
    parameter_shapes,
)
from autosizer.tensor import Tensor

from conftest import central_difference, random_batch, rel_error


def _set(model, path, value):
    model.params[path].data[...] = value


# ---------------------------------------------------------------- ffn


def test_ffn_zero_weights_give_zero(tiny_model):
    for name in ("W1", "b1", "b2"):
        _set(tiny_model, f"encoder.layer0.ffn.{name}", 0.0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 8)))
    assert not tiny_model.ffn(x, "encoder.layer0").data.any()


def test_ffn_hand_example():
    cfg = ModelConfig(num_layers=1, d_model=1, num_heads=1, d_ffn=1, vocab_size=5, dropout=0.0)
    m = Transformer(cfg)
    _set(m, "encoder.layer0.ffn.W1", [[1.0]])
    _set(m, "encoder.layer0.ffn.b1", [-1.0])
    _set(m, "encoder.layer0.ffn.W2", [[2.0]])
    _set(m, "encoder.layer0.ffn.b2", [0.0])
    assert m.ffn(Tensor([[[3.0]]]), "encoder.layer0").data.item() == 4.0


def test_ffn_is_position_wise(tiny_model):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 8))
    perm = rng.permutation(5)
    a = tiny_model.ffn(Tensor(x), "decoder.layer0").data
    b = tiny_model.ffn(Tensor(x[:, perm]), "decoder.layer0").data
    np.testing.assert_array_equal(a[:, perm], b)


# ---------------------------------------------------------------- attention


def reference_attention(xq, xkv, W_in, W_out, b_out, H, key_pad, causal):
    """Straight-line per-(batch, head, query) evaluation with explicit loops."""
    B, tq, D = xq.shape
    tk = xkv.shape[1]
    dk = D // H
    Wq, Wk, Wv = W_in[:D], W_in[D:2 * D], W_in[2 * D:]
    out = np.zeros((B, tq, D))
    for b in range(B):
        ctx = np.zeros((tq, D))
        for h in range(H):
            sl = slice(h * dk, (h + 1) * dk)
            for i in range(tq):
                q = Wq[sl] @ xq[b, i]
                scores = []
                allowed = []
                for j in range(tk):
                    ok = not key_pad[b, j] and not (causal and j > i)
                    allowed.append(ok)
                    scores.append(q @ (Wk[sl] @ xkv[b, j]) / math.sqrt(dk) if ok else -math.inf)
                m = max(s for s, ok in zip(scores, allowed) if ok)
                w = [math.exp(s - m) if ok else 0.0 for s, ok in zip(scores, allowed)]
                tot = sum(w)
                for j in range(tk):
                    ctx[i, sl] += (w[j] / tot) * (Wv[sl] @ xkv[b, j])
        out[b] = ctx @ W_out.T + b_out
    return out


def _mask(model, key_pad, tq, causal):
    from autosizer.model import _attn_mask

    return _attn_mask(key_pad, tq, causal)


def test_attention_single_position(tiny_model):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 8))
    path = "encoder.layer0.self_attn"
    out = tiny_model.attention(Tensor(x), Tensor(x), path, _mask(tiny_model, np.zeros((1, 1), bool), 1, False)).data
    W = tiny_model.params[f"{path}.in_proj"].data
    expected = (W[16:] @ x[0, 0]) @ tiny_model.params[f"{path}.out_proj"].data.T + tiny_model.params[f"{path}.out_bias"].data
    np.testing.assert_allclose(out[0, 0], expected, atol=1e-14)


@pytest.mark.parametrize("causal", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_attention_matches_reference(tiny_model, causal, seed):
    rng = np.random.default_rng(seed)
    path = "decoder.layer0.cross_attn"
    _set(tiny_model, f"{path}.out_bias", rng.normal(size=8))
    xq, xkv = rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 5 if not causal else 4, 8))
    key_pad = np.zeros((2, xkv.shape[1]), bool)
    key_pad[1, -2:] = True
    got = tiny_model.attention(Tensor(xq), Tensor(xkv), path, _mask(tiny_model, key_pad, 4, causal)).data
    p = tiny_model.params
    want = reference_attention(xq, xkv, p[f"{path}.in_proj"].data, p[f"{path}.out_proj"].data,
                               p[f"{path}.out_bias"].data, 2, key_pad, causal)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_ragged_layout_matches_per_head_reference():
    cfg = ModelConfig(num_layers=1, d_model=8, num_heads=2, d_ffn=16, vocab_size=11, dropout=0.0,
                      head_layouts={"decoder.layer0.self_attn": [[0, 4], [3, 2]]})
    m = Transformer(cfg, seed=1)
    path = "decoder.layer0.self_attn"
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 4, 8))
    mask = _mask(m, np.zeros((2, 4), bool), 4, True)
    got = m.attention(Tensor(x), Tensor(x), path, mask).data
    W = m.params[f"{path}.in_proj"].data
    Wq, Wk, Wv = W[:3], W[3:6], W[6:]
    heads, qo, vo = [], 0, 0
    for dk, dv in [[0, 4], [3, 2]]:
        q, k = x @ Wq[qo:qo + dk].T, x @ Wk[qo:qo + dk].T
        v = x @ Wv[vo:vo + dv].T
        qo, vo = qo + dk, vo + dv
        if dv == 0:
            continue
        s = q @ k.transpose(0, 2, 1) / 2.0 + mask[:, 0]
        s = np.exp(s - s.max(-1, keepdims=True))
        heads.append((s / s.sum(-1, keepdims=True)) @ v)
    want = np.concatenate(heads, -1) @ m.params[f"{path}.out_proj"].data.T + m.params[f"{path}.out_bias"].data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_causal_mask_hides_future(tiny_model):
    rng = np.random.default_rng(3)
    src, tgt = random_batch(rng, 11, 2, 5, 6, pad_tail=False)
    a = tiny_model(src, tgt).data
    tgt2 = tgt.copy()
    tgt2[:, 4:] = rng.integers(4, 11, (2, 2))
    b = tiny_model(src, tgt2).data
    np.testing.assert_array_equal(a[:, :4], b[:, :4])


# ---------------------------------------------------------------- full model


def test_zeroed_ffn_is_residual_bypass(tiny_model):
    """With the FFN's parameters zero, the FFN sub-layer adds exactly nothing."""
    for name in ("W1", "b1", "W2", "b2"):
        _set(tiny_model, f"encoder.layer0.ffn.{name}", 0.0)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 8)))
    h = tiny_model._ln(x, "encoder.layer0.ln_ffn")
    out = T.add(x, tiny_model.ffn(h, "encoder.layer0"))
    np.testing.assert_array_equal(out.data, x.data)


def test_zeroed_attention_is_residual_bypass(tiny_model):
    for name in ("in_proj", "out_proj", "out_bias"):
        _set(tiny_model, f"decoder.layer0.self_attn.{name}", 0.0)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 8)))
    mask = _mask(tiny_model, np.zeros((1, 3), bool), 3, True)
    assert not tiny_model.attention(x, x, "decoder.layer0.self_attn", mask).data.any()


def test_padding_invariance(tiny_model):
    rng = np.random.default_rng(4)
    src, tgt = random_batch(rng, 11, 5, 7, 6)
    full = tiny_model(src, tgt).data
    for b in range(5):
        ns, nt = int((src[b] != 0).sum()), int((tgt[b] != 0).sum())
        alone = tiny_model(src[b:b + 1, :ns], tgt[b:b + 1, :nt]).data
        np.testing.assert_allclose(full[b, :nt], alone[0], atol=1e-10)


def test_zero_layers_is_embedding_norm_projection():
    cfg = ModelConfig(num_layers=0, d_model=8, num_heads=2, d_ffn=16, vocab_size=11, dropout=0.0)
    m = Transformer(cfg, seed=0)
    assert set(m.params) == {"src_embed", "tgt_embed", "encoder.final_ln.gain", "encoder.final_ln.bias",
                             "decoder.final_ln.gain", "decoder.final_ln.bias", "output.W", "output.b"}
    tgt = np.array([[1, 5, 6]])
    x = m.params["tgt_embed"].data[tgt] * math.sqrt(8) + m._pe[:3]
    xh = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5)
    want = xh @ m.params["output.W"].data.T
    np.testing.assert_allclose(m(np.array([[4, 2]]), tgt).data, want, atol=1e-12)


def test_out_of_range_token_rejected(tiny_model):
    with pytest.raises(IndexError):
        tiny_model(np.array([[4, 11]]), np.array([[1, 4]]))


def test_registry_unique_and_counted(tiny_config, tiny_model):
    assert len(set(map(id, tiny_model.parameters()))) == len(tiny_model.params)
    assert tiny_model.num_parameters() == count_parameters(tiny_config)
    cfg = ModelConfig(num_layers=3, d_model=12, num_heads=3, d_ffn=20, vocab_size=17,
                      ffn_widths={"decoder.layer1": 7}, head_layouts={"encoder.layer2.self_attn": [[4, 1], [0, 4], [2, 0]]})
    assert Transformer(cfg).num_parameters() == count_parameters(cfg)


def test_shapes_follow_contract(tiny_config):
    s = parameter_shapes(tiny_config)
    assert s["encoder.layer0.ffn.W1"] == (16, 8) and s["encoder.layer0.ffn.W2"] == (8, 16)
    assert s["encoder.layer0.ffn.b1"] == (16,) and s["encoder.layer0.ffn.b2"] == (8,)
    assert s["decoder.layer0.cross_attn.in_proj"] == (24, 8)
    assert s["decoder.layer0.cross_attn.out_proj"] == (8, 8)


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, num_heads=3)


def test_full_model_gradient_check(tiny_model):
    rng = np.random.default_rng(5)
    src, tgt = random_batch(rng, 11, 2, 4, 4)
    out = np.roll(tgt, -1, axis=1)
    out[:, -1] = 2
    out[tgt == 0] = 0

    def loss_value():
        with T.no_grad():
            return label_smoothed_loss(tiny_model(src, tgt), out, 0.1).item()

    tiny_model.zero_grad()
    T.backward(label_smoothed_loss(tiny_model(src, tgt), out, 0.1))
    worst = 0.0
    for path, p in tiny_model.params.items():
        num = central_difference(loss_value, p.data)
        err = rel_error(p.grad if p.grad is not None else np.zeros_like(num), num)
        worst = max(worst, err)
        assert err < 1e-4, path
    assert worst < 1e-4


# ---------------------------------------------------------------- loss


def test_loss_without_smoothing_is_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 3, 5))
    y = np.array([[1, 2, 0], [4, 0, 0]])
    lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    want = -(lp[0, 0, 1] + lp[0, 1, 2] + lp[1, 0, 4]) / 3
    assert label_smoothed_loss(Tensor(logits), y, 0.0, pad_id=0).item() == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
def test_uniform_logits_loss_is_log_vocab(eps):
    y = np.array([[1, 2, 3]])
    assert label_smoothed_loss(Tensor(np.zeros((1, 3, 4))), y, eps, pad_id=0).item() == pytest.approx(math.log(4), abs=1e-14)


def test_loss_decreases_with_target_logit():
    logits = np.random.default_rng(1).normal(size=(1, 1, 6))
    y = np.array([[3]])
    prev = math.inf
    for bump in np.linspace(0, 5, 11):
        l = logits.copy()
        l[0, 0, 3] += bump
        cur = label_smoothed_loss(Tensor(l), y, 0.1, pad_id=0).item()
        assert cur < prev
        prev = cur


def test_all_pad_rejected():
    with pytest.raises(ValueError):
        label_smoothed_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2), int), 0.1)
