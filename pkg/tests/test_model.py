import numpy as np
import pytest

from glot import numcore as nc, sparse_attention as sa, training
from glot.dataio import BOS, EOS, DataError
from glot.model import (GlotConfig, GlotModel, load_checkpoint,
                        positional_encoding, save_checkpoint)
from glot.numcore import ConfigError, Tensor


def tiny_model(**overrides):
    defaults = dict(max_frames=8, feat_dim=5)
    defaults.update(overrides)
    return GlotModel(GlotConfig.tiny(**defaults), seed=0)


def test_config_presets():
    s1 = GlotConfig.set1()
    assert (s1.d_model, s1.n_heads, s1.n_encoders, s1.n_decoders,
            s1.ff_size, s1.dropout) == (512, 8, 1, 1, 2048, 0.1)
    s2 = GlotConfig.set2()
    assert (s2.d_model, s2.n_heads, s2.n_encoders, s2.n_decoders,
            s2.ff_size, s2.dropout) == (256, 8, 1, 1, 256, 0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        GlotConfig(d_model=7).validate()
    with pytest.raises(ConfigError):
        GlotConfig(d_model=8, n_heads=3).validate()
    with pytest.raises(ConfigError):
        GlotConfig(conv_kernel=4).validate()


def test_positional_encoding_values():
    pe = positional_encoding(4, 6)
    assert np.allclose(pe[0], [0, 1, 0, 1, 0, 1])
    assert pe[1][0] == pytest.approx(np.sin(1.0), abs=1e-12)
    assert np.array_equal(pe, positional_encoding(4, 6))
    with pytest.raises(ConfigError):
        positional_encoding(4, 5)


def test_embed_frames_zero_input_gives_pe():
    m = tiny_model()
    out = m.embed_frames(np.zeros((4, 5)))
    assert np.allclose(out.data, positional_encoding(4, 8), atol=1e-15)


def test_embed_frames_shape():
    m = tiny_model(feat_dim=12)
    out = m.embed_frames(np.random.default_rng(0).normal(size=(5, 12)))
    assert out.shape == (5, 8)


def test_embed_frames_width_mismatch():
    m = tiny_model()
    with pytest.raises(nc.ShapeError):
        m.embed_frames(np.zeros((4, 9)))


def test_embed_frames_gradient():
    m = tiny_model()
    frames = np.random.default_rng(1).normal(size=(4, 5))
    w = Tensor(np.random.default_rng(2).normal(size=(4, 8)))
    orig = m.params["frame_embed"]

    def f(fe):
        m.params["frame_embed"] = fe
        out = m.embed_frames(frames)
        return nc.tsum(nc.mul(out, w))

    try:
        rep = nc.grad_check(f, Tensor(orig.data.copy()))
    finally:
        m.params["frame_embed"] = orig
    assert rep.passed


def test_gate_value_examples():
    m = tiny_model()
    lssa_out = Tensor(np.random.default_rng(3).normal(size=(5, 4)))
    m.params["enc0.gate_w"].data[:] = 0.0
    m.params["enc0.gate_b"].data = np.asarray(0.0)
    g = m.gate_value(lssa_out, "enc0.")
    assert np.allclose(g.data, 0.5)
    m.params["enc0.gate_b"].data = np.asarray(50.0)
    g = m.gate_value(lssa_out, "enc0.")
    assert np.all(g.data > 1 - 1e-9)
    # sigmoid(ln 3) = 0.75 through the first coordinate
    m.params["enc0.gate_b"].data = np.asarray(0.0)
    m.params["enc0.gate_w"].data[:] = 0.0
    m.params["enc0.gate_w"].data[0, 0] = 1.0
    row = np.zeros((1, 4))
    row[0, 0] = np.log(3.0)
    g = m.gate_value(Tensor(row), "enc0.")
    assert g.data[0, 0] == pytest.approx(0.75, abs=1e-12)


def test_gating_combine_limits_and_midpoint():
    m = tiny_model()
    rng = np.random.default_rng(4)
    lssa_out = Tensor(rng.normal(size=(3, 4)))
    gap = Tensor(rng.normal(size=4))
    ones = Tensor(np.ones((3, 1)))
    zeros = Tensor(np.zeros((3, 1)))
    assert np.array_equal(m.gating_combine(ones, lssa_out, gap).data,
                          lssa_out.data)
    out0 = m.gating_combine(zeros, lssa_out, gap).data
    assert np.array_equal(out0, np.tile(gap.data, (3, 1)))
    half = m.gating_combine(Tensor(np.full((3, 1), 0.5)),
                            Tensor(np.array([[2.0, 4.0]] * 3)),
                            Tensor(np.array([0.0, 2.0])))
    assert np.allclose(half.data, [[1.0, 3.0]] * 3)


def test_gating_convex_containment():
    m = tiny_model()
    rng = np.random.default_rng(5)
    for _ in range(50):
        lssa_out = rng.normal(size=(4, 4))
        gap = rng.normal(size=4)
        g = rng.uniform(0.01, 0.99, size=(4, 1))
        out = m.gating_combine(Tensor(g), Tensor(lssa_out), Tensor(gap)).data
        lo = np.minimum(lssa_out, gap)
        hi = np.maximum(lssa_out, gap)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_encoder_forward_shape_preserving():
    m = tiny_model()
    rng = np.random.default_rng(6)
    for F in (1, 2, 5, 8):
        out = m.encode(rng.normal(size=(F, 5)))
        assert out.shape == (F, 8)


def test_dense_encoder_shape_preserving():
    m = tiny_model(encoder_kind="dense_baseline")
    rng = np.random.default_rng(7)
    for F in (1, 3, 8):
        out = m.encode(rng.normal(size=(F, 5)))
        assert out.shape == (F, 8)


def test_encoder_reduced_form_oracle():
    # conv = channel identity, zero Q/K/V, neutral gate: the block collapses
    # to layer_norm(x + concat(x1, 0.5 * masked-mean(x2)))
    m = tiny_model(n_lssa_layers=1)
    d_b = 4
    m.params["enc0.conv_w"].data[:] = 0.0
    m.params["enc0.conv_w"].data[:, :, 1] = np.eye(d_b)
    m.params["enc0.conv_b"].data[:] = 0.0
    m.params["enc0.lssa0.wq"].data[:] = 0.0
    m.params["enc0.lssa0.wk"].data[:] = 0.0
    m.params["enc0.wv"].data[:] = 0.0
    m.params["enc0.gate_w"].data[:] = 0.0
    m.params["enc0.gate_b"].data = np.asarray(0.0)

    rng = np.random.default_rng(8)
    F = 6
    x = rng.normal(size=(F, 8))
    out = m.encoder_block_glot(Tensor(x), 0, sa.build_mask(F)).data

    x1, x2 = x[:, :d_b], x[:, d_b:]
    fused = np.zeros_like(x2)
    for p in range(1, F + 1):
        members = np.array(sa.log_index_set(p).members) - 1
        fused[p - 1] = 0.5 * x2[members].mean(axis=0)
    y = x + np.concatenate([x1, fused], axis=1)
    mu = y.mean(axis=1, keepdims=True)
    var = y.var(axis=1, keepdims=True)
    expected = (y - mu) / np.sqrt(var + 1e-5)
    assert np.allclose(out, expected, atol=1e-10)


def test_dense_uniform_attention_oracle():
    # single head, identity V/O, zero Q/K: attention output is the
    # column mean broadcast to every row
    m = tiny_model(encoder_kind="dense_baseline", n_heads=1)
    m.params["enc0.attn.wq"].data[:] = 0.0
    m.params["enc0.attn.wk"].data[:] = 0.0
    m.params["enc0.attn.wv"].data = np.eye(8)
    m.params["enc0.attn.wo"].data = np.eye(8)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 8))
    out = m._mha("enc0.attn.", Tensor(x), Tensor(x), sa.full_mask(5)).data
    assert np.allclose(out, np.tile(x.mean(axis=0), (5, 1)), atol=1e-12)


def test_attention_rows_sum_to_one():
    m = tiny_model(encoder_kind="dense_baseline")
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(size=(6, 8)))
    q = nc.matmul(x, m.params["enc0.attn.wq"])
    k = nc.matmul(x, m.params["enc0.attn.wk"])
    scores = nc.matmul(q, nc.transpose(k))
    alpha = nc.masked_softmax_rows(scores, sa.full_mask(6))
    assert np.allclose(alpha.data.sum(axis=1), 1.0, atol=1e-9)


def test_decoder_shapes():
    m = tiny_model()
    mem = m.encode(np.random.default_rng(11).normal(size=(4, 5)))
    logits = m.decoder_forward(mem, [BOS, 5, 6], "gloss")
    assert logits.shape == (3, 7)
    logits = m.decoder_forward(mem, [BOS, 5, 6, 7], "text")
    assert logits.shape == (4, 11)


def test_decoder_rejects_bad_token():
    m = tiny_model()
    mem = m.encode(np.zeros((2, 5)))
    with pytest.raises(DataError):
        m.decoder_forward(mem, [BOS, 99], "gloss")


def test_decoder_causality():
    m = tiny_model()
    rng = np.random.default_rng(12)
    mem = m.encode(rng.normal(size=(4, 5)))
    base_ids = [BOS, 5, 6, 5, 6]
    base = m.decoder_forward(mem, base_ids, "gloss").data
    for _ in range(50):
        t0 = int(rng.integers(0, 3))
        mutated = list(base_ids)
        pos = int(rng.integers(t0 + 1, len(base_ids)))
        mutated[pos] = int(rng.integers(5, 7))
        out = m.decoder_forward(mem, mutated, "gloss").data
        assert np.array_equal(out[:pos], base[:pos])


def test_decoder_gradients():
    m = tiny_model()
    rng = np.random.default_rng(13)
    frames = rng.normal(size=(3, 5))
    for name in ("dec_gloss0.self.wq", "dec_text0.cross.wv", "embed_gloss",
                 "out_text.w"):
        orig = m.params[name]

        def f(p):
            m.params[name] = p
            return training.sample_loss(m, frames, [5, 6], [5, 7, 9])

        try:
            rep = nc.grad_check(f, Tensor(orig.data.copy()), tol=1e-3)
        finally:
            m.params[name] = orig
        assert rep.passed, name


def test_s2g2t_shapes_and_finite_loss():
    m = tiny_model()
    rng = np.random.default_rng(14)
    frames = rng.normal(size=(5, 5))
    gl, tl = m.s2g2t_forward(frames, [5, 6, 5], [5, 7, 9, 6])
    assert gl.shape == (4, 7) and tl.shape == (5, 11)
    loss = training.sample_loss(m, frames, [5, 6, 5], [5, 7, 9, 6]).item()
    assert np.isfinite(loss)
    assert loss < np.log(7) + np.log(11) + 2.0


def test_s2g2t_requires_sequences():
    m = tiny_model()
    with pytest.raises(nc.ContractError):
        m.s2g2t_forward(np.zeros((2, 5)), None, [5])


def test_loss_decreases_on_two_samples():
    m = tiny_model()
    rng = np.random.default_rng(15)
    data = [(rng.normal(size=(4, 5)), [5, 6], [5, 7, 9]),
            (rng.normal(size=(6, 5)), [6, 5, 6], [8, 6, 10])]
    opt = training.Adam(m.params)
    losses = []
    m.train()
    for _ in range(50):
        with nc.Tape() as tape:
            loss = nc.scale(nc.add(
                training.sample_loss(m, *data[0]),
                training.sample_loss(m, *data[1])), 0.5)
        losses.append(loss.item())
        opt.zero_grad()
        tape.backward(loss)
        opt.step(lr=1e-2)
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_greedy_decode_deterministic_and_bounded():
    m = tiny_model()
    frames = np.random.default_rng(16).normal(size=(4, 5))
    r1 = m.greedy_decode(frames, max_len=6)
    r2 = m.greedy_decode(frames, max_len=6)
    assert r1 == r2
    assert len(r1.gloss_ids) <= 6 and len(r1.text_ids) <= 6


def test_greedy_decode_zero_budget():
    m = tiny_model()
    res = m.greedy_decode(np.zeros((2, 5)), max_len=0)
    assert res.gloss_ids == [] and res.text_ids == []
    assert res.gloss_truncated and res.text_truncated


def test_encoder_kinds_share_pipeline():
    rng = np.random.default_rng(17)
    frames = rng.normal(size=(5, 5))
    for kind in ("glot", "dense_baseline"):
        m = tiny_model(encoder_kind=kind)
        loss = training.sample_loss(m, frames, [5, 6], [5, 7]).item()
        assert np.isfinite(loss)
        res = m.greedy_decode(frames, max_len=4)
        assert len(res.text_ids) <= 4


def test_instrumented_pair_counts():
    rng = np.random.default_rng(18)
    frames = rng.normal(size=(6, 5))
    counter = sa.PairCounter()
    m = tiny_model(n_lssa_layers=1)
    m.encode(frames, counter=counter)
    assert counter.total("logsparse") == sa.count_attention_pairs(6, "logsparse")
    counter = sa.PairCounter()
    m = tiny_model(encoder_kind="dense_baseline")
    m.encode(frames, counter=counter)
    assert counter.total("dense") == 36


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    m2 = load_checkpoint(path)
    assert list(m.params) == list(m2.params)
    for name in m.params:
        assert np.array_equal(m.params[name].data, m2.params[name].data), name
    assert m2.config == m.config


def test_checkpoint_rejects_corruption(tmp_path):
    from glot.model import CheckpointError
    m = tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    blob = bytearray(path.read_bytes())
    blob[0] = 0
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_learned_positional_encoding_option():
    m = tiny_model(pe_kind="learned")
    out = m.embed_frames(np.zeros((3, 5)))
    assert np.array_equal(out.data, m.params["pe_encoder"].data[:3])
