import math

import numpy as np
import pytest

from camfuse import functional as F
from camfuse.ccfe import (
    FF, LPR, canonical_f1, consistency_loss, fcc, ff_fuse, lpr_attention, lpr_enhance, mse_alignment_loss, pooling_matrix,
)
from camfuse.harness.optim import Adam
from camfuse.tensor import Tensor, backward, gradcheck

import oracles


def t64(x, grad=False):
    return Tensor(x, requires_grad=grad, dtype=np.float64)


def lpr(rng, c=4, t=3):
    return LPR(c, t, rng=rng, dtype=np.float64)


def test_ff_commutes_bit_exactly(rng):
    ff = FF(4, rng=rng, dtype=np.float64)
    a, b = t64(rng.standard_normal((2, 4, 3, 3, 3))), t64(rng.standard_normal((2, 4, 3, 3, 3)))
    assert np.array_equal(ff_fuse(a, b, ff).data, ff_fuse(b, a, ff).data)


def test_ff_matches_composition(rng):
    ff = FF(2, rng=rng, dtype=np.float64)
    a, b = rng.standard_normal((2, 2, 3, 3, 3)), rng.standard_normal((2, 2, 3, 3, 3))
    conv = oracles.conv3d(a + b, ff.conv.weight.data, ff.conv.bias.data, pad=1)
    mu = conv.mean(axis=(0, 2, 3, 4), keepdims=True)
    var = conv.var(axis=(0, 2, 3, 4), keepdims=True)
    ref = np.maximum((conv - mu) / np.sqrt(var + 1e-5), 0)
    np.testing.assert_allclose(ff_fuse(t64(a), t64(b), ff).data, ref, atol=1e-10)
    zero = np.zeros_like(a)
    conv_a = oracles.conv3d(a, ff.conv.weight.data, ff.conv.bias.data, pad=1)
    np.testing.assert_allclose(ff.conv(t64(a + zero)).data, conv_a, atol=1e-10)


def test_ff_shape_mismatch(rng):
    ff = FF(2, rng=rng, dtype=np.float64)
    with pytest.raises(ValueError):
        ff_fuse(t64(np.zeros((1, 2, 2, 2, 2))), t64(np.zeros((1, 2, 3, 3, 3))), ff)


def test_attention_rows_sum_to_one(rng):
    bank = lpr(rng, 4, 5)
    f = t64(rng.standard_normal((2, 4, 3, 3, 3)))
    out, attn = lpr_attention(f, bank, bank.Wq)
    assert attn.shape == (54, 5)
    np.testing.assert_allclose(attn.data.sum(axis=1), 1.0, atol=1e-6)
    assert lpr_enhance(f, bank).shape == f.shape


def test_single_prototype_broadcasts_value(rng):
    bank = lpr(rng, 4, 1)
    f = t64(rng.standard_normal((1, 4, 2, 2, 2)))
    out = lpr_enhance(f, bank, residual=False).data
    v = (bank.R.data @ bank.Wv.data)[0]
    np.testing.assert_allclose(out, np.broadcast_to(v[None, :, None, None, None], out.shape), atol=1e-12)


def test_two_token_two_prototype_scalar_oracle(rng):
    c = 3
    bank = lpr(rng, c, 2)
    wq = rng.standard_normal((c, c))
    f = rng.standard_normal((1, c, 2, 1, 1))
    out = lpr_enhance(t64(f), bank, t64(wq)).data
    R, Wk, Wv = bank.R.data, bank.Wk.data, bank.Wv.data
    for tok in range(2):
        x = [f[0, ch, tok, 0, 0] for ch in range(c)]
        q = [sum(x[i] * wq[i, j] for i in range(c)) for j in range(c)]
        scores = []
        for r in range(2):
            k = [sum(R[r, i] * Wk[i, j] for i in range(c)) for j in range(c)]
            scores.append(sum(a * b for a, b in zip(q, k)) / math.sqrt(c))
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        a = [v / sum(e) for v in e]
        for ch in range(c):
            v = sum(a[r] * sum(R[r, i] * Wv[i, ch] for i in range(c)) for r in range(2))
            assert abs(out[0, ch, tok, 0, 0] - (x[ch] + v)) < 1e-12


def test_attention_path_nullable(rng):
    bank = lpr(rng)
    bank.Wv.data[...] = 0
    f = t64(rng.standard_normal((1, 4, 2, 2, 2)))
    assert np.all(lpr_enhance(f, bank, residual=False).data == 0)


def test_channel_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        lpr_enhance(t64(np.zeros((1, 3, 2, 2, 2))), lpr(rng, 4))


def test_fcc_identities(rng):
    x = rng.standard_normal((3, 4, 4))
    y = rng.standard_normal((3, 4, 4))
    assert abs(fcc(t64(x), t64(x)).item() - 1) < 1e-12
    assert abs(fcc(t64(x), t64(-x)).item() + 1) < 1e-12
    assert abs(fcc(t64(2.5 * x + 3), t64(x)).item() - 1) < 1e-12
    assert abs(fcc(t64(x), t64(y)).item() - fcc(t64(y), t64(x)).item()) < 1e-12


def test_fcc_matches_scalar_oracle(rng):
    x, y = rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 2, 2, 2))
    assert abs(fcc(t64(x), t64(y)).item() - oracles.pearson(x, y)) < 1e-10
    xs, ys = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    ref = np.mean([oracles.pearson(xs[c], ys[c]) for c in range(4)])
    assert abs(fcc(t64(xs), t64(ys)).item() - ref) < 1e-12


def test_fcc_zero_variance_is_zero(rng):
    x = rng.standard_normal((2, 5))
    x[0] = 1.0
    y = rng.standard_normal((2, 5))
    ref = oracles.pearson(x[1], y[1]) / 2
    assert abs(fcc(t64(x), t64(y)).item() - ref) < 1e-12
    assert fcc(t64(np.ones((1, 4))), t64(np.ones((1, 4)))).item() == 0.0
    xg = t64(x, grad=True)
    backward(fcc(xg, t64(y)))
    assert np.all(xg.grad[0] == 0) and np.isfinite(xg.grad).all()


def test_fcc_gradcheck(rng):
    y = t64(rng.standard_normal((2, 6)))
    assert gradcheck(lambda x: fcc(x, y), [t64(rng.standard_normal((2, 6)))]) < 1e-5


def test_pooling_matrix_columns_average():
    m = pooling_matrix(10, 4)
    np.testing.assert_allclose(m.sum(axis=0), 1.0)
    assert np.all((m > 0).sum(axis=1) >= 1)
    np.testing.assert_array_equal(pooling_matrix(6, 6), np.eye(6))


def test_consistency_extremes(rng):
    f1 = t64(rng.standard_normal((2, 4, 2, 2, 2)))
    target = canonical_f1(f1, 5).data
    a, b = lpr(rng, 4, 5), lpr(rng, 4, 5)
    a.R.data[...] = target.T
    b.R.data[...] = target.T
    assert abs(consistency_loss(a, b, f1).item() + 2) < 1e-12
    a.R.data[...] = -target.T
    b.R.data[...] = -target.T
    assert abs(consistency_loss(a, b, f1).item() - 2) < 1e-12


def test_consistency_gradcheck_wrt_prototypes(rng):
    a, b = lpr(rng, 2, 4), lpr(rng, 2, 4)
    f1 = t64(rng.standard_normal((2, 2, 2, 2, 2)))
    assert gradcheck(lambda ra, rb: consistency_loss(a, b, f1), [a.R, b.R]) < 1e-5


def test_consistency_decreases_when_fitting_prototypes(rng):
    a, b = LPR(16, 64, rng=rng, dtype=np.float64), LPR(16, 64, rng=rng, dtype=np.float64)
    f1 = t64(rng.standard_normal((2, 16, 8, 8, 8)))
    opt = Adam([a.R, b.R], lr=1e-2)
    losses = []
    for _ in range(50):
        opt.zero_grad()
        loss = consistency_loss(a, b, f1)
        backward(loss)
        opt.step()
        losses.append(loss.item())
    assert all(y < x for x, y in zip(losses, losses[1:]))
    assert -2 <= losses[-1] < losses[0] <= 2


def test_mse_values(rng):
    a = rng.standard_normal((1, 1, 2, 2, 2))
    assert mse_alignment_loss(t64(a), t64(a)).item() == 0.0
    assert mse_alignment_loss(t64(a + 1), t64(a)).item() == pytest.approx(1.0, abs=1e-12)
    x, y = rng.standard_normal((2, 3, 2, 2, 2)), rng.standard_normal((2, 3, 2, 2, 2))
    sq = 0.0
    for idx in np.ndindex(x.shape):
        sq += (x[idx] - y[idx]) ** 2
    assert mse_alignment_loss(t64(x), t64(y)).item() == pytest.approx(sq / 48, abs=1e-12)
    assert mse_alignment_loss(t64(x), t64(y), paper_exact=True).item() == pytest.approx(sq / 8, abs=1e-12)
    with pytest.raises(ValueError):
        mse_alignment_loss(t64(x), t64(y[:1]))
