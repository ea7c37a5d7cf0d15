import math

import numpy as np
import pytest

from camfuse.model import FusionNet
from camfuse.ssff import Classifier, classify, cross_entropy, cross_entropy_probs, joint_fuse, total_loss
from camfuse.tensor import Tensor, backward, gradcheck

import oracles


def t64(x):
    return Tensor(x, dtype=np.float64)


def test_joint_fuse_order(rng):
    a, b, c = (t64(rng.standard_normal((2, 128))) for _ in range(3))
    j = joint_fuse(a, b, c)
    assert j.shape == (2, 384)
    assert np.array_equal(j.data[:, :128], a.data)
    assert np.array_equal(j.data[:, 128:256], b.data) and np.array_equal(j.data[:, 256:], c.data)
    assert not np.array_equal(joint_fuse(b, a, c).data, j.data)


def test_classify(rng):
    head = Classifier(6, rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 6))
    logits, probs = classify(t64(x), head)
    np.testing.assert_allclose(logits.data, x @ head.w.data + head.b.data, atol=1e-12)
    np.testing.assert_allclose(probs.data, oracles.softmax(logits.data), atol=1e-12)
    head.w.data[...] = 0
    head.b.data[...] = 0
    assert np.all(classify(t64(x), head)[1].data == 0.5)


def test_argmax_shift_invariant(rng):
    z = rng.standard_normal((5, 2))
    from camfuse import functional as F
    assert np.array_equal(F.softmax(t64(z)).data.argmax(1), F.softmax(t64(z + 7.0)).data.argmax(1))


def test_cross_entropy_values(rng):
    assert cross_entropy(t64([[0.0, 0.0]]), [1]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert cross_entropy(t64([[-50.0, 50.0]]), [1]).item() < 1e-12
    assert cross_entropy_probs(np.array([[0.0, 1.0]]), [1]) == 0.0
    z = rng.standard_normal((3, 2))
    y = np.array([0, 1, 1])
    assert cross_entropy(t64(z), y).item() == pytest.approx(oracles.cross_entropy(z, y), abs=1e-12)
    assert cross_entropy(t64(z), y).item() >= 0


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(t64([[0.0, 0.0]]), [2])
    with pytest.raises(ValueError):
        cross_entropy(t64([[0.0, 0.0]]), [-1])


def test_total_loss():
    assert total_loss(0.0, 0.0, 0.3).item() == pytest.approx(0.3)
    assert total_loss(-1.5, 0.2, 0.7).item() == pytest.approx(-0.7)
    assert total_loss(-1.5, 0.2, 0.7, lam=0.0).item() == pytest.approx(-0.8)


def _micro_batch(model, rng):
    mri = Tensor(rng.standard_normal((2, 1, 32, 32, 32)), dtype=np.float64)
    pet = Tensor(rng.standard_normal((2, 1, 32, 32, 32)), dtype=np.float64)
    out = model(mri, pet)
    return total_loss(out.l_consi, out.l_mse, cross_entropy(out.logits, [0, 1]))


def test_gradients_reach_fusion_params_not_frozen_branch(rng):
    model = FusionNet(seed=0, dtype=np.float64, n_prototypes=8)
    model.requires_grad_(True)
    backward(_micro_batch(model, rng))
    for name in ["classifier.w", "shared.pfe.conv.weight", "shared.afe.blocks.3.conv2.weight", "ff.conv.weight",
                 "lpr_m.R", "lpr_m.Wq", "lpr_p.Wk", "lpr_p.Wv"]:
        p = dict(model.named_parameters())[name]
        assert p.grad is not None and np.abs(p.grad).sum() > 0, name
    for mod in (model.fe_m, model.fe_p):
        for p in mod.parameters():
            assert p.grad is None or not np.any(p.grad)


def test_total_loss_gradient_matches_finite_differences(rng):
    model = FusionNet(seed=1, dtype=np.float64, n_prototypes=2)
    model.eval()  # fixed normalization statistics keep the objective a pure function
    sub = [model.classifier.b, model.lpr_m.R, model.ff.conv.bias]
    mri = Tensor(rng.standard_normal((2, 1, 32, 32, 32)), dtype=np.float64)
    pet = Tensor(rng.standard_normal((2, 1, 32, 32, 32)), dtype=np.float64)

    def f(*_):
        out = model(mri, pet)
        return total_loss(out.l_consi, out.l_mse, cross_entropy(out.logits, [0, 1]))

    assert gradcheck(f, sub) < 1e-5
