"""Gradient and shape verification used by the CLI and the test-suite."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from . import functional as F
from .ccfe import LPR, consistency_loss, fcc, lpr_enhance, mse_alignment_loss
from .encoders import ResBlock, afe_forward, pfe_forward, pooled, res_block_forward
from .model import FusionNet
from .ssff import classify, cross_entropy, joint_fuse, total_loss
from .tca import TCA, tca_forward
from .tensor import Tensor, gradcheck, matmul, no_grad

Case = tuple[Callable[..., Tensor], list[Tensor]]


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Scalarize with fixed random weights so every output element matters."""
    w = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return lambda y: (y * w).sum()


def _scalar(fn: Callable[..., Tensor], inputs: list[Tensor], rng) -> Case:
    with no_grad():
        proj = _project(fn(*inputs), rng)
    return (lambda *xs: proj(fn(*xs))), inputs


def _module_case(module, fn, x: Tensor, rng) -> Case:
    params = module.parameters()

    def wrapped(x_, *ps):
        return fn(x_)

    with no_grad():
        proj = _project(fn(x), rng)
    return (lambda *xs: proj(wrapped(*xs))), [x] + params


def _cases(rng) -> dict[str, Case]:
    c = {}
    c["matmul"] = _scalar(matmul, [_t(rng, 3, 4), _t(rng, 4, 2)], rng)
    c["elementwise"] = _scalar(lambda a, b: (a * b + a - b) * 0.5, [_t(rng, 5), _t(rng, 5)], rng)
    c["conv3d"] = _scalar(
        lambda x, w, b: F.conv3d(x, w, b, stride=2, padding=1), [_t(rng, 1, 2, 5, 5, 5), _t(rng, 3, 2, 3, 3, 3), _t(rng, 3)], rng
    )
    c["conv3d_depthwise"] = _scalar(
        lambda x, w: F.conv3d(x, w, None, padding=1, groups=2), [_t(rng, 1, 2, 4, 4, 4), _t(rng, 2, 1, 3, 3, 3)], rng
    )
    axis = "DHW"[int(rng.integers(3))]
    c["strip_conv"] = _scalar(lambda x, w: F.depthwise_strip_conv3d(x, w, axis), [_t(rng, 1, 2, 4, 4, 4), _t(rng, 2, 5)], rng)
    c["maxpool"] = _scalar(lambda x: F.pool3d(x, "max", 3, 2, padding=1), [_t(rng, 1, 2, 5, 5, 5)], rng)
    c["avgpool"] = _scalar(lambda x: F.pool3d(x, "avg", 2, 2), [_t(rng, 1, 2, 4, 4, 4)], rng)
    c["global_avg"] = _scalar(lambda x: F.global_pool(x, "avg"), [_t(rng, 2, 2, 2, 2, 2)], rng)
    c["global_max"] = _scalar(lambda x: F.global_pool(x, "max"), [_t(rng, 2, 2, 2, 2, 2)], rng)
    c["instance_norm"] = _scalar(F.instance_norm, [_t(rng, 2, 2, 2, 2, 2), _t(rng, 2), _t(rng, 2)], rng)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    c["batch_norm_train"] = _scalar(
        lambda x, g, b: F.batch_norm(x, g, b, rm.copy(), rv.copy(), training=True), [_t(rng, 2, 2, 2, 2, 2), _t(rng, 2), _t(rng, 2)], rng
    )
    c["batch_norm_eval"] = _scalar(
        lambda x, g, b: F.batch_norm(x, g, b, rm, rv, training=False), [_t(rng, 2, 2, 2, 2, 2), _t(rng, 2), _t(rng, 2)], rng
    )
    c["relu"] = _scalar(F.relu, [_t(rng, 3, 4)], rng)
    c["sigmoid"] = _scalar(F.sigmoid, [_t(rng, 3, 4)], rng)
    c["softmax"] = _scalar(F.softmax, [_t(rng, 3, 4)], rng)
    c["log_softmax"] = _scalar(F.log_softmax, [_t(rng, 3, 4)], rng)
    c["linear"] = _scalar(F.linear, [_t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2)], rng)
    c["concat"] = _scalar(lambda a, b: F.concat([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 2)], rng)

    lpr = LPR(2, 3, rng=rng, dtype=np.float64)
    wq = _t(rng, 2, 2)
    c["lpr_attention"] = _scalar(
        lambda f, r, q, k, v, w: lpr_enhance(f, _with(lpr, r, q, k, v), w),
        [_t(rng, 1, 2, 2, 2, 2), lpr.R, lpr.Wq, lpr.Wk, lpr.Wv, wq], rng,
    )
    c["fcc"] = (lambda x, y: fcc(x, y), [_t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 2, 2)])
    lm, lp = LPR(2, 4, rng=rng, dtype=np.float64), LPR(2, 4, rng=rng, dtype=np.float64)
    c["consistency_loss"] = (
        lambda rm_, rp_, f1: consistency_loss(_with(lm, rm_), _with(lp, rp_), f1),
        [lm.R, lp.R, _t(rng, 2, 2, 2, 2, 2)],
    )
    c["mse_loss"] = (lambda a, b: mse_alignment_loss(a, b), [_t(rng, 2, 2, 2, 2, 2), _t(rng, 2, 2, 2, 2, 2)])
    labels = rng.integers(0, 2, 3)
    c["cross_entropy"] = (lambda z: cross_entropy(z, labels), [_t(rng, 3, 2)])
    c["total_loss"] = (
        lambda a, b, z: total_loss(a.sum(), b.sum(), cross_entropy(z, labels), 0.5),
        [_t(rng, 1), _t(rng, 1), _t(rng, 3, 2)],
    )
    c["joint_classify"] = _scalar(
        lambda a, b, d, w: classify(joint_fuse(a, b, d), _Head(w))[1], [_t(rng, 2, 2), _t(rng, 2, 2), _t(rng, 2, 2), _t(rng, 6, 2)], rng
    )

    tca = TCA(4, reduction=4, rng=rng, dtype=np.float64)
    c["tca"] = _module_case(tca, lambda x: tca_forward(x, tca), _t(rng, 1, 4, 4, 4, 4), rng)
    block = ResBlock(2, 3, stride=2, norm="instance", rng=rng, dtype=np.float64)
    c["res_block"] = _module_case(block, lambda x: res_block_forward(x, block), _t(rng, 1, 2, 4, 4, 4), rng)
    block_bn = ResBlock(2, 2, stride=1, norm="batch", rng=rng, dtype=np.float64)
    c["res_block_batchnorm"] = _module_case(block_bn, lambda x: _frozen_stats(block_bn, x), _t(rng, 2, 2, 2, 2, 2), rng)
    return c


def _frozen_stats(block: ResBlock, x: Tensor) -> Tensor:
    # training-mode batch norm mutates running stats; restore them so calls are deterministic
    saved = [(m, m.running_mean.copy(), m.running_var.copy()) for m in (block.norm1, block.norm2)]
    out = res_block_forward(x, block)
    for m, a, b in saved:
        m.running_mean[...] = a
        m.running_var[...] = b
    return out


class _Head:
    def __init__(self, w: Tensor):
        self.w = w

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.w)


def _with(lpr: LPR, R: Tensor, Wq=None, Wk=None, Wv=None) -> LPR:
    lpr.R = R
    if Wq is not None:
        lpr.Wq, lpr.Wk, lpr.Wv = Wq, Wk, Wv
    return lpr


def gradient_cases(seed: int) -> dict[str, Case]:
    return _cases(np.random.default_rng(seed))


def gradient_suite(seeds: Iterable[int] = range(20), names: Iterable[str] | None = None) -> list[tuple[str, float]]:
    """Worst relative gradcheck error per operation over ``seeds``."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, (fn, inputs) in gradient_cases(seed).items():
            if names is not None and name not in names:
                continue
            worst[name] = max(worst.get(name, 0.0), gradcheck(fn, inputs))
    return list(worst.items())


def pipeline_shapes(volume_size: int, dtype=np.float32) -> list[tuple[str, tuple[int, ...]]]:
    """Run one subject through the full network and record each stage's shape."""
    model = FusionNet(seed=0, dtype=dtype).eval()
    rng = np.random.default_rng(0)
    shape = (1, 1) + (volume_size,) * 3
    mri = Tensor(rng.standard_normal(shape), dtype=dtype)
    pet = Tensor(rng.standard_normal(shape), dtype=dtype)
    rows = [("input", mri.shape)]
    with no_grad():
        f_m = pfe_forward(mri, model.shared.pfe)
        f_p = pfe_forward(pet, model.shared.pfe)
        rows.append(("PFE", f_m.shape[1:]))
        f1 = model.ff(f_m, f_p)
        rows.append(("FF", f1.shape[1:]))
        e_m = lpr_enhance(f_m, model.lpr_p, model.lpr_m.Wq)
        e_p = lpr_enhance(f_p, model.lpr_m, model.lpr_p.Wq)
        rows.append(("CCFE", e_m.shape[1:]))
        a_m = afe_forward(e_m, model.shared.afe)
        rows.append(("AFE", a_m.shape[1:]))
        t_m = model.shared.tca(a_m)
        rows.append(("TCA", t_m.shape[1:]))
        a_p = model.shared.tca(afe_forward(e_p, model.shared.afe))
        f_sh = (pooled(t_m) + pooled(a_p)) * 0.5
        rows.append(("F_sh", f_sh.shape[1:]))
        sf_m, sf_p = model.specific_features(mri, pet)
        rows.append(("SF_mri", sf_m.shape[1:]))
        rows.append(("SF_pet", sf_p.shape[1:]))
        joint = joint_fuse(f_sh, sf_m, sf_p)
        rows.append(("joint", joint.shape[1:]))
        logits, _ = classify(joint, model.classifier)
        rows.append(("logits", logits.shape[1:]))
    return rows
