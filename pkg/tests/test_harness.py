import math

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from camfuse.data import SynthConfig, make_folds, synth_generate
from camfuse.harness.checkpoint import MAGIC, VERSION, CheckpointError, load_checkpoint, save_checkpoint
from camfuse.harness.config import RunConfig, load_config, parse_config_text
from camfuse.harness.crossval import LOSS_HEADER, cross_validate
from camfuse.harness.metrics import MetricsReport, binary_metrics, confusion, roc_auc
from camfuse.harness.optim import Adam, AdamState, adam_step
from camfuse.harness.training import (
    TrainingDiverged, batches, evaluate, predict_proba, prepare_volumes, pretrain_specific, smoothed, train_fusion,
)
from camfuse.model import FusionNet
from camfuse.tensor import Tensor, backward

import oracles


# -- optimizer --------------------------------------------------------------
def test_adam_zero_grads_leave_params():
    p = np.array([1.0, -2.0])
    st = AdamState(lr=0.1)
    adam_step([p], [None], st)
    adam_step([p], [np.zeros(2)], st)
    assert p.tolist() == [1.0, -2.0] and st.step == 2


def test_adam_first_step_is_signed_lr(rng):
    g = rng.standard_normal(5)
    p = np.zeros(5)
    adam_step([p], [g], AdamState(lr=1e-3))
    np.testing.assert_allclose(p, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_matches_reference_recurrence(rng):
    p, q = rng.standard_normal(3), None
    q = p.copy()
    m = v = np.zeros(3)
    st = AdamState(lr=0.01)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        adam_step([p], [g], st)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        q = q - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, q, rtol=1e-12)


def test_adam_minimizes_quadratic():
    x = Tensor([3.0], requires_grad=True, dtype=np.float64)
    opt = Adam([x], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        backward((x * x).sum())
        opt.step()
    assert abs(x.item()) < 0.05


# -- metrics ----------------------------------------------------------------
def test_confusion_and_metrics_hand_case():
    y = [1, 1, 1, 0, 0, 0]
    pred = [1, 1, 0, 1, 0, 0]
    assert confusion(y, pred) == (2, 1, 2, 1)
    m = binary_metrics(y, [0.9, 0.8, 0.3, 0.6, 0.2, 0.1], np.array(pred, bool))
    assert m["acc"] == pytest.approx(4 / 6)
    assert m["pre"] == pytest.approx(2 / 3) and m["sen"] == pytest.approx(2 / 3) and m["spe"] == pytest.approx(2 / 3)
    assert m["auc"] == pytest.approx(oracles.auc_pairs(y, [0.9, 0.8, 0.3, 0.6, 0.2, 0.1]))


def test_metrics_perfect_and_inverted():
    y = np.array([0, 0, 1, 1])
    s = np.array([0.1, 0.2, 0.8, 0.9])
    m = binary_metrics(y, s)
    assert all(v == 1.0 for v in m.values())
    assert roc_auc(y, 1 - s) == 0.0


def test_auc_random_near_half():
    r = np.random.default_rng(0)
    aucs = [roc_auc(r.integers(0, 2, 200), r.random(200)) for _ in range(20)]
    assert abs(np.mean(aucs) - 0.5) < 0.08


def test_auc_with_ties_matches_oracles(rng):
    for _ in range(20):
        y = rng.integers(0, 2, 30)
        y[:2] = [0, 1]
        s = rng.integers(0, 5, 30).astype(float)
        assert roc_auc(y, s) == pytest.approx(oracles.auc_pairs(y, s), abs=1e-12)
        assert roc_auc(y, s) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


def test_undefined_metrics_are_nan_and_skipped(caplog):
    m = binary_metrics([0, 0], [0.1, 0.2])
    assert math.isnan(m["auc"]) and math.isnan(m["sen"]) and math.isnan(m["pre"])
    rep = MetricsReport()
    rep.add(m)
    rep.add(binary_metrics([0, 1], [0.2, 0.8]))
    assert rep.mean("auc") == 1.0
    assert "excluded" in caplog.text


def test_report_mean_std_csv(tmp_path):
    rep = MetricsReport()
    for acc in (0.5, 0.75, 1.0):
        rep.add({"acc": acc, "auc": acc, "pre": acc, "spe": acc, "sen": acc})
    assert rep.mean("acc") == pytest.approx(0.75) and rep.std("acc") == pytest.approx(np.std([0.5, 0.75, 1.0]))
    rep.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "fold,acc,auc,pre,spe,sen" and len(lines) == 4
    assert "ACC 0.7500" in rep.format()


# -- config -----------------------------------------------------------------
def test_config_parsing(tmp_path):
    d = parse_config_text("# run\nepochs = 3\nlambda = 0.25\nfreeze-specific = no\ntask = cn_mci  # comment\n")
    assert d == {"epochs": 3, "lam": 0.25, "freeze_specific": False, "task": "cn_mci"}
    p = tmp_path / "c.cfg"
    p.write_text("epochs = 3\nlr = 0.01\n")
    cfg = load_config(p, {"epochs": 5, "lr": None})
    assert cfg.epochs == 5 and cfg.lr == 0.01 and cfg.lam == 0.5
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "epochs 3", "freeze_specific = maybe"])
def test_config_rejects(text):
    with pytest.raises((KeyError, ValueError)):
        parse_config_text(text)


def test_config_validate():
    with pytest.raises(ValueError):
        RunConfig(task="x").validate()
    with pytest.raises(ValueError):
        RunConfig(batch_size=0).validate()


# -- checkpoint -------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    model = FusionNet(seed=3, n_prototypes=8)
    for _, buf in model.named_buffers():
        buf[...] = np.random.default_rng(0).random(buf.shape)
    state = np.random.default_rng(1).bit_generator.state
    save_checkpoint(model, tmp_path / "a.ckpt", {"epochs": 2}, state)
    loaded, cfg, rng_state = load_checkpoint(tmp_path / "a.ckpt")
    assert cfg == {"epochs": 2} and rng_state == state
    a, b = model.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k]), k
    save_checkpoint(loaded, tmp_path / "b.ckpt", cfg, rng_state)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_ablation_round_trip(tmp_path):
    model = FusionNet(use_ccfe=False, use_ssff=False, seed=1)
    save_checkpoint(model, tmp_path / "a.ckpt")
    loaded, _, _ = load_checkpoint(tmp_path / "a.ckpt")
    assert loaded.lpr_m is None and loaded.fe_m is None


def test_checkpoint_rejects_bad_magic_and_version(tmp_path):
    save_checkpoint(FusionNet(seed=0, n_prototypes=4), tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    assert raw[:4] == MAGIC
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    raw[4:8] = (VERSION + 1).to_bytes(4, "little")
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match=rf"version {VERSION + 1}.*version {VERSION}"):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "t.ckpt").write_bytes(bytes((tmp_path / "a.ckpt").read_bytes()[:-10]))
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")


# -- training ---------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny():
    return prepare_volumes(synth_generate(SynthConfig(n_subjects=6, volume_size=32, seed=2)), 32)


def test_prepare_volumes_resizes_and_normalizes():
    subjects = synth_generate(SynthConfig(n_subjects=2, volume_size=16, seed=0))
    X, y = prepare_volumes(subjects, 32)
    assert X.shape == (2, 2, 32, 32, 32) and X.dtype == np.float32 and y.tolist() == [s.label for s in subjects]
    np.testing.assert_allclose(X.mean(axis=(2, 3, 4)), 0, atol=1e-5)


def test_batches_merge_singleton():
    sizes = [len(b) for b in batches(9, 4, None)]
    assert sizes == [4, 5]
    got = np.sort(np.concatenate(batches(10, 4, np.random.default_rng(0))))
    assert got.tolist() == list(range(10))


def test_smoothed():
    np.testing.assert_allclose(smoothed([1, 2, 3, 4, 5, 6], 5), [1, 1.5, 2, 2.5, 3, 4])


def test_lr_zero_leaves_parameters_bit_identical(tiny):
    X, y = tiny
    model = FusionNet(seed=0, n_prototypes=8)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    rng = np.random.default_rng(0)
    pretrain_specific(model, X, y, 1, 4, 0.0, rng)
    train_fusion(model, X, y, 1, 4, 0.0, 0.5, rng)
    for n, p in model.named_parameters():
        assert np.array_equal(p.data, before[n]), n


def test_training_is_deterministic(tiny):
    X, y = tiny
    traces = []
    for _ in range(2):
        model = FusionNet(seed=4, n_prototypes=8)
        rng = np.random.default_rng(4)
        pre = pretrain_specific(model, X, y, 1, 4, 1e-3, rng)
        traces.append((pre, train_fusion(model, X, y, 2, 4, 1e-3, 0.5, rng), predict_proba(model, X)))
    assert traces[0][0] == traces[1][0] and traces[0][1] == traces[1][1]
    assert np.array_equal(traces[0][2], traces[1][2])


def test_frozen_specific_branch_unchanged(tiny):
    X, y = tiny
    model = FusionNet(seed=0, n_prototypes=8)
    before = {n: v.copy() for n, v in model.fe_m.state_dict().items()}
    train_fusion(model, X, y, 1, 4, 1e-2, 0.5, np.random.default_rng(0))
    for n, v in model.fe_m.state_dict().items():
        assert np.array_equal(v, before[n]), n
    assert all(p.requires_grad for p in model.fe_m.parameters())


def test_divergence_reported(tiny):
    X, y = tiny
    bad = X.copy()
    bad[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="l_consi"):
        train_fusion(FusionNet(seed=0, n_prototypes=8, use_ssff=False), bad, y, 1, 6, 1e-3, 0.5, np.random.default_rng(0))


def test_evaluate_permutation_invariant(tiny):
    X, y = tiny
    model = FusionNet(seed=0, n_prototypes=8)
    a = evaluate(model, X, y)
    perm = np.random.default_rng(1).permutation(len(y))
    b = evaluate(model, X[perm], y[perm])
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12) or (math.isnan(a[k]) and math.isnan(b[k]))


def test_cross_validate_smoke(tmp_path):
    subjects = synth_generate(SynthConfig(n_subjects=8, volume_size=32, seed=0))
    cfg = RunConfig(epochs=1, pretrain_epochs=1, folds=2, n_prototypes=8, lr=1e-3)
    report, traces = cross_validate(cfg, subjects, out_dir=tmp_path)
    assert len(report.folds) == 2 and set(traces) == {0, 1}
    assert (tmp_path / "fold0.ckpt").exists() and (tmp_path / "fold1.ckpt").exists()
    lines = (tmp_path / "loss_trace.csv").read_text().splitlines()
    assert lines[0] == LOSS_HEADER and len(lines) == 3
    rows = (tmp_path / "metrics.csv").read_text().splitlines()[1:]
    accs = [float(r.split(",")[1]) for r in rows]
    assert report.mean("acc") == pytest.approx(np.mean(accs))


def test_cross_validate_rejects_leaky_plan():
    subjects = synth_generate(SynthConfig(n_subjects=4, volume_size=32, seed=0))
    plan = make_folds([s.subject_id for s in subjects], [s.label for s in subjects], k=2)

    class Leaky(type(plan)):
        def train_ids(self, fold):
            return list(self.assignments)

    leaky = Leaky(plan.k, plan.assignments)
    with pytest.raises(AssertionError, match="leak"):
        cross_validate(RunConfig(epochs=1, pretrain_epochs=0, folds=2), subjects, plan=leaky)


@pytest.mark.parametrize("flags", [dict(use_ccfe=False, use_ssff=False), dict(use_tca=False, use_ssff=False),
                                   dict(use_ccfe=False), dict(use_tca=False)])
def test_ablations_train(tiny, flags):
    X, y = tiny
    model = FusionNet(seed=0, n_prototypes=8, **flags)
    rng = np.random.default_rng(0)
    pretrain_specific(model, X, y, 1, 4, 1e-3, rng)
    trace = train_fusion(model, X, y, 1, 4, 1e-3, 0.5, rng)
    assert np.isfinite(trace[0].l_total)
    if not model.use_ccfe:
        assert trace[0].l_consi == 0.0 and trace[0].l_mse == 0.0
