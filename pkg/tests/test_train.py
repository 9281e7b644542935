import math

import numpy as np
import pytest

from dualgate.checkpoint import Checkpoint, decode, encode, load_checkpoint, save_checkpoint
from dualgate.config import RunConfig, dump_config, load_config, parse_config
from dualgate.data import make_synthetic
from dualgate.encoder import Encoder
from dualgate.errors import ConfigurationError, ContractError, NumericError
from dualgate.optim import LARS, TrainConfig, lars_update, lr_schedule, trust_ratio
from dualgate.tensorcore import parameter
from dualgate.train import METRIC_FIELDS, TrainingAborted, format_metrics, pretrain, read_metrics

TINY = """
epochs = 3
batch_size = 16
warmup_epochs = 1
lars_trust = 0.02
stage_widths = 8,16
blocks_per_stage = 1,1
input_size = 16
checkpoint_every = 2
synth_train_n = 40
"""


def tiny_config(extra: str = "") -> RunConfig:
    return parse_config(TINY + extra)


@pytest.fixture(scope="module")
def tiny_data():
    return make_synthetic(40, size=16, seed=1)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, tiny_data):
    out = tmp_path_factory.mktemp("run")
    result = pretrain(tiny_config(), tiny_data, out_dir=out)
    return out, result


# -- schedule and optimizer ---------------------------------------------------

def test_lr_schedule_examples():
    cfg = TrainConfig(epochs=10, warmup_epochs=2, base_lr=0.3)
    assert lr_schedule(0, 100, cfg) == 0.0
    assert lr_schedule(10, 100, cfg) == pytest.approx(0.15)
    assert lr_schedule(20, 100, cfg) == pytest.approx(0.3)
    assert lr_schedule(60, 100, cfg) == pytest.approx(0.15)
    assert lr_schedule(100, 100, cfg) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        lr_schedule(101, 100, cfg)


def test_lars_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    w, g, m = rng.standard_normal((3, 10))
    cfg = TrainConfig(weight_decay=1e-2, lars_trust=0.05, momentum=0.9)
    (w_new,), (m_new,) = lars_update([w], [g], 0.2, cfg, momenta=[m])
    u = [g[i] + 1e-2 * w[i] for i in range(10)]
    wn = math.sqrt(sum(v * v for v in w))
    un = math.sqrt(sum(v * v for v in u))
    local = 0.05 * wn / un
    for i in range(10):
        mi = 0.9 * m[i] + local * 0.2 * u[i]
        assert m_new[i] == pytest.approx(mi, rel=1e-12)
        assert w_new[i] == pytest.approx(w[i] - mi, rel=1e-12)


def test_lars_equal_norms_reduces_to_sgd():
    w = np.array([3.0, 4.0])
    g = np.array([0.0, 5.0])
    cfg = TrainConfig(weight_decay=0.0, lars_trust=1.0, momentum=0.0)
    assert trust_ratio(w, g, 1.0) == 1.0
    (w_new,), _ = lars_update([w], [g], 0.1, cfg)
    np.testing.assert_allclose(w_new, w - 0.1 * g)


def test_lars_zero_gradient_leaves_weights():
    w = np.array([1.0, -2.0])
    cfg = TrainConfig(weight_decay=0.0)
    (w_new,), (m,) = lars_update([w], [np.zeros(2)], 0.3, cfg)
    np.testing.assert_array_equal(w_new, w)
    np.testing.assert_array_equal(m, 0.0)


def test_lars_class_agrees_with_functional_form():
    rng = np.random.default_rng(1)
    cfg = TrainConfig()
    a, b = parameter(rng.standard_normal(6)), parameter(rng.standard_normal(4))
    opt = LARS([a], [b], cfg)
    wa, wb = a.data.astype(np.float64), b.data.astype(np.float64)
    ma, mb = None, None
    for k in range(3):
        ga, gb = rng.standard_normal(6), rng.standard_normal(4)
        a.grad, b.grad = ga.astype(np.float32), gb.astype(np.float32)
        opt.step(0.1)
        (wa,), ma = lars_update([wa], [ga.astype(np.float32)], 0.1, cfg, ma)
        (wb,), mb = lars_update([wb], [gb.astype(np.float32)], 0.1, cfg, mb, scaled=False)
    np.testing.assert_allclose(a.data, wa, rtol=1e-5)
    np.testing.assert_allclose(b.data, wb, rtol=1e-5)


def test_non_finite_norm_raises():
    with pytest.raises(NumericError):
        trust_ratio(np.array([np.nan]), np.array([1.0]), 1e-3)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=3, warmup_epochs=3)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="sparse")


# -- config ---------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = tiny_config("eta_override = 0\nlambda = 2.5\ncrop_area_range = 0.3, 0.9\n")
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text
    (tmp_path / "a.cfg").write_text(text)
    assert load_config(tmp_path / "a.cfg") == cfg
    assert cfg.effective_vicreg.eta == 0.0 and cfg.effective_budget.lam == 2.5


def test_config_rejects_unknown_duplicate_and_bad_values():
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config("learning_rate = 0.1\n")
    with pytest.raises(ConfigurationError, match="twice"):
        parse_config("epochs = 3\nepochs = 4\n")
    with pytest.raises(ConfigurationError):
        parse_config("epochs = many\n")
    with pytest.raises(ConfigurationError):
        parse_config("t_d = 1.5\n")
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/run.cfg")


def test_default_config_matches_full_scale_recipe():
    cfg = RunConfig()
    t = cfg.train
    assert (t.epochs, t.batch_size, t.base_lr, t.warmup_epochs, t.lars_trust) == (500, 512, 0.3, 10, 0.001)
    assert cfg.budget.lam == 5.0


# -- checkpoint -------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"a": rng.standard_normal((3, 4)).astype(np.float32),
              "scalar": np.float32(1.5).reshape(()),
              "b.c": rng.standard_normal(5).astype(np.float32)}
    ck = Checkpoint(arrays, 7, 2**63 + 5, 123, "epochs = 3\n")
    save_checkpoint(tmp_path / "x.vdg", ck)
    back = load_checkpoint(tmp_path / "x.vdg")
    assert (back.epoch, back.rng_seed, back.rng_counter, back.config_text) == (7, 2**63 + 5, 123, "epochs = 3\n")
    for k, v in arrays.items():
        assert back.arrays[k].tobytes() == v.tobytes() and back.arrays[k].shape == v.shape
    assert encode(back) == encode(ck)


def test_checkpoint_layout_and_corruption():
    blob = encode(Checkpoint({"w": np.ones(2, np.float32)}, 1, 0, 0, ""))
    assert blob[:4] == b"VDG1"
    assert blob[4:8] == (1).to_bytes(4, "little") and blob[8:9] == b"w"
    with pytest.raises(ContractError):
        decode(b"XXXX" + blob[4:])
    with pytest.raises(ContractError):
        decode(blob[:-3])
    with pytest.raises(ContractError):
        encode(Checkpoint({"w": np.array([0.1])}, 1, 0, 0, ""))


# -- pretrain ---------------------------------------------------------------------

def test_metrics_csv_rows_and_header(tiny_run):
    out, result = tiny_run
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 3 and [r["epoch"] for r in rows] == [1, 2, 3]
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(METRIC_FIELDS)
    assert all(math.isfinite(r["loss_total"]) for r in rows)
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["epoch_0002.vdg", "epoch_0003.vdg"]
    assert load_config(out / "config.cfg") == tiny_config()


def test_same_seed_runs_are_byte_identical(tiny_run, tiny_data, tmp_path):
    out, _ = tiny_run
    pretrain(tiny_config(), tiny_data, out_dir=tmp_path)
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_resume_reproduces_uninterrupted_run(tiny_run, tiny_data, tmp_path):
    out, _ = tiny_run
    pretrain(tiny_config(), tiny_data, out_dir=tmp_path, resume=out / "checkpoints" / "epoch_0002.vdg")
    assert (tmp_path / "metrics.csv").read_text().splitlines()[-1] == \
        (out / "metrics.csv").read_text().splitlines()[-1]
    a = load_checkpoint(out / "checkpoints" / "epoch_0003.vdg")
    b = load_checkpoint(tmp_path / "checkpoints" / "epoch_0003.vdg")
    assert encode(a) == encode(b)


def test_zero_lambda_keeps_gates_open(tiny_data):
    result = pretrain(tiny_config("lambda = 0\n"), tiny_data)
    assert all(r["flops_ratio"] > 0.9 and r["loss_budget"] == 0.0 for r in result.metrics)


def test_single_path_modes_run(tiny_data):
    for mode in ("dense", "gated"):
        result = pretrain(tiny_config(f"mode = {mode}\n"), tiny_data)
        assert len(result.metrics) == 3


def test_nan_loss_aborts_with_last_checkpoint(tiny_data, tmp_path):
    def poison(row):
        if row["epoch"] == 2:
            enc.exp_w1.data[:] = np.nan

    enc = Encoder(tiny_config().encoder, tiny_config().sampler)
    with pytest.raises(TrainingAborted) as info:
        pretrain(tiny_config(), tiny_data, encoder=enc, out_dir=tmp_path, on_epoch=poison)
    assert info.value.last_checkpoint.endswith("epoch_0002.vdg")
    assert len(read_metrics(tmp_path / "metrics.csv")) == 2


def test_dataset_smaller_than_batch(tiny_data):
    small = make_synthetic(8, size=16, num_classes=2)
    with pytest.raises(ContractError):
        pretrain(tiny_config(), small)


def test_format_metrics_round_trip():
    row = {"epoch": 1, **{k: 0.1 * i for i, k in enumerate(METRIC_FIELDS[1:])}}
    text = format_metrics([row])
    assert text.count("\n") == 2
