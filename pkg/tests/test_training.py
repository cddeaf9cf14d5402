import json

import numpy as np
import pytest
import torch

from ungap.data import GeneratorConfig, generate_dataset, scenes_to_records
from ungap.errors import InvalidConfigError, InvalidInputError, NonFiniteLossError
from ungap.losses import LossWeights
from ungap.model import ModelConfig, build_model
from ungap.training import RunLog, TrainConfig, compute_losses, load_checkpoint, make_batch, save_checkpoint, train

SIZE = 32


def mcfg(**kw):
    return ModelConfig(**{"input_size": SIZE, "base_channels": 8, "encoder_depth": 3, **kw})


def tcfg(**kw):
    return TrainConfig(**{"epochs": 1, "batch_size": 2, "train_size": SIZE, "learning_rate": 1e-3, **kw})


@pytest.fixture(scope="module")
def records():
    return scenes_to_records(generate_dataset(4, seed=3, cfg=GeneratorConfig(size=SIZE)))


def test_one_epoch_smoke(records, tmp_path):
    res = train(mcfg(), tcfg(), records, out_dir=tmp_path)
    rec = res.run_log[0]
    assert rec["epoch"] == 1
    assert all(np.isfinite(rec[k]) for k in RunLog.COLUMNS)
    assert (tmp_path / "checkpoint.pt").exists() and (tmp_path / "runlog.csv").exists()
    header = (tmp_path / "runlog.csv").read_text().splitlines()[0]
    assert header.split(",") == list(RunLog.COLUMNS)


def test_disabled_hm_zero_aleatory(records):
    res = train(mcfg(enable_hm=False, enable_upfm=False), tcfg(), records)
    assert res.run_log[0]["L_aleatory"] == 0.0


def test_empty_dataset():
    with pytest.raises(InvalidInputError):
        train(mcfg(), tcfg(), [])


@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"batch_size": 0}, {"beta": 2.0}, {"checkpoint_every": -1}])
def test_invalid_train_config(kw):
    with pytest.raises(InvalidConfigError):
        tcfg(**kw)


def test_single_step_descent(records):
    """One small Adam step lowers L_final on the same batch for nearly every seed."""
    cfg = tcfg(augment=False)
    x, y, b = make_batch(records, [0, 1], cfg, epoch=1)
    violations = 0
    for seed in range(20):
        model = build_model(mcfg(), seed=seed)
        opt = torch.optim.Adam(model.parameters(), lr=1e-5)
        before = compute_losses(model(x), y, b, cfg)["L_final"]
        opt.zero_grad()
        before.backward()
        opt.step()
        with torch.no_grad():
            after = compute_losses(model(x), y, b, cfg)["L_final"]
        violations += int(after.item() > before.item())
    assert violations <= 1


@pytest.mark.parametrize("flags,idle", [
    ({"enable_bdh": False}, "boundary_branch"),
    ({"enable_upfm": False}, "upfm"),
])
def test_disabled_modules_absent(flags, idle):
    model = build_model(mcfg(**flags))
    assert getattr(model, idle) is None


def test_zero_weight_term_has_no_gradient(records):
    # with w2 = 0 the boundary branch only sees gradients through the fused logits
    cfg = tcfg(loss_weights=LossWeights(1.0, 0.0, 0.0), augment=False)
    model = build_model(mcfg())
    x, y, b = make_batch(records, [0, 1], cfg, epoch=1)
    compute_losses(model(x), y, b, cfg)["L_final"].backward()
    for p in model.boundary_branch.parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0


def test_deterministic(records):
    a = train(mcfg(), tcfg(epochs=2), records).run_log.records
    b = train(mcfg(), tcfg(epochs=2), records).run_log.records
    assert a == b


def test_checkpoint_round_trip(records, tmp_path):
    res = train(mcfg(), tcfg(), records)
    path = save_checkpoint(res.model, tmp_path / "m.pt", epoch=1, train_cfg=tcfg())
    loaded, meta = load_checkpoint(path)
    x = torch.rand(1, 3, SIZE, SIZE, generator=torch.Generator().manual_seed(0))
    res.model.eval()
    a, b = res.model(x), loaded(x)
    assert torch.equal(a.seg_prob, b.seg_prob) and torch.equal(a.s, b.s)
    assert meta["epoch"] == 1 and meta["beta"] == 0.5 and meta["seed"] == 0
    assert meta["loss_weights"] == {"w1": 0.87, "w2": 0.13, "w3": 0.001}


def test_checkpoint_config_mismatch(tmp_path):
    path = save_checkpoint(build_model(mcfg()), tmp_path / "m.pt")
    with pytest.raises(InvalidConfigError, match="base_channels"):
        load_checkpoint(path, mcfg(base_channels=16))


def test_checkpoint_missing_and_corrupt(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.pt")
    path = save_checkpoint(build_model(mcfg()), tmp_path / "m.pt")
    path.write_bytes(b"garbage")
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)


def test_non_finite_abort(records, tmp_path):
    model = build_model(mcfg())
    with torch.no_grad():
        model.seg_branch[2].bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as err:
        train(mcfg(), tcfg(), records, out_dir=tmp_path, model=model)
    assert "L_segmentation" in str(err.value)
    assert (tmp_path / "last_good.pt").exists()
    assert json.loads((tmp_path / "last_good.json").read_text())["epoch"] == 0


def test_runlog_monotone_and_json(tmp_path):
    log = RunLog()
    log.append(epoch=1, L_final=1.0)
    with pytest.raises(ValueError):
        log.append(epoch=1, L_final=0.5)
    log.to_json(tmp_path / "r.json")
    assert RunLog.from_json(tmp_path / "r.json").records == log.records
