"""Pinned-seed regression against values frozen by scripts/freeze_fixtures.py."""

import importlib.util
import json
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
spec = importlib.util.spec_from_file_location("freeze_fixtures", ROOT / "scripts" / "freeze_fixtures.py")
freeze = importlib.util.module_from_spec(spec)
spec.loader.exec_module(freeze)

GOLDEN = json.loads(freeze.FIXTURE.read_text())


@pytest.fixture(scope="module")
def current():
    return freeze.compute()


def close_stats(a, b, rel=1e-5):
    assert a[0] == pytest.approx(b[0], rel=rel, abs=1e-4)
    assert a[1] == pytest.approx(b[1], rel=rel)
    assert a[2] == pytest.approx(b[2], rel=rel, abs=1e-6)


def test_encode(current):
    for got, want in zip(current["encode"], GOLDEN["encode"], strict=True):
        close_stats(got, want)


def test_decode(current):
    close_stats(current["decode"], GOLDEN["decode"])


@pytest.mark.parametrize("key", ["seg_prob", "s", "boundary_prob", "y_hat_aux"])
def test_forward(current, key):
    close_stats(current["forward"][key], GOLDEN["forward"][key])


def test_dataset_byte_stable(current):
    assert current["dataset_n8_seed0"] == GOLDEN["dataset_n8_seed0"]


def test_augment(current):
    assert current["augment_seed11"] == GOLDEN["augment_seed11"]


def test_export_png(current):
    assert current["export_png"] == GOLDEN["export_png"]
