import dataclasses
import json

import numpy as np
import pytest

from smore_lab import divergence
from smore_lab._validation import ValidationError
from smore_lab.verify import VerifyReport, run_suite


def test_conjugates_suite_passes():
    report = run_suite("conjugates")
    assert report.passed
    assert {c.name for c in report.checks} >= {"chi2.fenchel_young", "kl_reverse.biconjugation"}


def test_report_json_shape():
    doc = json.loads(run_suite("bounds").to_json())
    assert doc["suite"] == "bounds" and doc["passed"] is True
    assert set(doc["checks"][0]) == {"name", "status", "measured", "tolerance"}


def test_overall_flag_follows_checks():
    report = VerifyReport("x")
    report.upper("ok", 0.0, 1.0)
    assert report.passed
    report.lower("bad", -1.0, 0.0)
    assert not report.passed and report.failed() == ["bad"]
    report.upper("nan", float("nan"), 1.0)
    assert report.failed() == ["bad", "nan"]


def test_unknown_suite():
    with pytest.raises(ValidationError):
        run_suite("nope")


@pytest.fixture
def flipped_chi2(monkeypatch):
    good = divergence.CATALOGUE["chi2"]
    bad = dataclasses.replace(good, conjugate=lambda y: -good.conjugate(y))
    monkeypatch.setitem(divergence.CATALOGUE, "chi2", bad)


def test_sign_flipped_conjugate_fails_a_named_duality_check(flipped_chi2):
    report = run_suite("duality")
    assert not report.passed
    assert any(name.endswith("fixed_policy_dual_value") for name in report.failed())


def test_sign_flipped_conjugate_fails_fenchel_young(flipped_chi2):
    assert "chi2.fenchel_young" in run_suite("conjugates").failed()
