import hashlib

import numpy as np
import pytest

from phenoct import phantom
from phenoct.volume_io import load_catalog, load_labelmap, load_volume, read_manifest


def test_counts_for_reference_plan():
    plan = phantom.PhantomPlan(n=200, prevalence=0.2, effect="gallstone", seed=7)
    flags = phantom.positive_flags(plan)
    assert flags.size == 200 and flags.sum() == 40
    assert plan.finding == "gallstones" and plan.planted_descriptor == "gallbladder.atten.max"


def test_plan_guards():
    for bad in (dict(prevalence=0.0), dict(prevalence=1.0), dict(n=0), dict(effect="x"),
                dict(noise=-1.0)):
        with pytest.raises(ValueError):
            phantom.PhantomPlan(**bad)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_write_cohort_deterministic(tmp_path):
    plan = phantom.PhantomPlan(n=5, prevalence=0.4, seed=2, shape=(20, 20, 20))
    m1 = phantom.write_cohort(plan, tmp_path / "a")
    m2 = phantom.write_cohort(plan, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    records, findings = read_manifest(m1)
    assert findings == ["gallstones"] and len(records) == 5
    assert sum(r.labels["gallstones"] for r in records) == 2
    assert len(list((tmp_path / "a" / "cases").iterdir())) == 5
    assert load_catalog(tmp_path / "a" / "catalog.json") == phantom.default_catalog()
    vol = load_volume(records[0].volume_path)
    lab = load_labelmap(records[0].labels_path)
    case = phantom.make_case(plan, 0, records[0].labels["gallstones"])
    assert np.array_equal(vol.values, case.hu) and np.array_equal(lab.labels, case.labels)
    assert vol.spacing == plan.spacing and m2.exists()


def test_case_depends_only_on_seed_and_index():
    a = phantom.PhantomPlan(n=3, seed=4, shape=(16, 16, 16))
    b = phantom.PhantomPlan(n=30, seed=4, shape=(16, 16, 16))
    assert np.array_equal(phantom.make_case(a, 2, 1).hu, phantom.make_case(b, 2, 1).hu)
    c = phantom.PhantomPlan(n=3, seed=5, shape=(16, 16, 16))
    assert not np.array_equal(phantom.make_case(a, 2, 1).hu, phantom.make_case(c, 2, 1).hu)


@pytest.mark.parametrize("effect", sorted(phantom.EFFECTS))
def test_every_class_present_and_effect_planted(effect):
    plan = phantom.PhantomPlan(n=2, effect=effect, seed=0, shape=(32, 32, 32))
    neg, pos = phantom.make_case(plan, 0, 0), phantom.make_case(plan, 1, 1)
    present = set(np.unique(neg.labels)) - {0}
    expected = {cid for cid, _ in phantom.CLASSES} - {phantom.IDS["kidney_cyst"]}
    assert expected - {phantom.IDS["free_fluid"]} <= present
    gb = phantom.IDS["gallbladder"]
    if effect == "gallstone":
        assert pos.hu[pos.labels == gb].max() > 200 >= neg.hu[neg.labels == gb].max()
    if effect == "steatosis":
        assert pos.truth["liver_spleen_delta"] < -10 < neg.truth["liver_spleen_delta"]
    if effect == "aaa":
        assert pos.truth["aorta_radius_mm"] > neg.truth["aorta_radius_mm"]
    if effect == "cyst":
        assert "cyst_volume_mm3" in pos.truth and "cyst_volume_mm3" not in neg.truth
    assert pos.hu.dtype == np.int16 and pos.labels.dtype == np.uint8
