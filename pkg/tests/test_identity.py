import json

import numpy as np
import pytest

from eyewave import identity, mlp
from eyewave.detector import DetectorConfig, LabeledImage
from eyewave.identity import (
    EnrollmentError,
    FingerprintMismatch,
    StoreError,
    Template,
    enroll,
    eye_patches,
    identify,
    match_score,
    score_matrix,
    store_load,
    store_save,
    upsert,
)
from eyewave.imageio import EyeAnnotation, GrayImage
from eyewave.synthetic import PersonTraits, generate_synthetic_face
from eyewave.wavelet import WaveletKind

CFG = DetectorConfig()
FAST = mlp.TrainingConfig(max_epochs=150)


def person_images(person, traits, count, offset=0):
    return [
        LabeledImage(*generate_synthetic_face(1000 * person + offset + k, 128, traits), f"p{person}")
        for k in range(count)
    ]


@pytest.fixture(scope="module")
def two_people():
    traits = PersonTraits.gallery(2, 11)
    enr = {p: person_images(p, traits[p], 4) for p in range(2)}
    probes = {p: person_images(p, traits[p], 3, offset=500) for p in range(2)}
    eyes = {p: eye_patches(enr[p]) for p in range(2)}
    store = [enroll(f"p{p}", enr[p], cfg=CFG, train_cfg=FAST, negative_patches=eyes[1 - p]) for p in range(2)]
    return store, enr, probes


def test_template_validation():
    fp = CFG.fingerprint()
    with pytest.raises(ValueError):
        Template("a", np.zeros(73), fp)
    with pytest.raises(ValueError):
        Template("a", np.r_[np.zeros(73), np.inf], fp)
    with pytest.raises(ValueError):
        Template("", np.zeros(74), fp)
    with pytest.raises(ValueError):
        Template("a", np.zeros(74), {"wavelet": "db4", "lowband": 32, "threshold_ratio": 0.2, "normalize_patches": True})


def test_enroll_without_positives():
    blank = LabeledImage(GrayImage(np.full((64, 64), 0.5)), EyeAnnotation((20, 20), (20, 40)))
    with pytest.raises(EnrollmentError, match="no positives") as err:
        enroll("x", [blank], negative_patches=np.zeros((3, 9)))
    assert not err.value.numeric
    with pytest.raises(EnrollmentError):
        enroll("x", [])


def test_enroll_metadata(two_people):
    store, enr, _ = two_people
    tpl = store[0]
    assert tpl.metadata["image_count"] == 4
    assert tpl.metadata["final_mse"] <= identity.MAX_ENROLL_MSE
    assert tpl.fingerprint == CFG.fingerprint()
    assert tpl.parameters.shape == (74,) and not tpl.parameters.flags.writeable


def test_own_images_score_positive(two_people):
    store, enr, _ = two_people
    for p, tpl in enumerate(store):
        for item in enr[p]:
            assert match_score(tpl, item.image) > 0


def test_scores_in_unit_interval(two_people):
    store, enr, probes = two_people
    images = [it.image for p in enr for it in enr[p] + probes[p]]
    m = score_matrix(store, images + [GrayImage(np.full((128, 128), 0.3))])
    assert m.shape == (len(images) + 1, 2)
    assert np.all((m >= 0) & (m <= 1))
    assert np.all(m[-1] == 0)  # blank probe has no maxima


def test_diagonal_beats_off_diagonal(two_people):
    store, _, probes = two_people
    own, other = [], []
    for p in range(2):
        m = score_matrix(store, [it.image for it in probes[p]])
        own.extend(m[:, p])
        other.extend(m[:, 1 - p])
    assert np.mean(own) > np.mean(other)


def test_score_formula_by_hand(two_people):
    store, enr, _ = two_people
    tpl = store[0]
    cand = identity.candidates(enr[0][0].image, CFG)
    scores = np.sort(mlp.classify_batch(tpl.net, cand.patches))[::-1]
    top = scores[scores > 0][:2]
    expected = len(top) / 2 * np.mean((top + 1) / 2)
    assert identity.score_candidates(tpl, cand) == pytest.approx(expected, abs=0)


def test_identify_rules(two_people):
    store, enr, _ = two_people
    probe = enr[0][0].image
    assert identify([], probe) is None
    single = identify(store[:1], probe)
    assert single.person_id == "p0" and single.accepted
    a = identify(store, probe)
    b = identify(list(reversed(store)), probe)
    assert a == b
    rejected = identify(store, probe, threshold=1.01)
    assert not rejected.accepted and rejected.person_id == a.person_id


def test_identify_tie_breaks_on_person_id(two_people):
    store, enr, _ = two_people
    twin = Template("a-twin", store[1].parameters, store[1].fingerprint)
    probe = enr[1][0].image
    res = identify([store[1], twin], probe)
    assert res.person_id == "a-twin"


def test_fingerprint_guard(two_people):
    store, enr, _ = two_people
    other = DetectorConfig(wavelet=WaveletKind.CDF22)
    with pytest.raises(FingerprintMismatch):
        match_score(store[0], enr[0][0].image, other)
    with pytest.raises(FingerprintMismatch):
        identify(store, enr[0][0].image, cfg=other)
    assert match_score(store[0], enr[0][0].image, CFG) == match_score(store[0], enr[0][0].image)


def test_store_round_trip_bit_exact(two_people):
    store, enr, probes = two_people
    back = store_load(store_save(store))
    assert [t.person_id for t in back] == ["p0", "p1"]
    for t, u in zip(store, back):
        np.testing.assert_array_equal(t.parameters, u.parameters)
        assert t.metadata == u.metadata
    for item in enr[0] + probes[1]:
        for t, u in zip(store, back):
            assert match_score(t, item.image) == match_score(u, item.image)
    assert store_save(back) == store_save(store)


def test_empty_store_round_trip():
    assert store_load(store_save([])) == []


def test_parameters_are_decimal_strings(two_people):
    doc = json.loads(store_save(two_people[0]))
    assert doc["format_version"] == 1
    params = doc["templates"][0]["parameters"]
    assert len(params) == 74 and all(isinstance(v, str) for v in params)


def _tamper(store, fn):
    doc = json.loads(store_save(store))
    fn(doc)
    return json.dumps(doc).encode()


@pytest.mark.parametrize(
    "edit",
    [
        lambda d: d.__setitem__("format_version", 2),
        lambda d: d["templates"][0].__setitem__("parameters", d["templates"][0]["parameters"][:73]),
        lambda d: d["templates"][1].__setitem__("person_id", d["templates"][0]["person_id"]),
        lambda d: d["templates"][0]["parameters"].__setitem__(0, 1.5),
        lambda d: d["templates"][0]["parameters"].__setitem__(0, "nan"),
        lambda d: d["templates"][0].pop("fingerprint"),
        lambda d: d.pop("templates"),
    ],
)
def test_store_rejects_corruption(two_people, edit):
    with pytest.raises(StoreError):
        store_load(_tamper(two_people[0], edit))


def test_store_rejects_garbage():
    with pytest.raises(StoreError):
        store_load(b"\xff\xfe")
    with pytest.raises(StoreError):
        store_load(b"[1, 2]")


def test_save_rejects_duplicates(two_people):
    with pytest.raises(StoreError):
        store_save([two_people[0][0], two_people[0][0]])


def test_upsert_replaces(two_people):
    store = two_people[0]
    replaced = Template("p0", np.zeros(74), CFG.fingerprint())
    out = upsert(store, replaced)
    assert [t.person_id for t in out] == ["p0", "p1"]
    assert not out[0].parameters.any()
