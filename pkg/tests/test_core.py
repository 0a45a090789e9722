import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_ac3
from mtdetect.core import (FORMAT_VERSION, POISSON, SEPARATED, AutocorrSet, FormatError, MixtureModel,
                           PlacementModel, Signal, SolveReport, StartTrace, canonical_pair,
                           expand_symmetries, tri_index, tri_pairs, tri_size, validate)
from mtdetect.forward import signal_ac

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_triangle_layout():
    pairs = tri_pairs(5)
    assert len(pairs) == tri_size(5) == 15
    for k, (a, b) in enumerate(pairs):
        assert tri_index(a, b) == k and b <= a


def test_expand_symmetries_examples():
    ac = signal_ac(np.array([1.0, 2.0, 3.0]))
    assert expand_symmetries(ac, 2, 1) == expand_symmetries(ac, 1, 2) == ac.a3[tri_index(2, 1)]
    assert expand_symmetries(ac, -1, 1) == ac.a3[tri_index(2, 1)]
    assert expand_symmetries(ac, 0, 0) == ac.a3[0]


def test_expand_symmetries_rejects_unstored_span():
    ac = signal_ac(np.ones(4))
    with pytest.raises(IndexError):
        expand_symmetries(ac, -3, 3)
    with pytest.raises(IndexError):
        expand_symmetries(ac, 4, 0)


@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.data())
def test_expand_symmetries_matches_brute_force(x, data):
    ac = signal_ac(x)
    L = len(x)
    l1 = data.draw(st.integers(-(L - 1), L - 1))
    l2 = data.draw(st.integers(-(L - 1), L - 1))
    c1, _ = canonical_pair(l1, l2)
    if c1 > L - 1:
        # span exceeds the window: the true value is zero, and it is not stored
        assert brute_ac3(x, l1, l2) == 0.0
        return
    assert expand_symmetries(ac, l1, l2) == pytest.approx(brute_ac3(x, l1, l2), abs=1e-9)


def _model(gamma, L=21, K=1):
    rng = np.random.default_rng(0)
    return MixtureModel.from_pi([Signal(rng.standard_normal(L)) for _ in range(K)], gamma)


def test_validate_examples():
    assert validate(_model(0.45), PlacementModel(SEPARATED)) == []
    problems = validate(_model(0.6), PlacementModel(SEPARATED))
    assert len(problems) == 1 and "density exceeds L/(2L-1)" in problems[0]
    assert validate(_model(0.6), PlacementModel(POISSON)) == []


def test_validate_reports_every_problem():
    m = MixtureModel((Signal(np.ones(3)), Signal(np.ones(3))), (-0.1, 0.9), noise_sigma=-1)
    assert len(validate(m, PlacementModel(SEPARATED))) == 3


def test_mixture_pi_and_gamma():
    m = MixtureModel.from_pi([np.ones(4), np.zeros(4), np.arange(4.0)], 0.3, [0.5, 1 / 3, 1 / 6])
    assert m.gamma == pytest.approx(0.3)
    assert m.pi.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(m.pi, [0.5, 1 / 3, 1 / 6])


def test_type_invariants():
    with pytest.raises(ValueError):
        Signal(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        Signal(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MixtureModel((np.ones(3), np.ones(4)), (0.1, 0.1))
    with pytest.raises(ValueError):
        PlacementModel("clumped")
    with pytest.raises(ValueError):
        AutocorrSet(a1=0, a2=np.zeros(3), a3=np.zeros(5))


@given(arrays(np.float64, st.integers(1, 9), elements=finite),
       st.integers(0, 10**12), st.integers(1, 50))
def test_autocorr_roundtrip_bit_identical(tmp_path_factory, x, n, segs):
    ac = signal_ac(x).replace(n_samples=n, n_segments=segs)
    path = tmp_path_factory.mktemp("ac") / "ac.json"
    ac.save(path)
    back = AutocorrSet.load(path)
    assert back == ac
    assert back.a3.tobytes() == ac.a3.tobytes()


def test_autocorr_2d_roundtrip(tmp_path):
    img = np.random.default_rng(1).standard_normal((4, 4))
    ac = signal_ac(img, order=2)
    ac.save(tmp_path / "a.json")
    back = AutocorrSet.load(tmp_path / "a.json")
    assert back == ac and back.dim == 2 and back.L == 4


def test_autocorr_load_rejects_unknown_version(tmp_path):
    ac = signal_ac(np.ones(3))
    p = tmp_path / "a.json"
    ac.save(p)
    head = json.loads(p.read_text())
    head["format_version"] = FORMAT_VERSION + 1
    p.write_text(json.dumps(head))
    with pytest.raises(FormatError):
        AutocorrSet.load(p)


def test_autocorr_load_rejects_truncated_payload(tmp_path):
    p = tmp_path / "a.json"
    signal_ac(np.ones(3)).save(p)
    data = (tmp_path / "a.json.bin").read_bytes()
    (tmp_path / "a.json.bin").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        AutocorrSet.load(p)


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 6)), elements=finite),
       st.lists(st.floats(0.01, 1), min_size=1, max_size=3), st.floats(0, 5))
def test_model_roundtrip(vals, dens, sigma):
    K = min(len(dens), vals.shape[0])
    m = MixtureModel(tuple(Signal(v) for v in vals[:K]), tuple(dens[:K]), sigma)
    back = MixtureModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back == m and back.digest() == m.digest()


def test_solve_report_best_cost_and_roundtrip():
    traces = (StartTrace(3.0, 1.0, 4), StartTrace(float("nan"), 0.0, 0, "failed"), StartTrace(0.5, 0.1, 9))
    rep = SolveReport(_model(0.2, L=5), traces, (0.1,), 2, {"seed": 3})
    assert rep.best_cost == 0.5
    back = SolveReport.from_dict(json.loads(rep.to_json()))
    assert back.best_cost == rep.best_cost and back.aligned_errors == (0.1,)
    assert back.estimates == rep.estimates and back.extras == {"seed": 3}
    with pytest.raises(ValueError):
        SolveReport(None, traces, (-1.0,))
    d = rep.to_dict()
    d["format_version"] = 99
    with pytest.raises(FormatError):
        SolveReport.from_dict(d)
