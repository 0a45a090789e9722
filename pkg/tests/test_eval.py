import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mtdetect.eval import (ErrorReport, HarnessConfig, aligned_error, count_equations, enumerate_equations,
                           experiment1_harness, loglog_slope, median_by_checkpoint,
                           sigma_contaminated_entries, sigma_free_entries)


def test_aligned_error_identity_and_permutation(rng):
    truth = [rng.standard_normal(7) for _ in range(3)]
    rep = aligned_error(truth, truth)
    assert rep.errors == (0.0, 0.0, 0.0) and rep.permutation == (0, 1, 2)
    est = [truth[2], truth[0], truth[1]]
    rep = aligned_error(est, truth)
    assert rep.errors == (0.0, 0.0, 0.0)
    assert [est[p] is truth[k] for k, p in enumerate(rep.permutation)] == [True] * 3


def test_aligned_error_shift_in_overestimated_window(rng):
    truth = np.zeros(21)
    truth[2:13] = rng.standard_normal(11)
    est = np.roll(truth, 3)
    assert aligned_error([est], [truth], allow_shift=True).errors[0] == 0.0
    assert aligned_error([est], [truth], allow_shift=True).shifts == (3,)
    assert aligned_error([est], [truth]).errors[0] > 0.5


def test_aligned_error_relative_scale(rng):
    t = rng.standard_normal(9)
    e = t + 0.01 * rng.standard_normal(9)
    assert aligned_error([e], [t]).errors[0] == pytest.approx(np.linalg.norm(e - t) / np.linalg.norm(t))


def test_aligned_error_mismatch():
    with pytest.raises(ValueError):
        aligned_error([np.ones(3)], [np.ones(3), np.zeros(3)])
    with pytest.raises(ValueError):
        aligned_error([np.ones(3)], [np.ones(4)])
    with pytest.raises(ValueError):
        ErrorReport((0.1, 0.2), (0, 0), (0, 0))


@given(st.integers(0, 10**6), st.integers(2, 5))
def test_aligned_error_invariant_to_truth_relabeling(seed, K):
    rng = np.random.default_rng(seed)
    truth = [rng.standard_normal(6) for _ in range(K)]
    est = [t + 0.1 * rng.standard_normal(6) for t in truth]
    perm = rng.permutation(K)
    a = aligned_error(est, truth)
    b = aligned_error(est, [truth[p] for p in perm])
    assert sorted(a.errors) == pytest.approx(sorted(b.errors))
    assert a.joint_error == pytest.approx(b.joint_error)


def test_hungarian_path_for_many_signals(rng):
    K = 11
    truth = [rng.standard_normal(5) for _ in range(K)]
    perm = rng.permutation(K)
    rep = aligned_error([truth[p] for p in perm], truth)
    assert rep.errors == (0.0,) * K
    assert [perm[p] for p in rep.permutation] == list(range(K))


def test_count_examples():
    assert count_equations(21, True) == (273, 12)
    # the bound is floor((L(L-1)+1) / (2(L+1))) = floor(421/44)
    assert count_equations(21, False) == (211, 9)
    assert count_equations(5, True)[0] == 25


def test_closed_forms_for_lengths_3_to_100():
    for L in range(3, 101):
        assert count_equations(L, True)[0] * 2 == L * (L + 5)
        assert count_equations(L, False)[0] * 2 == L * (L - 1) + 2
        assert count_equations(L, True)[1] == (L * (L + 5)) // (2 * (L + 1))


def test_enumerated_index_sets():
    for L in range(3, 31):
        free, cont = sigma_free_entries(L), sigma_contaminated_entries(L)
        assert not set(free) & set(cont)
        # sigma unknown: the enumeration agrees with the closed form
        assert enumerate_equations(L, False) == count_equations(L, False)[0]
        # sigma known: every stored entry, 1 + L + L(L+1)/2
        assert enumerate_equations(L, True) == (L + 1) * (L + 2) // 2
        assert len(cont) == 2 * L
        assert count_equations(L, True)[0] - count_equations(L, False)[0] == 3 * L - 1


def test_loglog_slope_and_medians():
    ns = [1e6, 1e7, 1e8]
    assert loglog_slope(ns, [1.0, 10**-0.5, 0.1]) == pytest.approx(-0.5)
    rows = [{"seed": s, "N": n, "err_0": e} for s, base in enumerate([1.0, 2.0, 3.0])
            for n, e in zip(ns, [base, base / 2, base / 4])]
    assert median_by_checkpoint(rows, 1) == {1e6: [2.0], 1e7: [1.0], 1e8: [0.5]}


def test_harness_config_json():
    cfg = HarnessConfig(L=5, K=2, checkpoints=[100, 200])
    back = HarnessConfig.from_json(json.dumps(cfg.to_dict()))
    assert back == cfg
    with pytest.raises(ValueError, match="unknown"):
        HarnessConfig.from_json('{"L": 5, "bogus": 1}')


def test_noiseless_harness_is_exact_and_deterministic(tmp_path):
    cfg = HarnessConfig(L=5, K=1, gamma=0.3, sigma=0.0, checkpoints=[100_000, 200_000], seeds=[0, 1],
                        starts=10, segment_length=50_000)
    rows = experiment1_harness(cfg, tmp_path / "e.csv")
    assert len(rows) == 4
    for r in rows:
        if r["N"] == 200_000:
            assert r["err_0"] < 1e-6
        else:
            # a prefix may end inside an occurrence; that partial copy biases
            # the moments by about one occurrence in gamma N / L
            assert r["err_0"] < 10 * cfg.L / (cfg.gamma * r["N"])
    with open(tmp_path / "e.csv") as fh:
        reader = csv.reader(fh)
        assert next(reader) == ["seed", "N", "err_0", "cost"]
    again = experiment1_harness(cfg, tmp_path / "f.csv")
    assert (tmp_path / "e.csv").read_bytes() == (tmp_path / "f.csv").read_bytes()
    assert again == rows
