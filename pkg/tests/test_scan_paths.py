from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from usm.scan_paths import (N_CONFIGS, apply_scan, generate_scan, inverse_scan, is_continuous,
                            scan_for_block)
from usm.tensor import Tensor

GOLDEN = Path(__file__).parent / "golden"
SIDES = [1, 2, 4, 8, 16]


def test_config0_2x3_example():
    assert generate_scan(0, 2, 3).perm.tolist() == [0, 1, 2, 5, 4, 3]


def test_singleton_grid():
    for cid in range(N_CONFIGS):
        assert generate_scan(cid, 1, 1).perm.tolist() == [0]


@pytest.mark.parametrize("cid", range(N_CONFIGS))
def test_golden_2x3(cid):
    expected = [int(s) for s in (GOLDEN / f"scan_{cid}_2x3.txt").read_text().split()]
    assert generate_scan(cid, 2, 3).perm.tolist() == expected


@pytest.mark.parametrize("cid", range(N_CONFIGS))
def test_16x16_is_bijection(cid):
    assert sorted(generate_scan(cid, 16, 16).perm.tolist()) == list(range(256))


@pytest.mark.parametrize("cid", range(N_CONFIGS))
@pytest.mark.parametrize("h", SIDES)
@pytest.mark.parametrize("w", SIDES)
def test_grid_properties(cid, h, w):
    p = generate_scan(cid, h, w)
    assert np.array_equal(np.sort(p.perm), np.arange(h * w))
    assert np.array_equal(p.inv_perm[p.perm], np.arange(h * w))
    if h * w > 1:
        assert is_continuous(p)


def test_config_names_and_start_corners():
    names = [generate_scan(c, 4, 4).name for c in range(N_CONFIGS)]
    assert names == ["row/TL", "row/TR", "row/BL", "row/BR", "col/TL", "col/TR", "col/BL", "col/BR"]
    starts = [generate_scan(c, 4, 4).perm[0] for c in range(N_CONFIGS)]
    assert starts == [0, 3, 12, 15, 0, 3, 12, 15]
    # column configs step vertically first
    assert generate_scan(4, 4, 4).perm[1] == 4


@pytest.mark.parametrize("h,w", [(2, 2), (2, 3), (4, 4), (8, 16)])
def test_perms_pairwise_distinct(h, w):
    perms = {tuple(generate_scan(c, h, w).perm) for c in range(N_CONFIGS)}
    assert len(perms) == N_CONFIGS


def test_invalid_arguments():
    with pytest.raises(ValueError):
        generate_scan(8, 4, 4)
    with pytest.raises(ValueError):
        generate_scan(-1, 4, 4)
    with pytest.raises(ValueError):
        generate_scan(0, 0, 4)


def test_paths_are_immutable_and_cached():
    p = generate_scan(3, 4, 8)
    assert p is generate_scan(3, 4, 8)
    with pytest.raises(ValueError):
        p.perm[0] = 1


def test_apply_scan_rows_example():
    x = Tensor(np.arange(6.0)[:, None] * np.ones((1, 2)))
    out = apply_scan(x, generate_scan(0, 2, 3))
    assert out.data[:, 0].tolist() == [0, 1, 2, 5, 4, 3]


def test_apply_twice():
    # Row snakes from the left corners only reverse alternate rows, so they
    # are involutions; the column snake from TR is not.
    x = Tensor(np.arange(6.0)[:, None])
    p0, p5 = generate_scan(0, 2, 3), generate_scan(5, 2, 3)
    assert np.array_equal(apply_scan(apply_scan(x, p0), p0).data, x.data)
    assert apply_scan(apply_scan(x, p5), p5).data[:, 0].tolist() == [4, 3, 0, 5, 2, 1]


def test_length_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        apply_scan(Tensor(np.zeros((5, 2))), generate_scan(0, 2, 3))
    with pytest.raises(ValueError):
        inverse_scan(Tensor(np.zeros((7, 2))), generate_scan(0, 2, 3))


def test_scan_for_block():
    assert scan_for_block(0) == 0
    assert scan_for_block(8) == 0
    assert scan_for_block(24) == 0
    assert [scan_for_block(k) for k in range(25)] == [k % 8 for k in range(25)]
    with pytest.raises(ValueError):
        scan_for_block(25)


@given(st.integers(0, 7), st.integers(1, 12), st.integers(1, 12), st.integers(1, 3))
def test_inverse_exact_property(cid, h, w, d):
    p = generate_scan(cid, h, w)
    x = np.random.default_rng(h * 100 + w).standard_normal((2, h * w, d))
    y = inverse_scan(apply_scan(Tensor(x), p), p)
    assert np.array_equal(y.data, x)


@given(st.integers(0, 7), st.integers(1, 12), st.integers(1, 12))
def test_continuity_property(cid, h, w):
    p = generate_scan(cid, h, w)
    assert h * w == 1 or is_continuous(p)
    assert np.array_equal(np.sort(p.perm), np.arange(h * w))
