import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvvtune.dtypes import DType
from rvvtune.errors import ContractError
from rvvtune.machine import LEGAL_VLEN, MachineConfig
from rvvtune.registry import (BlockShape, IntrinsicKind, IntrinsicVariant, Registry, enumerate_variants,
                              match_block, ref_multivmul, ref_vmacc)

MV, VM = IntrinsicKind.MULTIVMUL, IntrinsicKind.VMACC


def halving_rule(vlen, sew, lmul):
    cap = vlen * lmul // sew
    out, vl = set(), cap
    while vl >= 4:
        out.add(vl)
        vl //= 2
    return out


@pytest.mark.parametrize("vlen", LEGAL_VLEN)
@pytest.mark.parametrize("dtype", [DType.INT8, DType.FLOAT32, DType.FLOAT16])
def test_registered_vl_sets_follow_the_halving_rule(vlen, dtype):
    variants = enumerate_variants(MachineConfig(vlen), dtype)
    mv = [v for v in variants if v.kind is MV]
    src_lmul = 4 if dtype is DType.INT8 else 8
    assert {v.vl for v in mv} == halving_rule(vlen, dtype.sew_bits, src_lmul)
    assert {v.j for v in mv} == {vlen // 32, 1}
    assert len(mv) == 2 * len(halving_rule(vlen, dtype.sew_bits, src_lmul))
    for v in variants:
        assert v.src_lmul * v.widen_factor <= 8
        assert min(v.vl for v in variants) == 4


def test_float32_vlen128_vl_set():
    mv = enumerate_variants(MachineConfig(128), DType.FLOAT32, (MV,))
    assert sorted({v.vl for v in mv}, reverse=True) == [32, 16, 8, 4]


def test_int8_uses_widening_layout():
    v = enumerate_variants(MachineConfig(1024), DType.INT8, (MV,))[0]
    assert (v.src_lmul, v.widen_factor, v.acc_dtype, v.vl, v.j) == (4, 2, DType.INT32, 512, 32)


def test_registry_is_deterministic_and_keyed(registry1024, machine1024):
    again = Registry(machine1024)
    assert list(again) == list(registry1024)
    keys = [v.key for v in registry1024]
    assert len(keys) == len(set(keys))
    assert registry1024.get(MV, DType.FLOAT32, 256, 32).vl == 256
    with pytest.raises(KeyError):
        registry1024.get(MV, DType.FLOAT32, 3, 32)


def test_variants_are_ordered_widest_first(registry1024):
    vls = [v.vl for v in registry1024.variants_for(VM, DType.FLOAT32)]
    assert vls == sorted(vls, reverse=True)


def test_illegal_variant_is_rejected():
    v = IntrinsicVariant(MV, DType.INT8, DType.INT32, 1024, 32, 8, 2)
    with pytest.raises(ContractError):
        v.check(1024)


def test_match_block_examples(registry1024):
    block = BlockShape(MV, DType.INT8, DType.INT32, 32, 128)
    assert match_block(block, registry1024.get(MV, DType.INT8, 128, 32))
    assert not match_block(block, registry1024.get(MV, DType.INT8, 64, 32))
    fblock = BlockShape(MV, DType.FLOAT32, DType.FLOAT32, 32, 128)
    assert not match_block(fblock, registry1024.get(MV, DType.INT8, 128, 32))


def _variant(dtype, vl, j):
    if dtype is DType.INT8:
        return IntrinsicVariant(MV, dtype, DType.INT32, vl, j, 4, 2)
    return IntrinsicVariant(MV, dtype, dtype, vl, j, 8, 1)


def test_ref_multivmul_example():
    v = _variant(DType.INT8, 4, 2)
    out = ref_multivmul([1, 2, 3, 4], [[1, 1, 1, 1], [2, 0, 0, 0]], [10, 0], v)
    assert out.tolist() == [20, 2]


def test_ref_multivmul_zero_a_keeps_c():
    v = _variant(DType.FLOAT32, 8, 3)
    c = np.array([1.5, -2.0, 3.0], dtype=np.float32)
    assert np.array_equal(ref_multivmul(np.zeros(8), np.ones((3, 8)), c, v), c)


def test_int8_accumulator_headroom():
    v = _variant(DType.INT8, 1024, 1)
    out = ref_multivmul(np.full(1024, 127), np.full((1, 1024), 127), [0], v)
    assert out.dtype == np.int32
    assert int(out[0]) == 127 * 127 * 1024 < 2**31


def test_ref_multivmul_shape_contract():
    v = _variant(DType.INT8, 8, 2)
    with pytest.raises(ContractError):
        ref_multivmul(np.zeros(4), np.zeros((2, 8)), np.zeros(2), v)
    with pytest.raises(ContractError):
        ref_multivmul(np.zeros(8), np.zeros((3, 8)), np.zeros(2), v)


def test_ref_multivmul_random_brute_force(rng):
    """1,000 random small instances against Python-int dot products."""
    for _ in range(1000):
        vl = int(rng.choice([4, 8, 16, 32, 64]))
        j = int(rng.integers(1, 9))
        a = rng.integers(-128, 128, vl)
        b = rng.integers(-128, 128, (j, vl))
        c = rng.integers(-1000, 1000, j)
        out = ref_multivmul(a, b, c, _variant(DType.INT8, vl, j))
        expect = [int(c[r]) + sum(int(x) * int(y) for x, y in zip(a, b[r])) for r in range(j)]
        assert out.tolist() == expect


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([4, 8, 16, 32]), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_row_decomposition(vl, j, seed):
    r = np.random.default_rng(seed)
    a = r.integers(-128, 128, vl)
    b = r.integers(-128, 128, (j, vl))
    c = r.integers(-5000, 5000, j)
    whole = ref_multivmul(a, b, c, _variant(DType.INT8, vl, j))
    rows = [ref_multivmul(a, b[i:i + 1], c[i:i + 1], _variant(DType.INT8, vl, 1))[0] for i in range(j)]
    assert whole.tolist() == [int(x) for x in rows]
    # J = 1 is a plain dot product plus accumulate
    assert int(rows[0]) == int(c[0]) + int(np.dot(a.astype(np.int64), b[0].astype(np.int64)))


def test_ref_vmacc_examples():
    v = IntrinsicVariant(VM, DType.FLOAT32, DType.FLOAT32, 2, None, 8)
    assert ref_vmacc([1, 2], [3, 4], [10, 10], v).tolist() == [13, 18]
    v4 = IntrinsicVariant(VM, DType.INT32, DType.INT32, 4, None, 8)
    c = np.array([5, 6, 7, 8])
    assert ref_vmacc([9, 9, 9, 9], [0, 0, 0, 0], c, v4).tolist() == c.tolist()
    assert ref_vmacc([1] * 4, [1] * 4, [1] * 4, v4).tolist() == [2] * 4
    with pytest.raises(ContractError):
        ref_vmacc([1, 2, 3], [1, 2, 3, 4], [0] * 4, v4)
