import math

import numpy as np
import pytest

from oracles import prefix_sums
from tcemu.mma_engine import Instruction, MmaPolicy
from tcemu.structured_kernels import (
    GenPath,
    GivensParams,
    HouseholderInput,
    batched_givens,
    batched_householder,
    givens_fragment,
    givens_matrix,
    givens_roundtrip_residual,
    householder_fragment,
    householder_matrix,
    householder_orthogonality,
    scan_via_matmul,
)
from tcemu.warp_model import ElementType, SharedTile, mapping_scheme

WMMA = MmaPolicy(Instruction.WMMA)


def assemble(frags, m):
    g = m // 16
    out = np.zeros((m, m), np.float16)
    for bj in range(g):
        for bi in range(g):
            out[bi * 16 : (bi + 1) * 16, bj * 16 : (bj + 1) * 16] = frags[bi + bj * g].to_matrix()
    return out


def unit_vector(rng, m):
    v = rng.standard_normal(m)
    return v / np.linalg.norm(v)


def f16_bits(a):
    return np.asarray(a, np.float16).view(np.uint16)


# -- Householder ------------------------------------------------------------


@pytest.mark.parametrize("m", [16, 32])
def test_householder_of_e0(m):
    e0 = np.zeros(m)
    e0[0] = 1
    expected = np.eye(m, dtype=np.float16)
    expected[0, 0] = -1
    for path in GenPath:
        assert np.array_equal(assemble(householder_fragment(e0, path), m), expected)


@pytest.mark.parametrize("m", [16, 32])
@pytest.mark.parametrize("policy", [MmaPolicy(), WMMA])
def test_householder_paths_identical(m, policy):
    rng = np.random.default_rng(m)
    v = unit_vector(rng, m).astype(np.float16)
    direct = householder_fragment(v, GenPath.DIRECT, policy)
    base = householder_fragment(v, GenPath.BASELINE, policy)
    assert all(d == b for d, b in zip(direct, base))
    assert np.array_equal(f16_bits(assemble(direct, m)), f16_bits(householder_matrix(v)))


def test_householder_element_rule_vs_binary64():
    """Each element is fp16(fp16(fp16(vi*vj) * -2) + delta)."""
    rng = np.random.default_rng(3)
    v = unit_vector(rng, 16).astype(np.float16)
    H = householder_matrix(v)
    for i in range(16):
        for j in range(16):
            prod = np.float16(float(v[i]) * float(v[j]))
            elm = np.float16(float(prod) * -2.0)
            if i == j:
                elm = np.float16(float(elm) + 1.0)
            assert f16_bits(H[i, j]) == f16_bits(elm)


def test_householder_orthogonality_100_instances():
    rng = np.random.default_rng(100)
    worst = max(householder_orthogonality(unit_vector(rng, 16).astype(np.float16)) for _ in range(100))
    assert worst <= 2.0**-7


def test_householder_generation_traffic():
    rng = np.random.default_rng(4)
    for m in (16, 32):
        item = HouseholderInput(unit_vector(rng, m), rng.uniform(-1, 1, (m, 16)))
        direct = batched_householder([item], GenPath.DIRECT)
        base = batched_householder([item], GenPath.BASELINE)
        assert direct.generated_bytes == [0]
        assert base.generated_bytes == [2 * m * m * 2]
        assert direct.operand_bytes == base.operand_bytes


def test_batched_householder_e0_negates_first_row():
    rng = np.random.default_rng(5)
    A = rng.integers(-8, 9, (16, 32))
    e0 = np.eye(16)[0]
    out = batched_householder([HouseholderInput(e0, A)]).outputs[0]
    expected = A.astype(np.float32)
    expected[0] *= -1
    assert np.array_equal(out, expected)


def test_batched_householder_batch_of_256():
    rng = np.random.default_rng(6)
    items = [HouseholderInput(unit_vector(rng, 16), rng.uniform(-1, 1, (16, 16)), b) for b in range(256)]
    direct = batched_householder(items, GenPath.DIRECT, workers=4)
    base = batched_householder(items, GenPath.BASELINE)
    again = batched_householder(items[100:101], GenPath.DIRECT)
    for d, b in zip(direct.outputs, base.outputs):
        assert np.array_equal(d.view(np.uint32), b.view(np.uint32))
    assert np.array_equal(again.outputs[0], direct.outputs[100])


def test_householder_input_checks():
    with pytest.raises(ValueError):
        HouseholderInput(np.zeros(16), np.zeros((16, 16)))
    with pytest.raises(ValueError):
        HouseholderInput(np.ones(16), np.zeros((32, 16)))
    item = HouseholderInput(np.ones(16), np.zeros((16, 16)))
    assert item.renormalized
    assert abs(np.linalg.norm(item.v.astype(np.float64)) - 1) <= 2.0**-8
    with pytest.raises(ValueError):
        householder_fragment(np.ones(8) / math.sqrt(8))
    rng = np.random.default_rng(7)
    a = HouseholderInput(unit_vector(rng, 16), np.zeros((16, 16)))
    b = HouseholderInput(unit_vector(rng, 16), np.zeros((16, 32)))
    with pytest.raises(ValueError):
        batched_householder([a, b])
    with pytest.raises(ValueError):
        batched_householder([HouseholderInput(unit_vector(rng, 16), np.zeros((16, 8)))])


# -- Givens ----------------------------------------------------------------


@pytest.mark.parametrize("dim", [16, 32])
def test_givens_zero_angle_is_identity(dim):
    for path in GenPath:
        G = assemble(givens_fragment(GivensParams(2, 9, 0.0), dim, path), dim)
        assert np.array_equal(G, np.eye(dim, dtype=np.float16))


def test_givens_quarter_turn_entries():
    G = assemble(givens_fragment(GivensParams(0, 1, math.pi / 2), 16), 16)
    assert G[0, 0] == 0 and G[1, 1] == 0
    assert G[0, 1] == -1 and G[1, 0] == 1
    assert np.array_equal(G[2:, 2:], np.eye(14, dtype=np.float16))


@pytest.mark.parametrize("dim", [16, 32])
@pytest.mark.parametrize("policy", [MmaPolicy(), WMMA])
def test_givens_paths_identical(dim, policy):
    p = GivensParams(3, dim - 2, 0.7)
    direct = givens_fragment(p, dim, GenPath.DIRECT_MAP, policy)
    base = givens_fragment(p, dim, GenPath.BASELINE, policy)
    assert all(d == b for d, b in zip(direct, base))


@pytest.mark.parametrize("dim", [16, 32])
def test_givens_generation_traffic(dim):
    As = [np.eye(dim, 16)] * 2
    ps = [GivensParams(0, 5, 0.1), GivensParams(0, 5, 0.2)]
    assert batched_givens(As, ps, GenPath.DIRECT_MAP).generated_bytes == [0, 0]
    scratch = SharedTile(ElementType.FP16, dim, dim)
    givens_fragment(ps[0], dim, GenPath.BASELINE, scratch=scratch)
    assert scratch.traffic >= 2 * dim * dim * 2
    assert batched_givens(As, ps, GenPath.BASELINE).generated_bytes == [2 * dim * dim * 2] * 2


def test_batched_givens_zero_angles_pass_through():
    rng = np.random.default_rng(8)
    As = [rng.uniform(-1, 1, (32, 32)).astype(np.float16) for _ in range(4)]
    out = batched_givens(As, [GivensParams(4, 20, 0.0)] * 4).outputs
    assert all(np.array_equal(o, a.astype(np.float32)) for o, a in zip(out, As))


def test_batched_givens_paths_and_oracle():
    rng = np.random.default_rng(9)
    As = [rng.uniform(-1, 1, (16, 32)).astype(np.float16) for _ in range(8)]
    ps = [GivensParams(1, 6, float(t)) for t in rng.uniform(-math.pi, math.pi, 8)]
    direct = batched_givens(As, ps, GenPath.DIRECT_MAP)
    base = batched_givens(As, ps, GenPath.BASELINE, workers=3)
    for d, b, a, p in zip(direct.outputs, base.outputs, As, ps):
        assert np.array_equal(d.view(np.uint32), b.view(np.uint32))
        ref = givens_matrix(p, 16).astype(np.float64) @ a.astype(np.float64)
        assert np.max(np.abs(d - ref)) <= 2.0**-10


def test_givens_inverse_rotation_residual():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        A = rng.uniform(-1, 1, (16, 16)).astype(np.float16)
        i, j = sorted(rng.choice(16, 2, replace=False))
        worst = max(worst, givens_roundtrip_residual(A, GivensParams(int(i), int(j), float(rng.uniform(-3, 3)))))
    assert worst <= 2.0**-7


def test_givens_argument_errors():
    with pytest.raises(ValueError):
        GivensParams(3, 3, 0.0)
    with pytest.raises(ValueError):
        givens_fragment(GivensParams(0, 20, 0.0), 16)
    with pytest.raises(ValueError):
        batched_givens([np.eye(16)] * 2, [GivensParams(0, 1, 0.0), GivensParams(0, 2, 0.0)])
    with pytest.raises(ValueError):
        batched_givens([np.eye(16)], [])


# -- scan --------------------------------------------------------------------


@pytest.mark.parametrize("path", list(GenPath))
def test_scan_examples(path):
    assert scan_via_matmul(np.ones(16), path).prefix.tolist() == list(range(1, 17))
    assert np.all(scan_via_matmul(np.eye(16)[0], path).prefix == 1.0)


def test_scan_random_integers_exact():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a = rng.integers(-255, 256, 16)
        expected = prefix_sums(a)
        for path in (GenPath.DIRECT, GenPath.BASELINE):
            for policy in (MmaPolicy(), WMMA):
                assert scan_via_matmul(a, path, policy).prefix.tolist() == expected


def test_scan_traffic():
    assert scan_via_matmul(np.ones(16), GenPath.DIRECT).generated_bytes == 0
    assert scan_via_matmul(np.ones(16), GenPath.BASELINE).generated_bytes == 2 * 16 * 16 * 2


def test_scan_rejects_wrong_length():
    with pytest.raises(ValueError):
        scan_via_matmul(np.ones(8))


def test_kernels_mapping_agnostic():
    rng = np.random.default_rng(12)
    v = unit_vector(rng, 32)
    A = rng.uniform(-1, 1, (32, 16))
    a = rng.integers(0, 255, 16)
    results = []
    for scheme in ("canonical", "scrambled"):
        with mapping_scheme(scheme):
            results.append(
                (
                    batched_householder([HouseholderInput(v, A)]).outputs[0],
                    batched_givens([A], [GivensParams(0, 31, 0.3)]).outputs[0],
                    scan_via_matmul(a).prefix,
                )
            )
    for x, y in zip(*results):
        assert np.array_equal(x.view(np.uint32), y.view(np.uint32))
