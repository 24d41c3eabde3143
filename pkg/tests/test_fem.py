import hashlib

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from nhcsr.errors import ChecksumError, ConfigError, ContractError, ConvergenceError, FormatError
from nhcsr.fem import (
    CoefficientMap,
    FemProblem,
    Source,
    assemble_full,
    assemble_stiffness,
    build_dataset,
    build_samples,
    constituent_maps,
    fem_solve,
    gen_coefficient,
    load_dataset,
    read_dataset,
    solve_cg,
    write_dataset,
)
from nhcsr.fem.assembly import subcell_stiffness


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def manufactured_error(H):
    u = fem_solve(FemProblem(np.ones((2, 2)), H, Source("sine", 1.0))).values
    x = np.linspace(0, 1, H + 1)
    X, Y = np.meshgrid(x, x)
    return np.sqrt(np.mean((u - np.sin(np.pi * X) * np.sin(np.pi * Y)) ** 2))


# ---------------------------------------------------------------- coefficients


def test_random_coefficient_is_reproducible():
    a = gen_coefficient("random", 4, seed=11)
    b = gen_coefficient("random", 4, seed=11)
    assert a.values.shape == (4, 4)
    assert set(np.unique(a.values)) <= {1.0, 100.0}
    assert a.values.tobytes() == b.values.tobytes()


def test_checkerboard_period_one():
    v = gen_coefficient("checkerboard:1", 4).values
    expected = np.where((np.add.outer(np.arange(4), np.arange(4)) % 2) == 1, 100.0, 1.0)
    np.testing.assert_array_equal(v, expected)


@pytest.mark.parametrize("seed", range(6))
def test_mix_cells_come_from_exactly_one_constituent(seed):
    spec = "mix:checkerboard:2,wave:2:8,stride:3"
    cm = gen_coefficient(spec, 16, seed=seed)
    layers = constituent_maps(spec, 16)
    assert set(np.unique(cm.labels)) == {0, 1, 2}
    for k in range(3):
        np.testing.assert_array_equal(cm.values[cm.labels == k], layers[k][cm.labels == k])


@pytest.mark.parametrize("spec", ["wave", "stride", "checkerboard", "mix"])
def test_deterministic_patterns_are_two_valued(spec):
    cm = gen_coefficient(spec, 32, seed=3)
    assert set(np.unique(cm.values)) == {1.0, 100.0}


@pytest.mark.parametrize("spec", ["bogus", "checkerboard:4", "stride:5", "wave:1:4"])
def test_bad_patterns(spec):
    with pytest.raises(ConfigError):
        gen_coefficient(spec, 4)


# ---------------------------------------------------------------- assembly


def test_q1_stencil_constant_coefficient():
    H = 6
    K, _ = assemble_full(FemProblem(np.ones((2, 2)), H))
    i = 3 * (H + 1) + 3
    row = K.getrow(i).toarray().ravel()
    nbrs = [i + di * (H + 1) + dj for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    assert row[i] == pytest.approx(8 / 3, abs=1e-12)
    np.testing.assert_allclose(row[nbrs], -1 / 3, atol=1e-12)
    assert abs(row.sum()) <= 1e-12


def test_subcell_integration_sums_to_reference_element():
    ref = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6
    for r in (1, 2, 4):
        np.testing.assert_allclose(subcell_stiffness(r).sum(axis=(0, 1)), ref, atol=1e-14)


@pytest.mark.parametrize("E,H", [(8, 4), (4, 8), (8, 8), (16, 4)])
def test_symmetry_and_row_sums(E, H):
    A = gen_coefficient("random", E, seed=E + H)
    K, _ = assemble_full(FemProblem(A, H))
    assert abs(K - K.T).max() == 0.0
    assert np.abs(np.asarray(K.sum(axis=1))).max() <= 1e-12
    Ki, _ = assemble_stiffness(FemProblem(A, H))
    assert np.linalg.eigvalsh(Ki.toarray()).min() > 0


def test_unit_load_is_h_squared():
    H = 8
    _, b = assemble_stiffness(FemProblem(gen_coefficient("random", 16, seed=1), H))
    np.testing.assert_allclose(b, 1 / H ** 2, atol=1e-15)


def test_incompatible_grids_rejected():
    with pytest.raises(ConfigError):
        assemble_full(FemProblem(np.ones((6, 6)), 4))


def test_nonpositive_coefficient_rejected():
    with pytest.raises(ContractError):
        assemble_full(FemProblem(np.array([[1.0, 0.0], [1.0, 1.0]]), 4))


def test_fine_mesh_uses_containing_cell():
    # H multiple of E: each element sits inside one cell; a checker contrast on
    # E=2 must give the same element values as the cell it lies in
    A = np.array([[1.0, 100.0], [100.0, 1.0]])
    K4, _ = assemble_full(FemProblem(A, 4))
    # element (0, 0) in cell (0, 0): node 0 diagonal touches only that element
    assert K4[0, 0] == pytest.approx(2 / 3)
    # node 4 (top-right corner of row 0) belongs to element (0, 3) in cell (0, 1)
    assert K4[4, 4] == pytest.approx(100 * 2 / 3)


# ---------------------------------------------------------------- CG


def test_cg_two_by_two():
    import scipy.sparse as sp

    x = solve_cg(sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]]), np.array([1.0, 2.0]))
    np.testing.assert_allclose(x, [1 / 11, 7 / 11], atol=1e-10)


def test_cg_zero_rhs():
    import scipy.sparse as sp

    hist = []
    x = solve_cg(sp.identity(5, format="csr") * 2.0, np.zeros(5), callback=lambda x, r: hist.append(r))
    assert (x == 0).all() and hist == [0.0]


def test_cg_energy_error_non_increasing():
    K, b = assemble_stiffness(FemProblem(gen_coefficient("random", 32, seed=5), 16))
    exact = spla.spsolve(K.tocsc(), b)
    energy = []
    solve_cg(K, b, callback=lambda x, r: energy.append(np.sqrt((exact - x) @ (K @ (exact - x)))))
    e = np.array(energy)
    assert len(e) > 5
    assert (np.diff(e) <= 1e-12 * e[0]).all()


def test_cg_maxiter():
    K, b = assemble_stiffness(FemProblem(gen_coefficient("random", 16, seed=5), 16))
    with pytest.raises(ConvergenceError) as err:
        solve_cg(K, b, maxiter=3)
    assert err.value.residual > 1e-10


def test_cg_matches_direct_solve():
    K, b = assemble_stiffness(FemProblem(gen_coefficient("random", 8, seed=2), 4))
    np.testing.assert_allclose(solve_cg(K, b), np.linalg.solve(K.toarray(), b), atol=1e-10)


# ---------------------------------------------------------------- fem_solve


def test_zero_source_gives_zero():
    u = fem_solve(FemProblem(gen_coefficient("random", 8, seed=0), 8, Source("constant", 0.0)))
    assert (u.values == 0).all()


def test_manufactured_solution_converges_quadratically():
    e8, e16, e32 = (manufactured_error(H) for H in (8, 16, 32))
    assert 3.6 <= e8 / e16 <= 4.4
    assert np.log2(e8 / e16) >= 1.9 and np.log2(e16 / e32) >= 1.9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(8, 4), (8, 8), (8, 16), (16, 4)]))
def test_nonnegative_solution(seed, EH):
    E, H = EH
    u = fem_solve(FemProblem(gen_coefficient("random", E, seed=seed), H)).values
    assert u.min() >= -1e-12
    assert (u[0] == 0).all() and (u[-1] == 0).all() and (u[:, 0] == 0).all() and (u[:, -1] == 0).all()


# ---------------------------------------------------------------- datasets


def test_dataset_shapes_and_alpha_one(tmp_path):
    header, samples = build_samples(2, 8, 4, 1, seed=3)
    for s in samples:
        assert s.X.values.tobytes() == s.Y.values.tobytes()
    header, samples = build_samples(2, 32, 8, 2, seed=7)
    assert samples[0].Y.N == 17 and samples[0].X.N == 9
    assert header.y_min == min(s.Y.values.min() for s in samples)
    assert header.y_max == max(s.Y.values.max() for s in samples)


def test_full_scale_shape_arithmetic():
    from nhcsr.fem import DatasetHeader

    assert DatasetHeader(1, 128, 32, 16).n_fine == 513
    assert DatasetHeader(1, 128, 32, 32).n_fine == 1025
    assert DatasetHeader(1, 128, 32, 64).n_fine == 2049


def test_dataset_determinism(tmp_path):
    a, b = tmp_path / "a.nhcd", tmp_path / "b.nhcd"
    build_dataset(a, 2, 16, 4, 2, seed=9)
    build_dataset(b, 2, 16, 4, 2, seed=9)
    assert sha(a) == sha(b)


def test_dataset_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a.nhcd", tmp_path / "b.nhcd"
    build_dataset(a, 4, 16, 4, 2, seed=1, workers=1)
    build_dataset(b, 4, 16, 4, 2, seed=1, workers=2)
    assert sha(a) == sha(b)


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "d.nhcd"
    header, samples = build_samples(3, 16, 4, 2, pattern="mix", seed=4)
    write_dataset(path, header, samples)
    h2, back = load_dataset(path)
    assert (h2.E, h2.H, h2.alpha, h2.y_min, h2.y_max) == (16, 4, 2, header.y_min, header.y_max)
    for s, t in zip(samples, back):
        assert s.X.values.tobytes() == t.X.values.tobytes()
        assert s.Y.values.tobytes() == t.Y.values.tobytes()
        assert s.A.values.tobytes() == t.A.values.tobytes()


def test_corrupted_byte_rejected(tmp_path):
    path = tmp_path / "d.nhcd"
    header = build_dataset(path, 2, 8, 4, 2, seed=0)
    raw = bytearray(path.read_bytes())
    header_size = len(raw) - 2 * header.sample_nbytes()
    raw[header_size + header.sample_nbytes() + 100] ^= 0xFF  # inside the second sample
    path.write_bytes(bytes(raw))
    seen = []
    with pytest.raises(ChecksumError):
        for s in read_dataset(path):
            seen.append(s)
    assert len(seen) == 1
    with pytest.raises(ChecksumError):
        load_dataset(path)


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "d.nhcd"
    build_dataset(path, 1, 8, 4, 2, seed=0)
    raw = path.read_bytes()
    (tmp_path / "m.nhcd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "m.nhcd")
    (tmp_path / "t.nhcd").write_bytes(raw[:-10])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "t.nhcd")


def test_empty_dataset(tmp_path):
    path = tmp_path / "e.nhcd"
    build_dataset(path, 0, 8, 4, 2)
    header, samples = load_dataset(path)
    assert header.n_samples == 0 and samples == []


def test_incompatible_dataset_config():
    with pytest.raises(ConfigError):
        build_samples(1, 12, 8, 2)
