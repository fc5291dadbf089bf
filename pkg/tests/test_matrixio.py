import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bootpca.matrixio import (HEADER_SIZE, MatrixFormatError, TallMatrix, default_block_rows,
                              export_csv, import_csv, read_header, read_matrix, read_vector,
                              write_matrix, write_vector)


def test_single_element_payload(tmp_path):
    path = tmp_path / "one.bpca"
    write_matrix(TallMatrix.from_array([[3.5]]), path)
    raw = path.read_bytes()
    assert raw[:4] == b"BPCA"
    assert raw[HEADER_SIZE:] == struct.pack("<d", 3.5)
    assert read_header(path).block_rows == 1


def test_header_layout(tmp_path):
    path = tmp_path / "m.bpca"
    write_matrix(TallMatrix(np.zeros((5, 2)), 2), path)
    raw = path.read_bytes()
    magic, version, p, n, br, et, lay = struct.unpack("<4sIQQQBB", raw[:34])
    assert (magic, version, p, n, br, et, lay) == (b"BPCA", 1, 5, 2, 2, 0, 0)
    assert raw[34:40] == bytes(6)
    assert len(raw) == HEADER_SIZE + 5 * 2 * 8


def test_block_heights(tmp_path):
    m = TallMatrix(np.arange(10.0).reshape(5, 2), 2)
    assert [b.shape[0] for _, b in m.blocks()] == [2, 2, 1]
    path = tmp_path / "m.bpca"
    write_matrix(m, path)
    back = read_matrix(path)
    assert back.block_rows == 2
    assert [b.shape[0] for _, b in back.blocks()] == [2, 2, 1]
    assert [s for s, _ in back.blocks()] == [0, 2, 4]


@pytest.mark.parametrize("lazy", [False, True])
def test_roundtrip_bit_exact(tmp_path, lazy):
    arr = np.random.default_rng(11).standard_normal((100, 7))
    path = tmp_path / "r.bpca"
    write_matrix(TallMatrix(arr.copy(), 13), path)
    back = read_matrix(path, lazy=lazy).to_array()
    assert back.tobytes() == arr.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "m.bpca"
    write_matrix(TallMatrix.from_array([[1.0, 2.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(MatrixFormatError, match="bad magic"):
        read_matrix(path)


def test_bad_version(tmp_path):
    path = tmp_path / "m.bpca"
    write_matrix(TallMatrix.from_array([[1.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(MatrixFormatError, match="version"):
        read_matrix(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.bpca"
    write_matrix(TallMatrix(np.ones((4, 3))), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(MatrixFormatError, match="truncated"):
        read_matrix(path)


def test_non_finite_rejected(tmp_path):
    with pytest.raises(MatrixFormatError, match="non-finite"):
        TallMatrix.from_array([[1.0, np.nan]])
    path = tmp_path / "m.bpca"
    write_matrix(TallMatrix.from_array([[1.0, 2.0]]), path)
    raw = bytearray(path.read_bytes())
    raw[HEADER_SIZE:HEADER_SIZE + 8] = struct.pack("<d", np.inf)
    path.write_bytes(bytes(raw))
    with pytest.raises(MatrixFormatError, match="non-finite"):
        read_matrix(path)
    with pytest.raises(MatrixFormatError, match="non-finite"):
        read_matrix(path, lazy=True).to_array()


def test_csv_orientations(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("1,2\n3,4\n")
    cols = import_csv(path, "subjects-as-columns").to_array()
    rows = import_csv(path, "subjects-as-rows").to_array()
    np.testing.assert_array_equal(cols, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(rows, [[1, 3], [2, 4]])


def test_csv_errors(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2,3\n4,5\n")
    with pytest.raises(MatrixFormatError, match="line 2"):
        import_csv(ragged)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,x\n")
    with pytest.raises(MatrixFormatError, match="unparseable"):
        import_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(MatrixFormatError, match="empty"):
        import_csv(empty)


def test_csv_skip_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("s1,s2\n1.5,2\n")
    np.testing.assert_array_equal(import_csv(path, skip_header=True).to_array(), [[1.5, 2]])


def test_csv_export_roundtrip(tmp_path):
    arr = np.random.default_rng(2).standard_normal((9, 4)) * 1e3
    export_csv(arr, tmp_path / "x.csv")
    back = import_csv(tmp_path / "x.csv").to_array()
    assert back.tobytes() == arr.tobytes()


def test_vector_roundtrip(tmp_path):
    v = np.array([1.0, -2.5, 1e-300])
    write_vector(v, tmp_path / "v.vec")
    raw = (tmp_path / "v.vec").read_bytes()
    assert struct.unpack("<Q", raw[:8]) == (3,)
    assert read_vector(tmp_path / "v.vec").tobytes() == v.tobytes()


def test_default_block_rows():
    assert default_block_rows(10, 4) == 10
    assert default_block_rows(10**9, 1000) == 2**28 // 8000


def test_block_reads_counter():
    m = TallMatrix(np.zeros((10, 2)), 3)
    list(m.blocks())
    assert m.block_reads == 4


shapes = st.tuples(st.integers(1, 12), st.integers(1, 5))


@given(shapes, st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_block_iteration_visits_rows_once(shape, br, seed):
    p, n = shape
    br = min(br, p)
    arr = np.random.default_rng(seed).standard_normal((p, n))
    m = TallMatrix(arr, br)
    starts, parts = zip(*m.blocks())
    assert list(starts) == sorted(starts)
    np.testing.assert_array_equal(np.vstack(parts), arr)


@given(shapes, st.integers(0, 2**32 - 1))
def test_csv_orientation_transpose_property(tmp_path_factory, shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape)
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    export_csv(arr, path)
    a = import_csv(path, "subjects-as-columns").to_array()
    b = import_csv(path, "subjects-as-rows").to_array()
    assert a.tobytes() == np.ascontiguousarray(b.T).tobytes()
