import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from compose_probe.embeddings import (
    EmbeddingMatrix,
    EmbeddingRecord,
    RecordKind,
    crop_key,
    image_key,
    l2_normalize,
    store_read,
    store_write,
    text_key,
    tokens_key,
)
from compose_probe.errors import (
    DegenerateInputError,
    StoreCorruptionError,
    StoreFormatError,
    StoreWriteError,
)


def record(key, data, kind=RecordKind.GLOBAL_TEXT, normalized=False):
    return EmbeddingRecord(
        key=key, kind=kind, matrix=EmbeddingMatrix.from_array(data, normalized=normalized)
    )


def test_single_record_file_size_arithmetic(tmp_path):
    path = tmp_path / "s.emb1"
    store_write(path, [record("k", [[1.0, 0.0]])])
    # header 4+4+8, record 4 + len("k") + 1 + 8 + 8 + 1 + 2*4
    assert path.stat().st_size == 16 + 4 + 1 + 1 + 16 + 1 + 8


def test_round_trip_structural_equality(tmp_path):
    path = tmp_path / "s.emb1"
    recs = [
        record("txt:a", [[1.0, 2.0, 3.0]]),
        record("img:b/patches", np.arange(12, dtype=np.float32).reshape(3, 4),
               kind=RecordKind.PATCH_SEQUENCE),
    ]
    store_write(path, recs)
    loaded = store_read(path)
    assert set(loaded) == {"txt:a", "img:b/patches"}
    for rec in recs:
        got = loaded[rec.key]
        assert got.kind == rec.kind
        assert got.matrix.rows == rec.matrix.rows
        assert np.array_equal(got.matrix.data, rec.matrix.data)


def test_duplicate_keys_rejected_at_write(tmp_path):
    recs = [record("k", [[1.0]]), record("k", [[2.0]])]
    with pytest.raises(StoreWriteError):
        store_write(tmp_path / "s.emb1", recs)


def test_truncated_file_is_a_corruption_error(tmp_path):
    path = tmp_path / "s.emb1"
    store_write(path, [record("key", np.ones((2, 8), np.float32), RecordKind.TOKEN_SEQUENCE)])
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(StoreCorruptionError):
        store_read(path)


def test_bad_magic_is_a_format_error(tmp_path):
    path = tmp_path / "s.emb1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(StoreFormatError):
        store_read(path)


def test_empty_store_round_trips(tmp_path):
    path = tmp_path / "s.emb1"
    store_write(path, [])
    assert store_read(path) == {}


@settings(max_examples=30, deadline=None)
@given(
    arrays=st.lists(
        npst.arrays(
            dtype=np.float32,
            shape=st.tuples(st.integers(1, 5), st.integers(1, 8)),
            elements=st.floats(-1e6, 1e6, width=32),
        ),
        min_size=1,
        max_size=4,
    )
)
def test_fuzzed_round_trip_is_bitwise_exact(tmp_path_factory, arrays):
    path = tmp_path_factory.mktemp("emb") / "s.emb1"
    recs = [
        record(f"txt:{i}", arr, RecordKind.TOKEN_SEQUENCE) for i, arr in enumerate(arrays)
    ]
    store_write(path, recs)
    loaded = store_read(path)
    for i, arr in enumerate(arrays):
        got = loaded[f"txt:{i}"].matrix.data
        assert got.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_global_records_must_have_one_row():
    with pytest.raises(StoreWriteError):
        record("img:x", np.ones((2, 4), np.float32), RecordKind.GLOBAL_IMAGE)


def test_l2_normalize_three_four_five():
    out = l2_normalize(EmbeddingMatrix.from_array([[3.0, 4.0]]))
    assert np.allclose(out.data, [[0.6, 0.8]])
    assert out.normalized


def test_l2_normalize_is_idempotent():
    m = EmbeddingMatrix.from_array(np.random.default_rng(0).normal(size=(5, 7)))
    once = l2_normalize(m)
    twice = l2_normalize(once)
    assert np.allclose(once.data, twice.data, atol=1e-6)


def test_l2_normalize_rejects_zero_rows():
    with pytest.raises(DegenerateInputError):
        l2_normalize(EmbeddingMatrix.from_array([[0.0, 0.0]]))


def test_non_finite_matrix_rejected():
    with pytest.raises(DegenerateInputError):
        EmbeddingMatrix.from_array([[np.inf, 1.0]])


def test_key_scheme_is_stable():
    assert image_key("000123") == "img:000123"
    assert crop_key("000123", 1, 2, 3, 4) == "img:000123/crop:1,2,3,4"
    assert text_key("abc") == text_key("abc")
    assert text_key("abc") != text_key("abd")
    assert tokens_key("abc").endswith("/tokens")
