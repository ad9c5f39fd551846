import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icount.gridio import (
    FormatError,
    load_dgrid,
    load_fmap,
    load_lmap,
    rle_decode_rows,
    rle_encode_rows,
    save_dgrid,
    save_fmap,
    save_lmap,
)
from icount.segmentation import FOREGROUND, Region


class TestBinaryFormats:
    def test_dgrid_roundtrip(self, tmp_path, rng):
        grid = rng.uniform(0, 5, size=(12, 17))
        path = tmp_path / "g.dgrid"
        save_dgrid(path, grid)
        back = load_dgrid(path)
        np.testing.assert_allclose(back, grid, rtol=1e-6)
        assert back.dtype == np.float64

    def test_dgrid_magic_checked(self, tmp_path):
        path = tmp_path / "bogus.dgrid"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_dgrid(path)

    def test_dgrid_length_checked(self, tmp_path):
        path = tmp_path / "short.dgrid"
        path.write_bytes(b"DG01" + (8).to_bytes(4, "little") + (8).to_bytes(4, "little") + b"\x00" * 10)
        with pytest.raises(FormatError):
            load_dgrid(path)

    def test_lmap_roundtrip(self, tmp_path, rng):
        labels = rng.integers(0, 40, size=(9, 14)).astype(np.int32)
        path = tmp_path / "l.lmap"
        save_lmap(path, labels)
        np.testing.assert_array_equal(load_lmap(path), labels)

    def test_lmap_rejects_negative(self, tmp_path):
        with pytest.raises(FormatError):
            save_lmap(tmp_path / "bad.lmap", np.full((4, 4), -1))

    def test_fmap_roundtrip(self, tmp_path, rng):
        stack = rng.normal(size=(6, 7, 11))
        path = tmp_path / "f.fm"
        save_fmap(path, stack)
        np.testing.assert_allclose(load_fmap(path), stack, atol=1e-6)


class TestRegionTable:
    def test_json_shape(self):
        from icount.gridio import regions_to_json
        import json

        regions = [
            Region(id=0, pixels=np.zeros((3, 2), np.int32), sum=1.5, area=3, kind=FOREGROUND)
        ]
        data = json.loads(regions_to_json(regions))
        assert data == {"regions": [{"id": 0, "sum": 1.5, "area": 3, "kind": "foreground"}]}


class TestRle:
    def test_simple_rows(self):
        labels = np.array([[1, 1, 2], [3, 3, 3]])
        rows = rle_encode_rows(labels)
        assert rows == [[[1, 2], [2, 1]], [[3, 3]]]
        np.testing.assert_array_equal(rle_decode_rows(rows, 3), labels)

    def test_bad_run_length_rejected(self):
        with pytest.raises(FormatError):
            rle_decode_rows([[[1, 2]]], 3)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=40),
            min_size=1,
            max_size=8,
        ).filter(lambda rows: len({len(r) for r in rows}) == 1)
    )
    def test_roundtrip(self, rows):
        labels = np.asarray(rows, dtype=np.int32)
        encoded = rle_encode_rows(labels)
        np.testing.assert_array_equal(rle_decode_rows(encoded, labels.shape[1]), labels)
