"""Instance extraction tests, checked against brute-force voxel scans."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from spheroidsynth.postproc import (
    PostprocConfig,
    binarize,
    borders_to_binary_membrane,
    split_and_assign,
)
from spheroidsynth.volume import IntensityVolume, LabelVolume


def lvol(data, spacing=(1.0, 1.0, 1.0)):
    return LabelVolume.from_array(np.asarray(data, dtype=np.uint32), spacing)


def ivol(data, spacing=(1.0, 1.0, 1.0)):
    return IntensityVolume.from_array(np.asarray(data), spacing)


def membrane_oracle(labels: np.ndarray, thickness: int) -> np.ndarray:
    """Direct scan: differing label anywhere within an L1 ball of radius t."""
    offsets = [
        off
        for off in itertools.product(range(-thickness, thickness + 1), repeat=3)
        if 0 < sum(abs(c) for c in off) <= thickness
    ]
    out = np.zeros(labels.shape, dtype=np.uint8)
    nz, ny, nx = labels.shape
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                for dz, dy, dx in offsets:
                    zz, yy, xx = z + dz, y + dy, x + dx
                    if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                        if labels[zz, yy, xx] != labels[z, y, x]:
                            out[z, y, x] = 1
                            break
    return out


small_labels = arrays(
    np.uint32,
    st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)),
    elements=st.integers(0, 3),
)


class TestMembrane:
    def test_all_medium_is_all_zero(self):
        out = borders_to_binary_membrane(lvol(np.zeros((4, 4, 4))), 1)
        np.testing.assert_array_equal(out.data, 0)
        assert out.data.dtype == np.uint8

    def test_uniform_single_label_is_all_zero(self):
        out = borders_to_binary_membrane(lvol(np.full((4, 4, 4), 2)), 2)
        np.testing.assert_array_equal(out.data, 0)

    def test_cube_shell_marked_center_not(self):
        data = np.zeros((7, 7, 7), dtype=np.uint32)
        data[2:5, 2:5, 2:5] = 1
        out = borders_to_binary_membrane(lvol(data), 1).data
        shell = (data == 1).copy()
        shell[3, 3, 3] = False
        assert out[3, 3, 3] == 0
        assert np.all(out[shell] == 1)
        # medium right next to the cube differs from it, so it is marked too
        assert out[1, 3, 3] == 1 and out[5, 3, 3] == 1

    def test_matches_scan_oracle_on_cube(self):
        data = np.zeros((7, 7, 7), dtype=np.uint32)
        data[2:5, 2:5, 2:5] = 1
        for t in (1, 2, 3):
            got = borders_to_binary_membrane(lvol(data), t).data
            np.testing.assert_array_equal(got, membrane_oracle(data, t))

    def test_two_abutting_cells_marked_on_both_sides(self):
        data = np.zeros((3, 3, 6), dtype=np.uint32)
        data[:, :, :3] = 1
        data[:, :, 3:] = 2
        out = borders_to_binary_membrane(lvol(data), 1).data
        np.testing.assert_array_equal(out, membrane_oracle(data, 1))
        assert np.all(out[:, :, 2] == 1) and np.all(out[:, :, 3] == 1)
        assert np.all(out[:, :, 0] == 0) and np.all(out[:, :, 5] == 0)

    @given(small_labels, st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_matches_scan_oracle(self, data, t):
        got = borders_to_binary_membrane(lvol(data), t).data
        np.testing.assert_array_equal(got, membrane_oracle(data, t))

    @given(small_labels)
    @settings(max_examples=25, deadline=None)
    def test_foreground_grows_with_thickness(self, data):
        prev = borders_to_binary_membrane(lvol(data), 1).data
        for t in (2, 3):
            cur = borders_to_binary_membrane(lvol(data), t).data
            assert np.all(cur[prev == 1] == 1)
            prev = cur

    def test_volume_edge_is_not_a_border(self):
        # a cell hugging the volume face gets no wall from the outside
        data = np.full((3, 3, 3), 5, dtype=np.uint32)
        out = borders_to_binary_membrane(lvol(data), 1).data
        np.testing.assert_array_equal(out, 0)

    def test_rejects_bad_thickness(self):
        with pytest.raises(ValueError):
            borders_to_binary_membrane(lvol(np.zeros((2, 2, 2))), 0)


class TestBinarize:
    def test_all_below_is_all_zero(self):
        out = binarize(ivol(np.full((3, 3, 3), 0.2)), 0.5)
        np.testing.assert_array_equal(out.data, 0)

    def test_binary_input_at_half_is_identity(self):
        rng = np.random.default_rng(0)
        data = (rng.random((4, 4, 4)) > 0.5).astype(np.float32)
        out = binarize(ivol(data), 0.5)
        np.testing.assert_array_equal(out.data, data.astype(np.uint8))

    def test_float_matches_comparison_oracle(self):
        rng = np.random.default_rng(1)
        data = rng.random((5, 5, 5))
        out = binarize(ivol(data), 0.37)
        np.testing.assert_array_equal(out.data, (data >= 0.37).astype(np.uint8))

    def test_threshold_is_inclusive(self):
        out = binarize(ivol(np.array([[[0.5, 0.4999]]])), 0.5)
        np.testing.assert_array_equal(out.data, [[[1, 0]]])

    def test_integer_data_uses_fraction_of_dtype_max(self):
        data = np.array([[[32767, 32768, 65535]]], dtype=np.uint16)
        out = binarize(ivol(data), 0.5)
        np.testing.assert_array_equal(out.data, [[[0, 1, 1]]])

    def test_integer_data_matches_comparison_oracle(self):
        rng = np.random.default_rng(2)
        data = rng.integers(0, 256, size=(4, 4, 4), dtype=np.uint8)
        out = binarize(ivol(data), 0.3)
        np.testing.assert_array_equal(out.data, (data >= 0.3 * 255).astype(np.uint8))

    def test_integer_data_rejects_absolute_threshold(self):
        with pytest.raises(ValueError):
            binarize(ivol(np.zeros((2, 2, 2), dtype=np.uint8)), 128)

    def test_rejects_nonpositive_threshold(self):
        with pytest.raises(ValueError):
            binarize(ivol(np.zeros((2, 2, 2))), 0.0)


def two_cell_fixture():
    """Two abutting cells with a nucleus blob spanning their interface."""
    cells = np.zeros((5, 7, 9), dtype=np.uint32)
    cells[1:4, 1:6, 1:4] = 1
    cells[1:4, 1:6, 4:8] = 2
    nuclei = np.zeros(cells.shape, dtype=np.uint8)
    nuclei[1:4, 2:5, 2:7] = 1
    return lvol(cells), ivol(nuclei)


class TestSplitAndAssign:
    def test_empty_nuclei_gives_empty_output(self):
        cells, _ = two_cell_fixture()
        empty = ivol(np.zeros(cells.shape, dtype=np.uint8))
        out = split_and_assign(empty, empty, cells, opening_radius=0)
        np.testing.assert_array_equal(out.data, 0)

    def test_blob_over_medium_is_removed(self):
        cells = lvol(np.zeros((4, 4, 4)))
        nuclei = np.zeros((4, 4, 4), dtype=np.uint8)
        nuclei[1:3, 1:3, 1:3] = 1
        out = split_and_assign(ivol(nuclei), ivol(np.zeros_like(nuclei)), cells, 0)
        np.testing.assert_array_equal(out.data, 0)

    def test_membrane_splits_blob_into_two_cell_labels(self):
        cells, nuclei = two_cell_fixture()
        membrane = borders_to_binary_membrane(cells, 1)
        out = split_and_assign(nuclei, membrane, cells, opening_radius=0)
        assert out.labels() == [1, 2]
        # component oracle: the post-split foreground must fall apart into
        # pieces that each sit inside exactly one cell
        n_comp_before = ndimage.label(nuclei.data)[1]
        comp, n_comp = ndimage.label(out.data > 0)
        assert n_comp_before == 1 and n_comp == 2
        for c in range(1, n_comp + 1):
            under = np.unique(out.data[comp == c])
            assert len(under) == 1

    def test_output_labels_subset_of_cells(self):
        cells, nuclei = two_cell_fixture()
        membrane = borders_to_binary_membrane(cells, 1)
        out = split_and_assign(nuclei, membrane, cells, opening_radius=1)
        assert set(out.labels()) <= set(cells.labels())

    def test_output_foreground_subset_of_input(self):
        cells, nuclei = two_cell_fixture()
        membrane = borders_to_binary_membrane(cells, 1)
        out = split_and_assign(nuclei, membrane, cells, opening_radius=1)
        assert np.all(nuclei.data[out.data > 0] == 1)

    def test_radius_zero_empty_membrane_is_masking(self):
        cells, nuclei = two_cell_fixture()
        zero = ivol(np.zeros(cells.shape, dtype=np.uint8))
        out = split_and_assign(nuclei, zero, cells, opening_radius=0)
        np.testing.assert_array_equal(out.data, np.where(nuclei.data > 0, cells.data, 0))

    def test_opening_removes_thin_artifacts(self):
        cells = lvol(np.full((5, 5, 9), 3))
        nuclei = np.zeros((5, 5, 9), dtype=np.uint8)
        nuclei[1:4, 1:4, 1:4] = 1   # chunky blob survives
        nuclei[2, 2, 5:8] = 1       # one-voxel filament does not
        zero = ivol(np.zeros(cells.shape, dtype=np.uint8))
        out = split_and_assign(ivol(nuclei), zero, cells, opening_radius=1)
        assert np.all(out.data[2, 2, 5:8] == 0)
        assert out.data[2, 2, 2] == 3

    def test_rerunning_on_own_output_is_fixed_point(self):
        cells, nuclei = two_cell_fixture()
        membrane = borders_to_binary_membrane(cells, 1)
        out = split_and_assign(nuclei, membrane, cells, opening_radius=1)
        again = split_and_assign(
            ivol((out.data > 0).astype(np.uint8)), membrane, cells, opening_radius=0
        )
        np.testing.assert_array_equal(again.data, out.data)

    def test_geometry_mismatch_rejected(self):
        cells, nuclei = two_cell_fixture()
        other = ivol(np.zeros((2, 2, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            split_and_assign(nuclei, other, cells, 0)
        spaced = IntensityVolume.from_array(
            np.zeros(cells.shape, dtype=np.uint8), (2.0, 1.0, 1.0)
        )
        with pytest.raises(ValueError):
            split_and_assign(nuclei, spaced, cells, 0)

    def test_nonbinary_input_rejected(self):
        cells, nuclei = two_cell_fixture()
        bad = ivol(np.full(cells.shape, 2, dtype=np.uint8))
        with pytest.raises(ValueError):
            split_and_assign(bad, nuclei, cells, 0)
        with pytest.raises(ValueError):
            split_and_assign(nuclei, ivol(np.zeros(cells.shape, dtype=np.float32)), cells, 0)


class TestConfig:
    def test_defaults(self):
        cfg = PostprocConfig()
        assert cfg.binarize_threshold == 0.5
        assert cfg.opening_radius == 1
        assert cfg.membrane_thickness == 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"binarize_threshold": 0.0},
            {"binarize_threshold": -1.0},
            {"binarize_threshold": float("nan")},
            {"opening_radius": -1},
            {"membrane_thickness": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            PostprocConfig(**kwargs)

    def test_round_trips_through_dict(self):
        cfg = PostprocConfig(binarize_threshold=0.4, opening_radius=2, membrane_thickness=3)
        assert PostprocConfig(**cfg.to_dict()) == cfg
