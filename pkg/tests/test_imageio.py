"""
Tests for PPM/PGM files and dataset manifests.
"""

import numpy as np
import pytest
from PIL import Image

from cycleseg.errors import FormatError, IoError
from cycleseg.imageio import (
    MANIFEST_NAME,
    load_dataset,
    read_pgm,
    read_ppm,
    save_dataset,
    write_pgm,
    write_ppm,
)
from cycleseg.synthdata import SceneSpec, generate


def test_ppm_header(tmp_path, rng):
    path = write_ppm(tmp_path / "img.ppm", rng.uniform(size=(3, 64, 64)))
    data = path.read_bytes()
    assert data.startswith(b"P6\n64 64\n255\n")
    assert len(data) == len(b"P6\n64 64\n255\n") + 3 * 64 * 64


def test_ppm_round_trip_is_quantized(tmp_path, rng):
    image = rng.uniform(size=(3, 8, 5))
    back = read_ppm(write_ppm(tmp_path / "img.ppm", image))
    assert back.shape == (3, 8, 5)
    assert np.array_equal(back, np.rint(image * 255) / 255)
    assert np.abs(back - image).max() <= 0.5 / 255 + 1e-12


def test_mask_round_trip(tmp_path, rng):
    mask = (rng.uniform(size=(7, 9)) > 0.5).astype(np.uint8)
    assert np.array_equal(read_pgm(write_pgm(tmp_path / "m.pgm", mask)), mask)


def test_black_mask_size(tmp_path):
    path = write_pgm(tmp_path / "m.pgm", np.zeros((64, 64), dtype=np.uint8))
    assert path.stat().st_size == len(b"P5\n64 64\n255\n") + 4096


def test_non_binary_mask_rejected(tmp_path):
    with pytest.raises(FormatError):
        write_pgm(tmp_path / "m.pgm", np.full((2, 2), 3))
    path = tmp_path / "gray.pgm"
    Image.fromarray(np.full((2, 2), 128, dtype=np.uint8)).save(path, format="PPM")
    with pytest.raises(FormatError):
        read_pgm(path)


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"not an image at all")
    with pytest.raises(FormatError):
        read_ppm(path)


def test_wrong_kind(tmp_path):
    path = write_pgm(tmp_path / "m.pgm", np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(FormatError):
        read_ppm(path)


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_pgm(tmp_path / "absent.pgm")


class TestDataset:
    def test_round_trip(self, tmp_path):
        spec = SceneSpec(size=16)
        groups = [generate(spec, 2, seed=1), generate(spec, 3, seed=2)]
        manifest = save_dataset(groups, tmp_path / "train")
        assert manifest.name == MANIFEST_NAME
        lines = manifest.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].split("\t")[:2] == [f"g0000_{groups[0].common_class}/img_0.ppm",
                                           f"g0000_{groups[0].common_class}/mask_0.pgm"]

        loaded = load_dataset(tmp_path / "train")
        assert [len(g.images) for g in loaded] == [2, 3]
        for original, restored in zip(groups, loaded):
            assert restored.common_class == original.common_class
            for m1, m2 in zip(original.masks, restored.masks):
                assert np.array_equal(m1, m2)
            for i1, i2 in zip(original.images, restored.images):
                assert np.array_equal(np.rint(i1 * 255) / 255, i2)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IoError):
            load_dataset(tmp_path)
