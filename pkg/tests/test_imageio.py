"""File format round trips and malformed-input handling."""
import numpy as np
import pytest

from softslic import LabelMap
from softslic.imageio import (
    FileFormatError,
    load_image,
    overlay_boundaries,
    read_flow_csv,
    read_label_csv,
    read_label_pgm,
    save_image_png,
    write_flow_csv,
    write_label_csv,
    write_label_pgm,
)


def label_map(lab2d):
    lab2d = np.asarray(lab2d, dtype=np.int64)
    return LabelMap(labels=lab2d.ravel(), n_w=lab2d.shape[1],
                    n_h=lab2d.shape[0])


class TestImages:
    def test_png_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (7, 9, 3)).astype(np.uint8)
        save_image_png(tmp_path / "img.png", img)
        assert np.array_equal(load_image(tmp_path / "img.png"), img)

    def test_binary_ppm(self, tmp_path, rng):
        img = rng.integers(0, 256, (4, 5, 3)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n5 4\n255\n" + img.tobytes())
        assert np.array_equal(load_image(path), img)

    def test_alpha_stripped(self, tmp_path, rng):
        from PIL import Image

        rgba = rng.integers(0, 256, (3, 3, 4)).astype(np.uint8)
        rgba[..., 3] = 255
        Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
        out = load_image(tmp_path / "a.png")
        assert out.shape == (3, 3, 3)
        assert np.array_equal(out, rgba[..., :3])

    def test_unreadable_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "missing.png")
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image at all")
        with pytest.raises(OSError):
            load_image(bad)


class TestPgm:
    def test_round_trip_16bit(self, tmp_path, rng):
        lab = rng.integers(0, 40000, (6, 11))
        write_label_pgm(tmp_path / "l.pgm", label_map(lab))
        assert np.array_equal(read_label_pgm(tmp_path / "l.pgm"), lab)

    def test_header_is_16bit_big_endian(self, tmp_path):
        lab = np.array([[1, 2], [3, 65535]])
        write_label_pgm(tmp_path / "l.pgm", label_map(lab))
        blob = (tmp_path / "l.pgm").read_bytes()
        assert blob.startswith(b"P5\n2 2\n65535\n")
        assert blob[-2:] == b"\xff\xff"

    def test_reads_8bit_and_comments(self, tmp_path):
        blob = b"P5\n# a comment\n3 2\n255\n" + bytes([0, 1, 2, 3, 4, 5])
        (tmp_path / "c.pgm").write_bytes(blob)
        assert np.array_equal(read_label_pgm(tmp_path / "c.pgm"),
                              [[0, 1, 2], [3, 4, 5]])

    def test_rejects_overflow_ids(self, tmp_path):
        with pytest.raises(FileFormatError):
            write_label_pgm(tmp_path / "l.pgm", label_map([[70000]]))

    @pytest.mark.parametrize("blob", [
        b"P6\n2 2\n255\n" + b"\x00" * 12,
        b"P5\n2 2\n65535\n" + b"\x00" * 5,
        b"P5\nxx yy\n255\n",
    ])
    def test_rejects_malformed(self, tmp_path, blob):
        (tmp_path / "bad.pgm").write_bytes(blob)
        with pytest.raises(FileFormatError):
            read_label_pgm(tmp_path / "bad.pgm")


class TestCsv:
    def test_label_round_trip(self, tmp_path, rng):
        lab = rng.integers(0, 99, (5, 4))
        write_label_csv(tmp_path / "l.csv", label_map(lab))
        assert np.array_equal(read_label_csv(tmp_path / "l.csv"), lab)

    def test_label_rejects_ragged(self, tmp_path):
        (tmp_path / "r.csv").write_text("1,2,3\n4,5\n")
        with pytest.raises(FileFormatError):
            read_label_csv(tmp_path / "r.csv")

    def test_flow_round_trip(self, tmp_path, rng):
        flow = rng.normal(size=(3, 5, 2))
        write_flow_csv(tmp_path / "f.csv", flow)
        assert np.array_equal(read_flow_csv(tmp_path / "f.csv"), flow)

    def test_flow_header_carries_dims(self, tmp_path):
        write_flow_csv(tmp_path / "f.csv", np.zeros((2, 3, 2)))
        first = (tmp_path / "f.csv").read_text().splitlines()[0]
        assert first == "3,2"

    def test_flow_rejects_wrong_row_count(self, tmp_path):
        (tmp_path / "f.csv").write_text("2,2\n0.0,0.0\n")
        with pytest.raises(FileFormatError):
            read_flow_csv(tmp_path / "f.csv")


class TestOverlay:
    def test_boundary_pixels_painted(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        lab = np.zeros((4, 4), dtype=np.int64)
        lab[:, 2:] = 1
        out = overlay_boundaries(img, label_map(lab), color=(255, 0, 0))
        assert (out[:, 1:3] == [255, 0, 0]).all()
        assert (out[:, 0] == 0).all() and (out[:, 3] == 0).all()
