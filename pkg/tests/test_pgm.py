import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floorloc.errors import InconsistentDims, MalformedFile, ZeroArea
from floorloc.pgm import heatmap_pixels, read_pgm, write_pgm


class TestPGM:
    def test_comments_and_whitespace(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_text("P2\n# made by hand\n3 2\n# max\n9\n0 1 2\n 3 4   9\n")
        pixels, maxval = read_pgm(p)
        assert maxval == 9
        np.testing.assert_array_equal(pixels, [[0, 1, 2], [3, 4, 9]])

    @pytest.mark.parametrize(
        "text, err",
        [
            ("P5\n1 1\n255\n0\n", MalformedFile),
            ("P2\n2 2\n255\n0 0 0\n", InconsistentDims),
            ("P2\n0 3\n255\n", ZeroArea),
            ("P2\n1 1\n255\n300\n", MalformedFile),
            ("P2\n1 1\n255\nx\n", MalformedFile),
        ],
    )
    def test_errors(self, tmp_path, text, err):
        p = tmp_path / "bad.pgm"
        p.write_text(text)
        with pytest.raises(err):
            read_pgm(p)

    @given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 255)))
    def test_roundtrip(self, tmp_path_factory, pixels):
        p = tmp_path_factory.mktemp("pgm") / "x.pgm"
        write_pgm(p, pixels)
        back, maxval = read_pgm(p)
        np.testing.assert_array_equal(back, pixels)
        assert maxval == 255


class TestHeatmap:
    def test_scaling_and_flip(self):
        v = np.array([[0.0, 1.0], [2.0, 4.0]])
        # row 0 is lowest y, so it ends up at the bottom of the image
        np.testing.assert_array_equal(heatmap_pixels(v), [[128, 255], [0, 64]])

    def test_non_finite_and_constant(self):
        np.testing.assert_array_equal(heatmap_pixels(np.array([[np.nan, 3.0]])), [[0, 0]])
        np.testing.assert_array_equal(heatmap_pixels(np.full((2, 2), -np.inf)), np.zeros((2, 2)))
