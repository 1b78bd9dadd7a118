from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from diffuir import imageio
from diffuir.degradations import DatasetSpec, make_split
from diffuir.errors import ConfigError, MissingFileError


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.sampled_from([1, 3]), h=st.integers(1, 20),
       w=st.integers(1, 20))
def test_ppm_round_trip_within_one_level(tmp_path_factory, seed, c, h, w):
    img = np.random.default_rng(seed).random((c, h, w))
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    imageio.write_ppm(path, img)
    back = imageio.read_ppm(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 255
    # a second trip is lossless
    imageio.write_ppm(path, back)
    np.testing.assert_array_equal(imageio.read_ppm(path), back)


def test_p6_header_and_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n# another\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    img = imageio.read_ppm(p)
    np.testing.assert_array_equal(img[:, 0, 0], [1, 0, 0])
    np.testing.assert_array_equal(img[:, 0, 1], [0, 0, 1])
    imageio.write_ppm(tmp_path / "o.ppm", img)
    assert (tmp_path / "o.ppm").read_bytes().startswith(b"P6\n2 1\n255\n")


def test_ppm_errors(tmp_path):
    with pytest.raises(MissingFileError):
        imageio.read_ppm(tmp_path / "none.ppm")
    (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ConfigError):
        imageio.read_ppm(tmp_path / "b.ppm")
    (tmp_path / "d.ppm").write_bytes(b"P6\n1 1\n65535\n" + b"\0" * 6)
    with pytest.raises(ConfigError):
        imageio.read_ppm(tmp_path / "d.ppm")
    with pytest.raises(ConfigError):
        imageio.write_ppm(tmp_path / "e.ppm", np.zeros((2, 4, 4)))


def test_pair_layout(tmp_path):
    samples = make_split(DatasetSpec(samples_per_task=2, image_size=8), "test")
    imageio.save_pairs(tmp_path, "test", samples)
    assert (tmp_path / "test" / "dehaze" / "00001_degraded.ppm").exists()
    loaded = imageio.load_pairs(tmp_path, "test")
    assert [s.task for s in loaded] == [s.task for s in samples]
    for a, b in zip(loaded, samples):
        assert np.abs(a.Iin - b.Iin).max() <= 1 / 255
        np.testing.assert_array_equal(a.Ires, a.Iin - a.I0)
    with pytest.raises(MissingFileError):
        imageio.load_pairs(tmp_path, "train")
