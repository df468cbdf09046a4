import numpy as np
import pytest

from errors import ConfigError, MalformedCsv
from trainer.datasets import load_tiny_images, make_blobs_dataset, make_dataset, make_two_moons


def write(tmp_path, text, name="images.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_blobs_are_balanced_and_separated():
    data = make_blobs_dataset(n=200, classes=2, sep=4.0)
    assert len(data) == 200
    counts = np.bincount(data.y)
    assert abs(counts[0] - counts[1]) <= 1
    centers = np.stack([data.x[data.y == c].mean(axis=0) for c in range(2)])
    assert np.linalg.norm(centers[0] - centers[1]) == pytest.approx(4.0, abs=0.6)


def test_two_moons_is_deterministic():
    a = make_two_moons(n=400, noise=0.1, seed=3)
    b = make_two_moons(n=400, noise=0.1, seed=3)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.y.tobytes() == b.y.tobytes()
    assert a.input_shape == (2,)


def test_split_is_stratified():
    data = make_two_moons(n=400, seed=0)
    train, test = data.split(0.25, seed=0)
    assert len(train) == 300 and len(test) == 100
    assert np.bincount(test.y).tolist() == [50, 50]


def test_zero_eval_fraction_reuses_training_set():
    data = make_two_moons(n=40)
    train, test = data.split(0.0)
    assert train is data and test is data


def test_tiny_images_valid_csv(tmp_path):
    path = write(tmp_path, "label,px0,px1,px2,px3\n0,0.0,0.5,1.0,0.25\n1,1,1,0,0\n2,0.1,0.2,0.3,0.4\n")
    data = load_tiny_images(path, shape=(2, 2, 1))
    assert len(data) == 3
    assert data.x.shape == (3, 2, 2, 1)
    assert data.input_shape == (2, 2, 1)
    assert data.num_classes == 3
    assert data.x[0, 0, 1, 0] == 0.5


@pytest.mark.parametrize("text, line", [
    ("label,px0,px1\n0,0.1,0.2\n1,0.3,x\n", 3),
    ("label,px0,px1\n0,0.1,0.2\n-1,0.3,0.4\n", 3),
    ("label,px0,px1\n0.5,0.1,0.2\n", 2),
    ("label,px0,px1\n0,0.1,1.5\n", 2),
    ("lbl,px0,px1\n0,0.1,0.2\n", 1),
    ("label,px0,px1\n0,0.1,0.2\n1,0.1,0.2,0.3\n", 3),
    ("label,px0,px1\n", 2),
    ("", 1),
])
def test_tiny_images_reports_the_bad_line(tmp_path, text, line):
    with pytest.raises(MalformedCsv) as excinfo:
        load_tiny_images(write(tmp_path, text))
    assert excinfo.value.line == line


def test_tiny_images_shape_mismatch(tmp_path):
    with pytest.raises(MalformedCsv):
        load_tiny_images(write(tmp_path, "label,px0,px1,px2\n0,0,0,0\n"), shape=(2, 2))


def test_make_dataset_validates_kind_and_params():
    with pytest.raises(ConfigError) as excinfo:
        make_dataset("mnist")
    assert excinfo.value.field == "dataset.kind"
    with pytest.raises(ConfigError):
        make_dataset("blobs", {"colour": "red"})
    with pytest.raises(ConfigError):
        make_dataset("tiny_images", {})
    assert len(make_dataset("two_moons", {"n": 50}, seed=1)) == 50
