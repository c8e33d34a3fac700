import numpy as np
import pytest

from itdlpcc.ply import PlyError, load_ply, save_ply
from itdlpcc.pointcloud import PointCloud


def write_ascii(path, rows, with_color=False, extra_header=""):
    props = ["property float x", "property float y", "property float z"]
    if with_color:
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    header = ["ply", "format ascii 1.0", f"element vertex {len(rows)}", *props]
    if extra_header:
        header.append(extra_header)
    header.append("end_header")
    lines = header + [" ".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def test_minimal_ascii(tmp_path):
    path = tmp_path / "a.ply"
    write_ascii(path, [(0, 0, 0), (1, 2, 3)])
    pc = load_ply(path)
    assert len(pc) == 2
    assert pc.precision == 2


def test_duplicate_colours_are_averaged(tmp_path):
    path = tmp_path / "dup.ply"
    write_ascii(path, [(0, 0, 0, 10, 20, 30), (0, 0, 0, 100, 20, 30)], with_color=True)
    pc = load_ply(path)
    assert len(pc) == 1
    assert pc.colors.tolist() == [[55, 20, 30]]


def test_distinct_voxels_kept(tmp_path, rng):
    pts = np.unique(rng.integers(0, 1024, (1200, 3)), axis=0)[:1000]
    rng.shuffle(pts)
    path = tmp_path / "many.ply"
    write_ascii(path, pts.tolist())
    assert len(load_ply(path)) == 1000


def test_non_integer_coordinates_are_rounded(tmp_path):
    path = tmp_path / "f.ply"
    write_ascii(path, [(0.5, 1.2, 2.5)])
    assert load_ply(path).points.tolist() == [[1, 1, 3]]


@pytest.mark.parametrize("ascii", [False, True])
def test_round_trip_random_coloured(tmp_path, rng, ascii):
    pc = PointCloud.from_points(rng.integers(0, 4096, (10_000, 3)), rng.integers(0, 256, (10_000, 3)))
    path = tmp_path / "rt.ply"
    save_ply(pc, path, ascii=ascii)
    assert load_ply(path) == pc


def test_round_trip_two_points(tmp_path):
    pc = PointCloud.from_points([[0, 0, 0], [5, 6, 7]])
    save_ply(pc, tmp_path / "two.ply")
    back = load_ply(tmp_path / "two.ply")
    assert back == pc and not back.has_colors


def test_empty_cloud(tmp_path):
    path = tmp_path / "empty.ply"
    save_ply(PointCloud.empty(), path)
    assert path.read_bytes().startswith(b"ply\n")
    assert len(load_ply(path)) == 0


def test_precision_is_preserved(tmp_path):
    pc = PointCloud(np.array([[1, 2, 3]]), precision=10)
    save_ply(pc, tmp_path / "p.ply")
    assert load_ply(tmp_path / "p.ply").precision == 10


def test_binary_with_integer_properties(tmp_path):
    rec = np.array([(1, 2, 3, 9, 8, 7), (4, 5, 6, 1, 2, 3)],
                   dtype=[("x", "<i4"), ("y", "<i4"), ("z", "<i4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
              "property int x\nproperty int y\nproperty int z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    path = tmp_path / "b.ply"
    path.write_bytes(header.encode() + rec.tobytes())
    pc = load_ply(path)
    assert pc.points.tolist() == [[1, 2, 3], [4, 5, 6]]
    assert pc.colors.tolist() == [[9, 8, 7], [1, 2, 3]]


@pytest.mark.parametrize("text", [
    "not a ply\n",
    "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
    "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n-3 0 0\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 0 0\n",
])
def test_malformed_inputs_raise(tmp_path, text):
    path = tmp_path / "bad.ply"
    path.write_text(text)
    with pytest.raises(ValueError):
        load_ply(path)


def test_plyerror_is_valueerror():
    assert issubclass(PlyError, ValueError)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_ply(PointCloud.from_points([[0, 0, 0]]), tmp_path / "missing" / "x.ply")
