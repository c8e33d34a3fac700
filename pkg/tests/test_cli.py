import csv
import io
import sys
from pathlib import Path

import numpy as np
import pytest

from itdlpcc import cli
from itdlpcc.codec import load_codec, save_codec
from itdlpcc.abu import load_abu
from itdlpcc.ply import load_ply, save_ply
from itdlpcc.synthetic import plane_cloud, surface_cloud

GOLDEN = Path(__file__).parent / "golden" / "helpfull.txt"

COMPRESS_FLAGS = ["--blk_size", "--q_step", "--scale", "--topk_metrics", "--color_weight", "--use_fast_topk",
                  "--max_topk", "--topk_patience", "--use_abu", "--abu_model_dir", "--abu_topk", "--abu_max_topk"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, toy_models):
    root = tmp_path_factory.mktemp("cli")
    save_codec(toy_models.codec, root / "models" / "0.00025", 0.00025)
    pc = surface_cloud(32, np.random.default_rng(12), n_patches=2)
    save_ply(pc, root / "cloud.ply")
    return root


def parse(argv):
    return cli.build_parser().parse_args(argv)


# argument surface

def test_helpfull_golden(capsys):
    assert cli.full_help() == GOLDEN.read_text()
    assert cli.main(["--helpfull"]) == 0
    assert capsys.readouterr().out == GOLDEN.read_text()
    assert cli.main(["compress", "--helpfull"]) == 0


def test_compress_defaults():
    args = parse(["compress", "in.ply", "models", "out"])
    assert not args.with_color
    assert (args.blk_size, args.q_step, args.scale) == (128, 1, None)
    assert (args.topk_metrics, args.color_weight, args.use_fast_topk) == ("d1yuv", 0.5, False)
    assert (args.max_topk, args.topk_patience) == (10, 5)
    assert (args.use_abu, args.abu_model_dir, args.abu_topk, args.abu_max_topk) == (False, "", "full", 10)


def test_compress_flags_verbatim():
    args = parse(["--with_color", "compress", "in.ply", "m", "o", "--blk_size", "64", "-q_step", "1.45",
                  "--scale", "2", "--topk_metrics", "d2rgb", "--color_weight", "0.3", "--use_fast_topk",
                  "--max_topk", "4", "--topk_patience", "3", "--use_abu", "--abu_model_dir", "a,b",
                  "--abu_topk", "none", "--abu_max_topk", "6"])
    assert args.with_color and args.blk_size == 64 and args.q_step == 1.45 and args.scale == [2.0]
    assert args.topk_metrics == "d2rgb" and args.color_weight == 0.3 and args.use_fast_topk
    assert (args.max_topk, args.topk_patience, args.use_abu) == (4, 3, True)
    assert (args.abu_model_dir, args.abu_topk, args.abu_max_topk) == ("a,b", "none", 6)
    assert parse(["compress", "i", "m", "o", "--q_step", "2"]).q_step == 2
    assert parse(["compress", "i", "m", "o", "--scale", "None"]).scale == [None]
    assert parse(["compress", "i", "m", "o", "--scale", "1,2,4"]).scale == [1.0, 2.0, 4.0]
    usage = cli.build_parser()._subparsers._group_actions[0].choices["compress"].format_usage()
    for flag in COMPRESS_FLAGS:
        assert flag in usage


def test_decompress_flags():
    args = parse(["--with_color", "decompress", "x.bin", "m", "--abu_model_dir", "a"])
    assert args.with_color and args.abu_model_dir == "a"
    assert parse(["decompress", "x.bin", "m"]).abu_model_dir == ""


@pytest.mark.parametrize("argv", [
    [], ["compress"], ["compress", "i", "m", "o", "--scale", "0.5"], ["compress", "i", "m", "o", "--abu_topk", "x"],
    ["bogus"], ["compress", "i", "m", "o", "--scale", "a,b"],
])
def test_parse_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert cli.main(["compress", str(tmp_path / "missing.ply"), str(tmp_path), str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    (tmp_path / "bad.bin").write_bytes(b"nonsense")
    assert cli.main(["decompress", str(tmp_path / "bad.bin"), str(tmp_path)]) == 1


def test_module_entry_point():
    import subprocess

    out = subprocess.run([sys.executable, "-m", "itdlpcc", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("itdlpcc ")


# end to end

def test_compress_decompress_evaluate(workspace, capsys):
    model = str(workspace / "models" / "0.00025")
    src = str(workspace / "cloud.ply")
    out = workspace / "out"
    assert cli.main(["compress", src, model, str(out), "--blk_size", "16", "--scale", "1"]) == 0
    bitstream = out / "cloud.bin"
    assert bitstream.exists()
    assert cli.main(["decompress", str(bitstream), model]) == 0
    decoded = out / "cloud.dec.ply"
    assert len(load_ply(decoded)) > 0
    capsys.readouterr()
    assert cli.main(["evaluate", src, str(decoded), "--bitstream", str(bitstream)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    n = len(load_ply(src))
    assert float(rows[0]["rate_bpp"]) == pytest.approx(8 * bitstream.stat().st_size / n, abs=1e-6)
    assert float(rows[0]["d1"]) > 10 and rows[0]["y"] == ""


def test_compress_multiple_scales(workspace):
    model = str(workspace / "models" / "0.00025")
    out = workspace / "multi"
    assert cli.main(["compress", str(workspace / "cloud.ply"), model, str(out), "--blk_size", "16",
                     "--scale", "1,2"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["cloud_sf1.bin", "cloud_sf2.bin"]


def test_rd_sweep_command(workspace, tmp_path):
    model = str(workspace / "models" / "0.00025")
    target = tmp_path / "sweep.csv"
    assert cli.main(["rd-sweep", str(workspace / "cloud.ply"), model, "--q_steps", "1,2", "--scales", "1",
                     "--blk_sizes", "16", "--csv", str(target)]) == 0
    rows = list(csv.DictReader(target.open()))
    assert [r["label"] for r in rows] == ["0.00025/qs1/sf1/bs16", "0.00025/qs2/sf1/bs16"]


def test_train_commands(tmp_path):
    rng = np.random.default_rng(3)
    data = tmp_path / "data"
    data.mkdir()
    for i in range(3):
        save_ply(plane_cloud(16, rng), data / f"p{i}.ply")
    assert cli.main(["train", str(data), str(tmp_path / "codec"), "--blk_size", "16", "--epochs", "1",
                     "--width_factor", "8", "--min_points", "50", "--lmbda", "0.01", "--val_fraction", "0.34"]) == 0
    model, meta = load_codec(tmp_path / "codec")
    assert meta["model_id"] == 5 and model.arch.width_factor == 8
    ini = tmp_path / "train.ini"
    ini.write_text("[train]\nlr = 0.001\nbatch = 2\nmax_epochs = 1\nwidth_factor = 4\n")
    assert cli.main(["train-abu", str(data), str(tmp_path / "abu"), "--scale", "2", "--blk_size", "16",
                     "--config", str(ini), "--min_points", "50"]) == 0
    abu, ameta = load_abu(tmp_path / "abu")
    assert ameta["sf"] == 2 and abu.arch.width_factor == 4
    assert cli.main(["train", str(tmp_path / "nothing"), str(tmp_path / "x"), "--blk_size", "16"]) == 1
