import csv
import json

import pytest

from sitta.cli import main
from sitta.data import SyntheticSpec, make_synthetic_set


@pytest.fixture
def pair(tmp_path):
    a = make_synthetic_set(SyntheticSpec("stripes", "disc", 32, 2, 0)).write(tmp_path / "a")
    b = make_synthetic_set(SyntheticSpec("dots", "disc", 32, 1, 0)).write(tmp_path / "b")
    return a, b


def train_args(pair, out, seed=0):
    return ["train", "--content", pair[0].items[0].path, "--texture", pair[1].items[0].path,
            "--out", str(out), "--seed", str(seed), "--iters", "1", "--size", "32"]


def test_train_artifacts_and_determinism(pair, tmp_path):
    assert main(train_args(pair, tmp_path / "r1")) == 0
    assert main(train_args(pair, tmp_path / "r2")) == 0
    for name in ("model.sitt", "losses.csv", "grid.png", "run_manifest.jsonl"):
        assert (tmp_path / "r1" / name).exists()
        assert (tmp_path / "r1" / name).read_bytes() != b""
    assert (tmp_path / "r1" / "model.sitt").read_bytes() == (tmp_path / "r2" / "model.sitt").read_bytes()
    assert (tmp_path / "r1" / "grid.png").read_bytes() == (tmp_path / "r2" / "grid.png").read_bytes()
    records = [json.loads(line) for line in (tmp_path / "r1" / "run_manifest.jsonl").read_text().splitlines()]
    assert {r["kind"] for r in records} == {"checkpoint", "loss_log", "grid"}

    from sitta.data import read_pixels
    assert read_pixels(tmp_path / "r1" / "grid.png").shape == (64, 96, 3)

    out = tmp_path / "tr"
    assert main(["translate", "--checkpoint", str(tmp_path / "r1" / "model.sitt"),
                 "--content", pair[0].items[1].path, "--texture", pair[1].items[0].path,
                 "--out", str(out)]) == 0
    assert len(list(out.glob("*__x__*.png"))) == 1


def test_missing_file_names_path(pair, tmp_path, capsys):
    args = train_args(pair, tmp_path / "r")
    args[2] = str(tmp_path / "nope.png")
    assert main(args) == 1
    assert "nope.png" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert main(["train", "--content", "x"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["bench", "--out", str(tmp_path)]) == 2  # --seed is required
    assert main(["gen-data", "--texture", "stripes", "--out", str(tmp_path), "--bogus"]) == 2


def test_augment_job(pair, tmp_path):
    job = tmp_path / "job.cfg"
    job.write_text("content_dir = a\ntexture_dir = b\nmode = SingleToSingle\n"
                   "label_policy = texture_label\noutput_dir = aug\niters = 1\nimage_side = 16\n")
    assert main(["augment", "--job", str(job), "--seed", "2"]) == 0
    assert main(["augment", "--job", str(job), "--seed", "2", "--out", str(tmp_path / "aug2")]) == 0
    with open(tmp_path / "aug" / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    first = sorted(p.name for p in (tmp_path / "aug").glob("*.png"))
    assert len(first) == 2
    for name in first:
        assert (tmp_path / "aug" / name).read_bytes() == (tmp_path / "aug2" / name).read_bytes()

    job.write_text(job.read_text().replace("SingleToSingle", "SingleToAll"))
    assert main(["augment", "--job", str(job), "--seed", "2"]) == 2


def test_eval(pair, tmp_path):
    a_dir = str(tmp_path / "a")
    assert main(["eval", "--set-a", a_dir, "--set-b", a_dir, "--metrics", "fid,lpips",
                 "--out", str(tmp_path / "ev")]) == 0
    with open(tmp_path / "ev" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["metric"] for r in rows] == ["fid", "lpips"]
    assert abs(float(rows[0]["value"])) < 1e-9
    assert main(["eval", "--set-a", a_dir, "--set-b", a_dir, "--metrics", "psnr",
                 "--out", str(tmp_path / "ev")]) == 2


def test_gen_data(tmp_path):
    assert main(["gen-data", "--texture", "checker", "--count", "3", "--side", "16",
                 "--out", str(tmp_path / "g")]) == 0
    assert len(list((tmp_path / "g").glob("*.png"))) == 3
    assert len((tmp_path / "g" / "run_manifest.jsonl").read_text().splitlines()) == 3
