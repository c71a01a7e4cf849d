import numpy as np
import pytest

from dgmeit import cli
from dgmeit.io import read_records, read_vector_csv
from dgmeit.mesh import load_mesh


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err.strip()


def summary(line):
    return dict(item.split("=", 1) for item in line.split())


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def measurements(workdir):
    path = workdir / "v.csv"
    assert cli.main(["forward", "--seed", "4", "--snr", "40", "--out", str(path),
                     "--image", str(workdir / "truth.bin"), "--side", "24"]) == 0
    return path


def test_mesh(capsys, tmp_path):
    code, out, _ = run(capsys, "mesh", "--refinement", 4, "--out-dir", tmp_path, "--out", "m.txt")
    assert code == 0
    info = summary(out)
    m = load_mesh(tmp_path / "m.txt")
    assert int(info["nodes"]) == m.n_nodes and int(info["electrodes"]) == 16


def test_forward(measurements):
    v = read_vector_csv(measurements)
    assert v.shape == (208,) and np.all(np.isfinite(v))


def test_forward_phantom_file(capsys, tmp_path):
    (tmp_path / "p.json").write_text('{"background": 1.0, "circles": []}')
    code, out, _ = run(capsys, "forward", "--phantom", tmp_path / "p.json", "--out", tmp_path / "v.csv")
    assert code == 0 and summary(out)["circles"] == "0"
    v = read_vector_csv(tmp_path / "v.csv").reshape(16, 13)
    np.testing.assert_allclose(v, np.broadcast_to(v[0], v.shape), rtol=1e-6, atol=1e-12)


def test_reconstruct_and_metrics(capsys, workdir, measurements):
    code, out, _ = run(capsys, "reconstruct", "--measurements", measurements, "--lambda", 3, "--iters", 4,
                       "--trace", workdir / "trace.csv", "--image", workdir / "gn.bin", "--side", 24,
                       "--out", workdir / "s.csv")
    assert code == 0
    rows = (workdir / "trace.csv").read_text().splitlines()
    misfits = [float(r.split(",")[1]) for r in rows]
    assert misfits[-1] < misfits[0] and float(summary(out)["misfit"]) == pytest.approx(misfits[-1])
    code, out, _ = run(capsys, "metrics", "--recon", workdir / "gn.bin", "--gt", workdir / "truth.bin",
                       "--out", workdir / "report.csv")
    assert code == 0
    lines = (workdir / "report.csv").read_text().splitlines()
    assert lines[0] == "pair,mse,psnr,ssim,re,ae,dr" and lines[2].startswith("mean±std,")
    assert 0 < float(summary(out)["ssim"]) < 1


def test_metrics_identical(capsys, workdir, measurements):
    code, out, _ = run(capsys, "metrics", "--recon", workdir / "truth.bin", "--gt", workdir / "truth.bin",
                       "--out", workdir / "same.csv")
    info = summary(out)
    assert code == 0 and info["ssim"] == "1.0" and info["dr"] == "1.0" and info["re"] == "0.0"
    assert info["psnr"] == "inf"


def test_dataset(capsys, tmp_path):
    code, out, _ = run(capsys, "dataset", "--count", 5, "--split", "3,1,1", "--side", 16, "--refinement", 4,
                       "--seed", 9, "--out", tmp_path / "d")
    assert code == 0 and summary(out)["train"] == "3"
    rec = read_records(tmp_path / "d" / "test.bin")
    assert rec["seed"].tolist() == [13] and rec["image"].shape == (1, 16, 16)


def test_toy_score_and_sampling(capsys, tmp_path, measurements):
    code, out, _ = run(capsys, "toy-score", "--steps", 200, "--samples", 100, "--out", tmp_path / "toy.ckpt")
    info = summary(out)
    assert code == 0 and float(info["mode0"]) + float(info["mode1"]) == pytest.approx(1.0)
    code, out, _ = run(capsys, "sample", "--mode", "pc", "--score", tmp_path / "toy.ckpt", "--k", 50,
                       "--count", 4, "--out", tmp_path / "pc.csv")
    assert code == 0
    assert np.loadtxt(tmp_path / "pc.csv", delimiter=",").shape == (4, 2)
    # the 2-D toy checkpoint carries no image geometry
    code, _, err = run(capsys, "sample", "--score", tmp_path / "toy.ckpt", "--measurements", measurements)
    assert code == 2 and err.startswith("error=usage")


def test_image_score_and_csd_star(capsys, tmp_path, measurements):
    assert run(capsys, "dataset", "--count", 12, "--split", "12,0,0", "--side", 16, "--out", tmp_path / "d")[0] == 0
    code, _, _ = run(capsys, "toy-score", "--train", tmp_path / "d" / "train.bin", "--steps", 30,
                     "--hidden", 16, "--out", tmp_path / "img.ckpt")
    assert code == 0
    code, out, _ = run(capsys, "sample", "--score", tmp_path / "img.ckpt", "--measurements", measurements,
                       "--k-prime", 10, "--lambda", 3, "--iters", 3, "--out", tmp_path / "r.bin")
    assert code == 0 and summary(out)["side"] == "16"
    assert read_records(tmp_path / "r.bin")["image"].shape == (1, 16, 16)
    assert (tmp_path / "r.pgm").exists()


def test_config_file_and_override(capsys, tmp_path, measurements):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"# reconstruction settings\nmeasurements = {measurements}\nlambda = 3\niters = 3\n")
    code, out, _ = run(capsys, "reconstruct", "--config", cfg, "--out-dir", tmp_path)
    assert code == 0 and summary(out)["iterations"] == "3"
    assert (tmp_path / "sigma_gn.csv").exists()
    code, out, _ = run(capsys, "reconstruct", "--config", cfg, "--iters", 1, "--out", tmp_path / "one.csv")
    assert code == 0 and summary(out)["iterations"] == "1"


@pytest.mark.parametrize("argv", [
    [],
    ["nosuch"],
    ["reconstruct"],
    ["metrics", "--recon", "a.bin"],
    ["mesh", "--electrodes", "x"],
    ["sample", "--mode", "bogus", "--score", "s"],
])
def test_usage_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and err.startswith("error=usage") and "\n" not in err


def test_unknown_config_key(capsys, tmp_path):
    (tmp_path / "bad.cfg").write_text("lambda = 1\nlamda = 2\n")
    code, _, err = run(capsys, "reconstruct", "--config", tmp_path / "bad.cfg", "--measurements", "v.csv")
    assert code == 2 and "lamda" in err


def test_io_errors(capsys, tmp_path):
    code, _, err = run(capsys, "reconstruct", "--measurements", tmp_path / "missing.csv")
    assert code == 3 and err.startswith("error=io")
    (tmp_path / "junk.bin").write_bytes(b"not a record file")
    code, _, err = run(capsys, "metrics", "--recon", tmp_path / "junk.bin", "--gt", tmp_path / "junk.bin")
    assert code == 3
    (tmp_path / "junk.ckpt").write_bytes(b"DNET")
    code, _, _ = run(capsys, "sample", "--mode", "pc", "--score", tmp_path / "junk.ckpt")
    assert code == 3


def test_numeric_error(capsys, tmp_path):
    (tmp_path / "zero.csv").write_text("0.0\n" * 208)
    code, _, err = run(capsys, "reconstruct", "--measurements", tmp_path / "zero.csv",
                       "--out", tmp_path / "s.csv")
    assert code == 4 and err.startswith("error=numeric")
    assert not (tmp_path / "s.csv").exists()


def test_failed_run_leaves_no_partial_files(capsys, tmp_path):
    run(capsys, "metrics", "--recon", tmp_path / "none.bin", "--gt", tmp_path / "none.bin",
        "--out", tmp_path / "rep.csv")
    assert list(tmp_path.iterdir()) == []
