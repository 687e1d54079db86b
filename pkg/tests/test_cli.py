import json
import subprocess
import sys

import numpy as np
import pytest

from nmgsparse import cli
from nmgsparse.io import read_encoded, write_csv, write_dense
from nmgsparse.kernels import bench

from conftest import gaussian

SMALL_DEMO = ["train-demo", "--n-train", "64", "--n-eval", "64", "--epochs", "3",
              "--finetune-epochs", "5", "--batch-size", "32", "--sizes", "8,6,1",
              "--teacher-sizes", "8,2,1"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(out):
    return dict(line.split("=", 1) for line in out.splitlines())


@pytest.fixture
def matrix(tmp_path):
    x = gaussian((64, 72), seed=1)
    path = tmp_path / "x.stnm"
    write_dense(path, x)
    return x, path


def test_convert_spec_example(capsys, tmp_path, matrix):
    x, path = matrix
    out_path = tmp_path / "x.stng"
    code, out, _ = run(capsys, "convert", str(path), str(out_path), "--n", "2", "--m", "4",
                       "--g", "3", "--sparse-dim", "0", "--group-dim", "1")
    assert code == 0
    enc = read_encoded(out_path)
    keep = enc.support()
    assert np.array_equal(enc.to_dense()[keep], x[keep])
    r = report(out)
    assert float(r["sparsity"]) == pytest.approx(0.5)
    assert r["format"] == "2:4:3"


def test_convert_exchange_not_worse(capsys, tmp_path, matrix):
    _, path = matrix
    energies = {}
    for alg in ("greedy", "greedy+exchange"):
        code, out, _ = run(capsys, "convert", str(path), str(tmp_path / f"{alg}.stng"), "--n", "2",
                           "--m", "4", "--g", "3", "--sparse-dim", "0", "--group-dim", "1",
                           "--algorithm", alg)
        assert code == 0
        energies[alg] = float(report(out)["energy"])
    assert energies["greedy+exchange"] >= energies["greedy"]


def test_convert_csv_input(capsys, tmp_path):
    x = gaussian((4, 12), seed=2)
    write_csv(tmp_path / "x.csv", x)
    code, _, _ = run(capsys, "convert", str(tmp_path / "x.csv"), str(tmp_path / "y.stng"),
                     "--n", "1", "--m", "2", "--g", "2")
    assert code == 0


def test_convert_divisibility_and_pad(capsys, tmp_path):
    write_dense(tmp_path / "x.stnm", gaussian((10, 10), seed=3))
    args = ["convert", str(tmp_path / "x.stnm"), str(tmp_path / "y.stng"), "--n", "2", "--m", "4",
            "--g", "1"]
    assert run(capsys, *args)[0] == 2
    code, out, _ = run(capsys, *args, "--pad")
    assert code == 0
    assert report(out)["encoded_shape"] == "12x12"


def test_convert_io_errors(capsys, tmp_path):
    assert run(capsys, "convert", str(tmp_path / "missing.stnm"), str(tmp_path / "o"),
               "--n", "1", "--m", "2", "--g", "1")[0] == 3
    (tmp_path / "bad.stnm").write_bytes(b"STNM\0")
    assert run(capsys, "convert", str(tmp_path / "bad.stnm"), str(tmp_path / "o"),
               "--n", "1", "--m", "2", "--g", "1")[0] == 3


def test_usage_errors(capsys, tmp_path, matrix):
    _, path = matrix
    assert run(capsys, "convert", str(path), str(tmp_path / "o"))[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "gemm-bench", "--formats", "gpu")[0] == 2
    assert run(capsys, "gemm-bench", "--reps", "2")[0] == 2
    assert run(capsys, "verify", "--suites", "nope")[0] == 2
    assert run(capsys, "energy-sweep", "--nm", "3")[0] == 2


def test_config_file_and_flag_precedence(capsys, tmp_path, matrix):
    _, path = matrix
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 2, "m": 4, "g": 1, "sparse-dim": 0, "group-dim": 1}))
    code, out, _ = run(capsys, "convert", str(path), str(tmp_path / "o.stng"), "--config",
                       str(cfg), "--g", "3")
    assert code == 0 and report(out)["format"] == "2:4:3"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "convert", str(path), str(tmp_path / "o"), "--config", str(cfg))[0] == 2
    cfg.write_text("{not json")
    assert run(capsys, "convert", str(path), str(tmp_path / "o"), "--config", str(cfg))[0] == 2
    assert run(capsys, "convert", str(path), str(tmp_path / "o"), "--config",
               str(tmp_path / "none.json"))[0] == 3


def test_config_lists(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rows": 8, "cols": 96, "nm": [[1, 2]], "groups": [1, 4],
                               "seeds": 2}))
    code, out, _ = run(capsys, "energy-sweep", "--config", str(cfg))
    assert code == 0
    assert len(out.splitlines()) == 1 + 1 + 5


def test_energy_sweep_rows(capsys):
    code, out, _ = run(capsys, "energy-sweep", "--rows", "16", "--cols", "96", "--nm", "1:2,1:4",
                       "--groups", "1,4", "--seeds", "2")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "structure,n,m,g,sparsity,seeds,energy_mean,energy_std"
    assert lines[1].startswith("keep_all,") and float(lines[1].split(",")[6]) == 1.0
    structures = [l.split(",")[0] + l.split(",")[3] for l in lines[2:]]
    assert structures == ["unstructured0", "nm0", "nmg1", "nmg4", "blocked0"] * 2
    for block in (lines[2:7], lines[7:12]):
        e = [float(l.split(",")[6]) for l in block]
        assert e[0] >= e[1] >= e[3] >= e[2] >= e[4]


def test_energy_sweep_writes_file(capsys, tmp_path):
    out_path = tmp_path / "e.csv"
    code, out, _ = run(capsys, "energy-sweep", "--rows", "8", "--cols", "24", "--nm", "1:2",
                       "--groups", "1", "--seeds", "1", "--out", str(out_path))
    assert code == 0 and out == ""
    assert out_path.read_text().startswith("structure,")


def test_gemm_bench_small(capsys):
    code, out, err = run(capsys, "gemm-bench", "--shape", "32x48x16", "--formats",
                         "dense,csr,nmg,blas", "--nm", "1:2,2:6", "--groups", "1,2", "--reps", "3")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "shape,format,n,m,g,sparsity,reps,median_s,min_s,gflops"
    assert len(lines) == 1 + 1 + 2 + 4 + 1
    assert "speedup vs internal dense" in err


def test_gemm_bench_gate(capsys, monkeypatch):
    def broken(a, b, tiling=None):
        c = a.to_dense() @ b
        c[0, 0] += 1.0
        return c

    monkeypatch.setattr(bench, "nmg_spmm", broken)
    code, out, err = run(capsys, "gemm-bench", "--shape", "16x32x8", "--formats", "nmg",
                         "--nm", "1:2", "--groups", "1", "--reps", "3")
    assert code == 1
    assert out == ""
    assert "oracle mismatch" in err


def test_gemm_bench_custom_tiling(capsys):
    code, _, _ = run(capsys, "gemm-bench", "--shape", "16x32x8", "--formats", "dense",
                     "--tiling", "8,16,32,8", "--reps", "3", "--threads", "2")
    assert code == 0
    assert run(capsys, "gemm-bench", "--tiling", "8,16")[0] == 2


def test_train_demo(capsys, tmp_path):
    code, out, _ = run(capsys, *SMALL_DEMO, "--out-dir", str(tmp_path / "logs"),
                       "--checkpoint-dir", str(tmp_path / "ckpt"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("schedule,final_loss,loss_ratio,prune_events,mask_violations")
    names = [l.split(",")[0] for l in lines[1:]]
    assert names == ["dense", "one_shot", "iterative", "layer_wise"]
    for line in lines[2:]:
        fields = line.split(",")
        assert fields[4] == "0"
        assert all(float(s) == 0.5 for s in fields[5:])
    assert lines[3].split(",")[3] == "5"
    logs = sorted(p.name for p in (tmp_path / "logs").iterdir())
    assert logs == ["dense.csv", "dense_reference.csv", "iterative.csv", "layer_wise.csv",
                    "one_shot.csv"]
    assert (tmp_path / "ckpt" / "iterative" / "manifest.json").exists()


def test_train_demo_dense_loss_decreases(tmp_path, capsys):
    assert run(capsys, "train-demo", "--epochs", "10", "--finetune-epochs", "0",
               "--schedules", "one_shot", "--out-dir", str(tmp_path))[0] == 0
    rows = (tmp_path / "dense.csv").read_text().splitlines()[1:]
    losses = [float(r.split(",")[4]) for r in rows]
    assert len(losses) == 11
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0
    rows = out.splitlines()[1:]
    assert len(rows) >= 5
    assert all(" PASS " in r for r in rows)


def test_registry_dump(capsys):
    code, out, _ = run(capsys, "registry")
    assert code == 0 and "fwd matmul" in out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nmgsparse", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("convert", "energy-sweep", "gemm-bench", "train-demo", "verify"):
        assert cmd in r.stdout
