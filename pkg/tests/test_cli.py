import numpy as np
import pytest

from gradquant.cli import _bench_one, bench_rows, main, read_values
from gradquant.quantize import RngStream
from gradquant.tensorcore import GradientBuffer


def run_cli(*argv):
    return main(list(argv))


class TestLevelsCommand:
    def test_orq9_prints_endpoint_levels(self, tmp_path, capsys):
        assert run_cli("levels", "--dist", "gaussian", "--n", "100000",
                       "--scheme", "orq", "--s", "9",
                       "--out", str(tmp_path)) == 0
        out = capsys.readouterr().out
        assert "levels=9" in out
        rng = np.random.default_rng(0)
        sample = rng.normal(0, 1, 100_000)
        assert f"{np.float32(sample.min()):.9g}" in out
        assert f"{np.float32(sample.max()):.9g}" in out

    def test_orq3_uniform_middle_near_midpoint(self, tmp_path, capsys):
        assert run_cli("levels", "--dist", "uniform", "--n", "100000",
                       "--scheme", "orq", "--s", "3",
                       "--out", str(tmp_path)) == 0
        lines = [l for l in capsys.readouterr().out.splitlines()
                 if l.strip().startswith("level[1]")]
        mid = float(lines[0].split("=")[1].split()[0])
        assert abs(mid) < 0.01  # uniform on [-1, 1]

    def test_f32_file_bingrad_b_conditional_means(self, tmp_path, capsys):
        values = np.random.default_rng(1).normal(0, 1, 4096).astype("<f4")
        path = tmp_path / "grads.f32"
        values.tofile(path)
        assert run_cli("levels", "--file", str(path), "--scheme", "bingrad-b",
                       "--out", str(tmp_path)) == 0
        out = capsys.readouterr().out
        v = values.astype(np.float64)
        b_neg = v[v < v.mean()].mean()
        b_pos = v[v >= v.mean()].mean()
        assert f"{np.float32(b_neg):.9g}" in out
        assert f"{np.float32(b_pos):.9g}" in out

    def test_unsupported_orq_count_names_constraint(self, tmp_path):
        with pytest.raises(ValueError, match="2\\*\\*K \\+ 1"):
            run_cli("levels", "--dist", "gaussian", "--scheme", "orq",
                    "--s", "7", "--out", str(tmp_path))

    def test_text_file_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "grads.txt"
        path.write_text("0.5\n0.25\nbanana\n")
        with pytest.raises(SystemExit, match=":3:"):
            run_cli("levels", "--file", str(path), "--scheme", "orq",
                    "--s", "3", "--out", str(tmp_path))

    def test_text_file_accepted(self, tmp_path, capsys):
        path = tmp_path / "grads.txt"
        path.write_text("# comment\n1.0\n-1.0\n0.5\n-0.5\n")
        assert run_cli("levels", "--file", str(path), "--scheme", "qsgd",
                       "--s", "3", "--out", str(tmp_path)) == 0

    def test_zero_variance_clip_warns(self, tmp_path, capsys):
        path = tmp_path / "flat.txt"
        path.write_text("2.0\n2.0\n2.0\n")
        run_cli("levels", "--file", str(path), "--scheme", "bingrad-b",
                "--clip", "2.5", "--out", str(tmp_path))
        assert "zero-variance" in capsys.readouterr().err


class TestBenchCommand:
    def test_bucket_sweep_and_ordering(self, tmp_path):
        rows = bench_rows(["orq", "qsgd"], ["gaussian"], [128, 512, 2048],
                          [3], 16384, seed=7, trials=2)
        by = {(r["scheme"], r["d"]): r["mse"] for r in rows}
        for d in (128, 512, 2048):
            assert by[("orq", d)] <= by[("qsgd", d)]

    def test_orq5_beats_evenly_on_gaussian(self):
        rows = bench_rows(["orq", "qsgd"], ["gaussian"], [2048], [5],
                          50_000, seed=3, trials=2)
        by = {r["scheme"]: r["mse"] for r in rows}
        assert by["orq"] < by["qsgd"]

    def test_constant_input_zero_mse_all_schemes(self):
        buf = GradientBuffer(np.full(256, 3.0, dtype=np.float32))
        for scheme in ("orq", "qsgd", "terngrad", "linear", "bingrad_b",
                       "bingrad_pb", "signsgd"):
            mse, _ = _bench_one(scheme, 3, buf, 64, RngStream(0))
            assert mse == 0.0

    def test_csv_written_deterministically(self, tmp_path):
        args = ("bench", "--schemes", "orq", "--dists", "gaussian",
                "--bucket-sizes", "512", "--s-values", "3",
                "--n", "4096", "--trials", "1", "--seed", "5")
        assert run_cli(*args, "--out", str(tmp_path / "a")) == 0
        assert run_cli(*args, "--out", str(tmp_path / "b")) == 0
        csv_a = (tmp_path / "a" / "bench.csv").read_bytes()
        csv_b = (tmp_path / "b" / "bench.csv").read_bytes()
        assert csv_a == csv_b
        assert csv_a.startswith(b"scheme,s,dist,d,seed,mse")


TRAIN_CFG = """
model=quadratic
model_dim=8
n_samples=256
batch_size=32
steps=120
lr=0.1
scheme=orq
s=3
d=8
seed=9
noise=0.05
"""


class TestTrainCommand:
    def write_cfg(self, tmp_path, text=TRAIN_CFG):
        path = tmp_path / "train.cfg"
        path.write_text(text)
        return str(path)

    def test_runs_and_writes_metrics(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path)
        assert run_cli("train", "--config", cfg, "--out", str(tmp_path)) == 0
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "step,loss,quant_mse,bits_per_element,grad_norm,clamp_events,lr"
        assert len(metrics) == 121

    def test_identical_seed_bitwise_identical_csv(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        run_cli("train", "--config", cfg, "--out", str(tmp_path / "r1"))
        run_cli("train", "--config", cfg, "--out", str(tmp_path / "r2"))
        assert (tmp_path / "r1" / "metrics.csv").read_bytes() == \
               (tmp_path / "r2" / "metrics.csv").read_bytes()

    def test_manifest_replay_reproduces_output(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        run_cli("train", "--config", cfg, "--out", str(tmp_path / "r1"))
        manifest = tmp_path / "r1" / "train-manifest.txt"
        run_cli("train", "--config", str(manifest), "--out", str(tmp_path / "r2"))
        assert (tmp_path / "r1" / "metrics.csv").read_bytes() == \
               (tmp_path / "r2" / "metrics.csv").read_bytes()

    def test_ternary_alias_and_clip_accepted(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        assert run_cli("train", "--config", cfg, "--scheme", "ternary",
                       "--clip", "2.5", "--steps", "20",
                       "--out", str(tmp_path)) == 0

    def test_negative_clip_rejected(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        with pytest.raises(SystemExit) as err:
            run_cli("train", "--config", cfg, "--clip", "-1",
                    "--out", str(tmp_path))
        assert err.value.code == 2  # argparse usage error

    def test_unknown_config_keys_listed(self, tmp_path):
        cfg = self.write_cfg(tmp_path, TRAIN_CFG + "warp_speed=9\nflux=1\n")
        with pytest.raises(SystemExit, match="flux, warp_speed"):
            run_cli("train", "--config", cfg, "--out", str(tmp_path))

    def test_fp_vs_orq9_final_loss_gap(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        run_cli("train", "--config", cfg, "--set", "scheme=fp",
                "--set", "steps=150", "--out", str(tmp_path / "fp"))
        run_cli("train", "--config", cfg, "--set", "scheme=orq",
                "--set", "s=9", "--set", "steps=150",
                "--out", str(tmp_path / "orq9"))
        fp_loss = _final_loss(tmp_path / "fp" / "metrics.csv")
        orq_loss = _final_loss(tmp_path / "orq9" / "metrics.csv")
        assert abs(orq_loss - fp_loss) / fp_loss < 0.05

    def test_abort_returns_nonzero(self, tmp_path):
        cfg = self.write_cfg(tmp_path, TRAIN_CFG.replace("lr=0.1", "lr=80.0")
                             .replace("steps=120", "steps=3000"))
        assert run_cli("train", "--config", cfg, "--out", str(tmp_path)) == 1


def _final_loss(path):
    line = path.read_text().splitlines()[-1]
    return float(line.split(",")[1])


class TestCodecCheckCommand:
    def test_self_test_passes(self, tmp_path, capsys):
        assert run_cli("codec-check", "--out", str(tmp_path)) == 0
        out = capsys.readouterr().out
        assert "codec-check: PASS" in out
        assert "FAIL" not in out


class TestReadValues:
    def test_f32_roundtrip(self, tmp_path):
        v = np.array([0.5, -1.25, 3.0], dtype="<f4")
        path = tmp_path / "x.f32"
        v.tofile(path)
        assert np.array_equal(read_values(str(path)), v.astype(np.float64))

    def test_env_var_outdir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("GRADQUANT_OUTDIR", str(tmp_path / "envout"))
        assert run_cli("levels", "--dist", "uniform", "--n", "512",
                       "--scheme", "qsgd", "--s", "3") == 0
        assert (tmp_path / "envout" / "levels-manifest.txt").exists()
