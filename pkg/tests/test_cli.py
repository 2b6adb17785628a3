import json

import numpy as np
import pytest

from xlstm_pinn import cli
from xlstm_pinn import report as rp
from xlstm_pinn import training as tr

TINY = ["--width", "5", "--depth", "1", "--micro-steps", "2"]


def _train(out, *extra):
    return cli.main(["train", "--problem", "advection1d", "--budget", "3", "--out", str(out), *TINY, *extra])


@pytest.fixture(scope="module")
def paired_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("paired")
    assert _train(out, "--paired", "--seed", "7") == cli.EXIT_OK
    return out


class TestTrain:
    def test_unknown_problem(self, tmp_path, capsys):
        assert cli.main(["train", "--problem", "nosuch", "--out", str(tmp_path)]) == cli.EXIT_USAGE
        assert "unknown problem" in capsys.readouterr().err

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train", "--nosuch"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_unmatched_width(self, tmp_path):
        # no baseline width lands within the parameter tolerance for this tiny config
        assert cli.main(["train", "--problem", "laplace2d", "--budget", "1", "--out", str(tmp_path),
                         "--width", "4", "--depth", "1", "--micro-steps", "2"]) == cli.EXIT_USAGE

    def test_budget_one_single(self, tmp_path):
        assert cli.main(["train", "--problem", "laplace2d", "--budget", "1", "--single", "--arch", "baseline",
                         "--out", str(tmp_path), *TINY]) == cli.EXIT_OK
        rec = tr.RunRecord.load(tmp_path / "runs" / "laplace2d" / "baseline")
        assert rec.history.shape[0] == 1

    def test_paired_layout(self, paired_run):
        base = paired_run / "runs" / "advection1d"
        for tag in ("xlstm", "baseline"):
            for name in ("history.json", "checkpoint.json", "metrics.csv", "loss.svg", "fields.svg"):
                assert (base / tag / name).is_file()
        rows = rp.parse_table((base / "metrics.csv").read_text())
        assert len(rows) == 4
        assert [r.model for r in rows] == ["xlstm", "xlstm", "baseline", "baseline"]
        assert (base / "metrics.txt").is_file() and (base / "config.json").is_file()

    def test_config_replay_is_bit_exact(self, paired_run, tmp_path):
        base = paired_run / "runs" / "advection1d"
        cfg = base / "config.json"
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_OK
        again = tmp_path / "runs" / "advection1d"
        assert (again / "metrics.csv").read_bytes() == (base / "metrics.csv").read_bytes()
        for tag in ("xlstm", "baseline"):
            assert (again / tag / "checkpoint.json").read_bytes() == (base / tag / "checkpoint.json").read_bytes()

    def test_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"problem": "advection1d", "budget": 2, "paired": False, "arch": "baseline",
                                   "model": {"depth": 1, "width": 5, "micro_steps": 2}}))
        assert cli.main(["train", "--config", str(cfg), "--budget", "1", "--out", str(tmp_path)]) == cli.EXIT_OK
        rec = tr.RunRecord.load(tmp_path / "runs" / "advection1d" / "baseline")
        assert rec.iterations == 1

    def test_unknown_config_field(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nosuch": 1}))
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
        assert cli.main(["train", "--problem", "laplace2d", "--budget", "1", "--single", "--arch", "baseline",
                         *TINY]) == cli.EXIT_OK
        assert (tmp_path / "env" / "runs" / "laplace2d" / "baseline" / "history.json").is_file()


class TestReport:
    def test_rerender(self, paired_run, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(paired_run, out)
        before = (out / "runs" / "advection1d" / "metrics.csv").read_bytes()
        (out / "runs" / "advection1d" / "metrics.csv").unlink()
        assert cli.main(["report", "--out", str(out)]) == cli.EXIT_OK
        assert (out / "runs" / "advection1d" / "metrics.csv").read_bytes() == before

    def test_corrupted_checkpoint(self, paired_run, tmp_path, capsys):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(paired_run, out)
        ckpt = out / "runs" / "advection1d" / "xlstm" / "checkpoint.json"
        ckpt.write_text(ckpt.read_text()[:-40])
        assert cli.main(["report", "--out", str(out)]) == cli.EXIT_FAILURE
        assert "checkpoint load failure" in capsys.readouterr().err


class TestVerify:
    def test_only_filters(self, tmp_path, capsys):
        assert cli.main(["verify", "--only", "autodiff", "--out", str(tmp_path)]) == cli.EXIT_OK
        doc = json.loads((tmp_path / "verify.json").read_text())
        assert [s["name"] for s in doc["suites"]] == ["autodiff"]
        assert doc["passed"] is True

    def test_unknown_suite(self, tmp_path):
        assert cli.main(["verify", "--only", "nosuch", "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_list(self, capsys):
        assert cli.main(["verify", "--list"]) == cli.EXIT_OK
        assert "spectral (slow)" in capsys.readouterr().out

    def test_load_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert cli.main(["verify", "--only", "checkpoints", "--checkpoint", str(bad),
                         "--out", str(tmp_path)]) == cli.EXIT_FAILURE
        assert "LOAD-ERROR" in capsys.readouterr().out


class TestSpectral:
    def test_single_frequency(self, tmp_path):
        assert cli.main(["spectral", "--kmax", "1", "--budget", "20", "--seeds", "0", "1",
                         "--out", str(tmp_path)]) == cli.EXIT_OK
        lines = (tmp_path / "spectral" / "report.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("1,")
        for name in ("report.json", "spectrum.svg", "config.json", "probe.csv", "probe.json"):
            assert (tmp_path / "spectral" / name).is_file()

    def test_kernel_probe(self, tmp_path):
        assert cli.main(["kernel-probe", "--kmax", "4", "--out", str(tmp_path)]) == cli.EXIT_OK
        probe = json.loads((tmp_path / "spectral" / "probe.json").read_text())
        assert probe
        rows = (tmp_path / "spectral" / "probe.csv").read_text().splitlines()
        assert len(rows) == 5
        ratio = np.asarray([float(r.split(",")[3]) for r in rows[1:]])
        assert np.all(ratio > 0)
