import hashlib
import json

import numpy as np
import pytest

from mlmetomo.cli import main
from mlmetomo.measurement import Dataset, Pom, pom_to_json, read_dataset_csv, state_to_json, write_dataset_csv
from mlmetomo.operators import basis_projector
from mlmetomo.tmd import laser_state

from oracles import pauli_pom


@pytest.fixture
def files(tmp_path):
    pom = Pom(pauli_pom())
    (tmp_path / "pom.json").write_text(json.dumps(pom_to_json(pom)))
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    (tmp_path / "state.json").write_text(json.dumps(state_to_json(rho)))
    # exact probabilities as counts
    p = np.real(np.einsum("ab,kba->k", rho, pom.effects))
    write_dataset_csv(Dataset(p * 3000, pom.labels), tmp_path / "counts.csv")
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def read_json(path):
    return json.loads(path.read_text())


class TestReconstruct:
    def test_report_and_manifest(self, files, capsys):
        out = files / "r"
        code, stdout, _ = run(capsys, "reconstruct", "--pom", files / "pom.json", "--data", files / "counts.csv",
                              "--lambda", "1e-8", "--out", out)
        assert code == 0
        assert "converged=True" in stdout
        rep = read_json(out / "report.json")
        assert rep["converged"]
        est = read_json(out / "estimator.json")
        assert est is not None
        man = read_json(out / "manifest.json")
        assert man["command"] == "reconstruct" and man["status"] == "ok"
        for entry in man["files"]:
            assert hashlib.sha256((out / entry["name"]).read_bytes()).hexdigest() == entry["sha256"]

    def test_strict_nonconvergence(self, files, capsys):
        out = files / "r3"
        code, _, _ = run(capsys, "reconstruct", "--pom", files / "pom.json", "--data", files / "counts.csv",
                         "--max-iterations", "1", "--strict", "--out", out)
        assert code == 3
        assert read_json(out / "manifest.json")["status"] == "not converged"

    def test_nonconvergence_without_strict(self, files, capsys):
        code, stdout, _ = run(capsys, "reconstruct", "--pom", files / "pom.json", "--data", files / "counts.csv",
                              "--max-iterations", "1")
        assert code == 0 and "converged=False" in stdout

    def test_missing_file(self, files, capsys):
        code, _, err = run(capsys, "reconstruct", "--pom", files / "nope.json", "--data", files / "counts.csv")
        assert code == 2 and "error" in err

    def test_bad_data(self, files, capsys):
        (files / "bad.csv").write_text("label,count\na,-3\n")
        code, _, err = run(capsys, "reconstruct", "--pom", files / "pom.json", "--data", files / "bad.csv")
        assert code == 2 and "line 2" in err

    def test_dimension_mismatch(self, files, capsys):
        (files / "short.csv").write_text("label,count\na,3\n")
        code, _, _ = run(capsys, "reconstruct", "--pom", files / "pom.json", "--data", files / "short.csv")
        assert code == 2


class TestUsage:
    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 1

    def test_missing_required(self, capsys):
        assert run(capsys, "reconstruct", "--pom", "x.json")[0] == 1

    def test_bad_number(self, capsys):
        assert run(capsys, "depth", "--state", "s.json", "--tol", "abc")[0] == 1

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 1

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


class TestSmallCommands:
    def test_validate_pom(self, files, capsys):
        code, stdout, _ = run(capsys, "validate-pom", "--pom", files / "pom.json")
        assert code == 0
        obj = json.loads(stdout)
        assert obj["complete"] and obj["informationally_complete"] and obj["linearly_independent_count"] == 4

    def test_validate_rejects_negative(self, files, capsys):
        bad = pom_to_json(Pom(np.array([basis_projector(2, 0)])))
        bad["effects"][0]["matrix"][1][1] = [-0.5, 0.0]
        (files / "neg.json").write_text(json.dumps(bad))
        assert run(capsys, "validate-pom", "--pom", files / "neg.json")[0] == 2

    def test_simulate_deterministic(self, files, capsys):
        args = ("simulate", "--state", files / "state.json", "--pom", files / "pom.json", "--copies", 500, "--seed", 3)
        assert run(capsys, *args, "--out", files / "s1")[0] == 0
        assert run(capsys, *args, "--out", files / "s2")[0] == 0
        a = read_dataset_csv(files / "s1" / "counts.csv")
        b = read_dataset_csv(files / "s2" / "counts.csv")
        np.testing.assert_array_equal(a.counts, b.counts)
        assert a.total == 500

    def test_simulate_stdout(self, files, capsys):
        code, stdout, _ = run(capsys, "simulate", "--state", files / "state.json", "--pom", files / "pom.json",
                              "--copies", 10)
        assert code == 0 and stdout.startswith("label,count")

    def test_tmd_pom(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "tmd-pom", "--d-rec", 5, "--out", tmp_path)
        assert code == 0 and "outcomes=256" in stdout and "independent=25" in stdout
        assert read_json(tmp_path / "pom.json")["dim"] == 5

    def test_tmd_pom_custom(self, tmp_path, capsys):
        (tmp_path / "chain.json").write_text(json.dumps({"transmissions": [0.5, 1.0], "efficiencies": [1.0, 1.0]}))
        (tmp_path / "alphas.json").write_text(json.dumps([[0, 0], [1.0, 0.5]]))
        code, stdout, _ = run(capsys, "tmd-pom", "--chain", tmp_path / "chain.json", "--alphas", tmp_path / "alphas.json",
                              "--d-rec", 3, "--d-work", 30)
        assert code == 0 and "outcomes=8" in stdout and "d_work=30" in stdout

    def test_tmd_pom_bad_chain(self, tmp_path, capsys):
        (tmp_path / "chain.json").write_text(json.dumps({"transmissions": [0.5]}))
        code, _, err = run(capsys, "tmd-pom", "--chain", tmp_path / "chain.json", "--d-rec", 3)
        assert code == 2 and "efficiencies" in err

    def test_tmd_pom_bad_dims(self, capsys):
        assert run(capsys, "tmd-pom", "--d-rec", 10, "--d-work", 5)[0] == 2

    def test_sh_pom(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "sh-pom", "--out", tmp_path)
        assert code == 0 and "outcomes=35" in stdout and "independent=35" in stdout
        assert len(read_json(tmp_path / "pixels.json")) == 35
        assert len(read_json(tmp_path / "geometry.json")["apertures"]) == 35

    def test_wigner(self, tmp_path, capsys):
        (tmp_path / "vac.json").write_text(json.dumps(state_to_json(basis_projector(3, 0))))
        code, _, _ = run(capsys, "wigner", "--state", tmp_path / "vac.json", "--grid", "-1:1:1", "--out", tmp_path / "w")
        assert code == 0
        table = np.loadtxt(tmp_path / "w" / "surface.csv", delimiter=",", skiprows=1)
        assert table[4, 2] == pytest.approx(2.0)

    def test_wigner_bad_grid(self, tmp_path, capsys):
        (tmp_path / "vac.json").write_text(json.dumps(state_to_json(basis_projector(3, 0))))
        assert run(capsys, "wigner", "--state", tmp_path / "vac.json", "--grid", "1:2")[0] == 2

    def test_depth(self, tmp_path, capsys):
        (tmp_path / "laser.json").write_text(json.dumps(state_to_json(laser_state(4.0, 20))))
        code, stdout, _ = run(capsys, "depth", "--state", tmp_path / "laser.json", "--grid", "-6:6:0.1", "--tol", "1e-2")
        assert code == 0
        assert float(stdout) == pytest.approx(0.394, abs=0.03)

    def test_lambda_sweep(self, files, capsys):
        code, stdout, _ = run(capsys, "lambda-sweep", "--pom", files / "pom.json", "--data", files / "counts.csv",
                              "--lambdas", "1e-4", "1e-2", "1e-1", "--out", files / "ls")
        assert code == 0
        rows = read_json(files / "ls" / "report.json")
        ent = [r["entropy"] for r in rows]
        assert ent == sorted(ent)


class TestStudies:
    def test_bench_qubit_deterministic(self, tmp_path, capsys):
        args = ("bench-qubit", "--states", 2, "--runs", 2, "--N", 500, "--seed", 7)
        assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
        assert run(capsys, *args, "--out", tmp_path / "b")[0] == 0
        a, b = (tmp_path / d / "report.json" for d in "ab")
        assert a.read_bytes() == b.read_bytes()
        assert read_json(a)["seed"] == 7

    def test_bench_qubit_config_file(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({"n_true_states": 1, "n_experiments_per_state": 1, "copies": 200,
                                                        "engine": {"lam": 0.01}}))
        code, stdout, _ = run(capsys, "bench-qubit", "--config", tmp_path / "cfg.json", "--out", tmp_path / "o")
        assert code == 0 and "lossy=" in stdout
        assert read_json(tmp_path / "o" / "report.json")["config"]["engine"]["lam"] == 0.01

    def test_bench_qubit_unknown_key(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({"n_states": 1}))
        assert run(capsys, "bench-qubit", "--config", tmp_path / "cfg.json")[0] == 2

    def test_study_tmd(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "study-tmd", "--d-rec", 5, "--copies", 20000, "--grid", "-6:6:0.2",
                              "--out", tmp_path)
        assert code == 0 and "D_rec=5 ML" in stdout
        assert (tmp_path / "wigner_truth.csv").exists() and (tmp_path / "wigner_D5.csv").exists()
        names = {f["name"] for f in read_json(tmp_path / "manifest.json")["files"]}
        assert names == {"report.json", "wigner_truth.csv", "wigner_D5.csv"}

    def test_sweep_sh(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "sweep-sh", "--parties", 2, "--d-sub", 3, 8, "--out", tmp_path)
        assert code == 0 and "D_sub=8 MLME" in stdout
        assert len(read_json(tmp_path / "report.json")["records"]) == 4

    def test_sweep_sh_ingested(self, tmp_path, capsys):
        from mlmetomo.shackhartmann import LgBasis, build_sensor_pom, hex_aperture_array, simulate_intensities, superposition_state

        basis = LgBasis()
        spom = build_sensor_pom(basis, hex_aperture_array())
        simulate_intensities(superposition_state(basis), spom).to_csv(tmp_path / "ccd.csv")
        code, stdout, _ = run(capsys, "sweep-sh", "--parties", 1, "--d-sub", 8, "--data", tmp_path / "ccd.csv")
        assert code == 0
        assert float(stdout.split("mean fidelity ")[1].split()[0]) > 0.95
