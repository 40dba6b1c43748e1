import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from stochcert import cli
from stochcert.cli import (
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_REJECTED,
    EXIT_VALIDATION,
    ScenarioError,
    load_scenario,
    main,
    run,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _walk_doc() -> dict:
    return yaml.safe_load((SCENARIOS / "symmetric_walk.yaml").read_text())


def _write(tmp_path: Path, doc: dict, name="scenario.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture()
def identity_file(tmp_path):
    doc = _walk_doc()
    doc["name"] = "identity"
    doc["system"]["dynamics"] = ["x1 + 0*th1"]
    doc["system"]["disturbance"] = {"kind": "finite", "atoms": [[0.0]], "probs": [1.0]}
    doc["mc"]["horizon"] = 50
    doc["mc"]["trials"] = 200
    return _write(tmp_path, doc, "identity.yaml")


class TestLoading:
    def test_bundled_scenarios_load(self):
        for name in ("symmetric_walk", "biased_walk", "invariant_contraction"):
            sc = load_scenario(SCENARIOS / f"{name}.yaml")
            assert sc.system.n == 1
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        assert sc.grid.cells.tolist() == [12]

    def test_missing_file(self):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario("/nonexistent/path.yaml")

    def test_bad_probs_reported(self, tmp_path):
        doc = _walk_doc()
        doc["system"]["disturbance"]["probs"] = [0.5, 0.4]
        with pytest.raises(ScenarioError, match="sum"):
            load_scenario(_write(tmp_path, doc))

    def test_target_outside_safe_names_witness(self, tmp_path):
        doc = _walk_doc()
        doc["regions"]["target"] = "x1 >= 11.2 && x1 < 11.4"
        with pytest.raises(ScenarioError, match="witness"):
            load_scenario(_write(tmp_path, doc))

    def test_bad_expression_located(self, tmp_path):
        doc = _walk_doc()
        doc["system"]["dynamics"] = ["x1 +"]
        with pytest.raises(ScenarioError, match="dynamics\\[0\\]"):
            load_scenario(_write(tmp_path, doc))

    def test_all_errors_collected(self, tmp_path):
        doc = _walk_doc()
        doc["system"]["dynamics"] = ["x1 +"]
        doc["thresholds"]["epsilon2"] = 2.0
        doc["mc"]["trials"] = 0
        with pytest.raises(ScenarioError) as err:
            load_scenario(_write(tmp_path, doc))
        assert len(err.value.errors) >= 3

    def test_safe_set_outside_grid_box(self, tmp_path):
        doc = _walk_doc()
        doc["grid"] = {"lower": [-0.5], "upper": [8.5], "cells": [9]}
        with pytest.raises(ScenarioError, match="grid box"):
            load_scenario(_write(tmp_path, doc))

    def test_initial_states_list(self, tmp_path):
        doc = _walk_doc()
        del doc["initial_state"]
        doc["initial_states"] = [[3.0], [5.0]]
        doc["mc"]["trials"] = 2000
        sc = load_scenario(_write(tmp_path, doc))
        assert sc.x0s.shape == (2, 1)
        report = run("solve", sc)
        values = report.sections["values"]
        assert len(values) == 2
        assert values[1]["reach_avoid"]["value"] == pytest.approx(0.5, abs=1e-6)

    def test_gaussian_disturbance_block(self, tmp_path):
        doc = _walk_doc()
        doc["system"]["dynamics"] = ["0.5*x1 + th1"]
        doc["system"]["disturbance"] = {"kind": "gaussian", "mean": 0.0,
                                        "std": 0.4, "atoms": 8}
        doc["regions"] = {"safe": "x1 > -6 && x1 < 6", "target": "x1 >= 4 && x1 < 6"}
        doc["grid"] = {"lower": [-8.0], "upper": [8.0], "cells": [64]}
        sc = load_scenario(_write(tmp_path, doc))
        assert sc.system.dist.atoms.shape == (8, 1)


class TestCommands:
    def test_simulate_writes_csv(self, tmp_path):
        sc = load_scenario(SCENARIOS / "invariant_contraction.yaml")
        report = run("simulate", sc, out_dir=tmp_path)
        assert report.passed
        rows = (tmp_path / "trajectory.csv").read_text().strip().splitlines()
        assert len(rows) == sc.mc_horizon + 2  # header + states

    def test_solve_reports_values_and_csv(self, tmp_path):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        report = run("solve", sc, out_dir=tmp_path)
        values = report.sections["values"][0]
        assert values["reach_avoid"]["value"] == pytest.approx(0.3, abs=1e-6)
        assert values["reach_avoid"]["method"] == "dp"
        assert (tmp_path / "field_reach_avoid.csv").exists()
        assert report.sections["cross_check"]["exact_vs_iterative_sup_gap"] < 1e-6
        verdicts = report.sections["thresholds"]
        assert verdicts["reach_avoid"]["certified"]  # 0.3 >= epsilon2 = 0.29
        assert verdicts["liveness"]["certified"]  # 0 >= epsilon1 = 0

    def test_report_all_fails_uncertified_threshold(self, tmp_path):
        doc = _walk_doc()
        doc["thresholds"]["epsilon2"] = 0.35  # above the true value 0.3
        doc["mc"]["trials"] = 2000
        sc = load_scenario(_write(tmp_path, doc))
        report = run("report-all", sc)
        assert not report.passed
        assert not report.sections["thresholds"]["reach_avoid"]["certified"]

    def test_estimate(self):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        report = run("estimate", sc)
        est = report.sections["estimates"][0]
        assert abs(est["reach_avoid"]["value"] - 0.3) < 0.02
        assert est["liveness"]["direction"] == "upper_biased_for_liveness"

    def test_estimate_deterministic(self):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        a = run("estimate", sc).to_json()
        b = run("estimate", sc).to_json()
        assert a == b

    def test_assumption1_gambler_holds(self):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        report = run("assumption1", sc)
        sect = report.sections["assumption1"]
        assert sect["holds"] and sect["sup_stay_probability"] < 1e-9

    def test_assumption1_identity_fails(self, identity_file):
        sc = load_scenario(identity_file)
        report = run("assumption1", sc)
        sect = report.sections["assumption1"]
        assert not sect["holds"]
        assert sect["sup_stay_probability"] == pytest.approx(1.0, abs=1e-12)

    def test_solve_survives_singular_exact_oracle(self, identity_file):
        # the iterative least fixed point is still valid when the exact
        # solve is singular (mass never absorbs)
        sc = load_scenario(identity_file)
        report = run("solve", sc)
        assert report.passed
        assert "unavailable" in str(report.sections["cross_check"])
        assert report.sections["values"][0]["reach_avoid"]["value"] == 0.0

    def test_extract_then_verify_round_trip(self, tmp_path):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        report = run("extract", sc, out_dir=tmp_path)
        assert report.passed
        cert_file = tmp_path / "certificate_ra_lower_a1.yaml"
        assert cert_file.exists()
        verify = run("verify", sc, certificate=str(cert_file))
        assert verify.passed
        assert verify.sections["verify"]["kind"] == "ra_lower_a1"

    def test_every_extracted_kind_verifies_from_file(self, tmp_path):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        run("extract", sc, out_dir=tmp_path)
        for cert_file in sorted(tmp_path.glob("certificate_*.yaml")):
            verify = run("verify", sc, certificate=str(cert_file))
            assert verify.passed, f"{cert_file.name}: {verify.to_text()}"

    def test_verify_rejects_corrupted_certificate(self, tmp_path):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        run("extract", sc, out_dir=tmp_path)
        cert_file = tmp_path / "certificate_ra_lower_a1.yaml"
        doc = yaml.safe_load(cert_file.read_text())
        doc["function"]["values"] = [v + 0.05 for v in doc["function"]["values"]]
        doc["function"]["region_pins"] = None
        cert_file.write_text(yaml.safe_dump(doc))
        verify = run("verify", sc, certificate=str(cert_file))
        assert not verify.passed
        assert verify.sections["verify"]["witnesses"]

    def test_synthesize(self, tmp_path):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        report = run("synthesize", sc, out_dir=tmp_path)
        sect = report.sections["synthesis"]
        assert sect["status"] == "validated"
        assert sect["threshold"] >= 0.25
        assert (tmp_path / "synthesis.lp.txt").exists()

    def test_extract_refused_kind(self, identity_file):
        sc = load_scenario(identity_file)
        with pytest.raises(cli.CertificateError):
            run("extract", sc, condition="ra_lower_a1")

    def test_report_all_bundled(self, tmp_path):
        for name in ("symmetric_walk", "biased_walk", "invariant_contraction"):
            sc = load_scenario(SCENARIOS / f"{name}.yaml")
            report = run("report-all", sc, out_dir=tmp_path / name)
            assert report.passed, f"{name}: {report.to_text()}"
            for entry in report.sections["dp_vs_mc"]:
                assert entry["reach_avoid"]["agree"] and entry["liveness"]["agree"]

    def test_unknown_condition_kind(self):
        sc = load_scenario(SCENARIOS / "symmetric_walk.yaml")
        with pytest.raises(ScenarioError, match="unknown condition"):
            run("verify", sc, certificate="x", condition="nonsense")

    def test_report_all_quantized_gaussian(self, tmp_path):
        # noisy contraction with an eight-atom gaussian quantization: the
        # invariant region keeps everything alive and the target absorbs
        doc = {
            "name": "noisy-contraction",
            "system": {
                "n": 1, "m": 1, "dynamics": ["0.5*x1 + th1"],
                "disturbance": {"kind": "gaussian", "mean": 0.0, "std": 0.4,
                                "atoms": 8},
            },
            "regions": {"safe": "x1 > -6 && x1 < 6",
                        "target": "x1 >= -0.5 && x1 < 0.5"},
            "initial_state": [3.0],
            "thresholds": {"epsilon1": 0.95, "epsilon2": 0.95},
            "grid": {"lower": [-8.0], "upper": [8.0], "cells": [64]},
            "gamma": 0.9,
            "mc": {"horizon": 300, "trials": 5000, "delta": 0.05, "seed": 99},
            "check": {"tolerance": 1.0e-6, "extra_points": 100, "point_seed": 3},
        }
        sc = load_scenario(_write(tmp_path, doc, "gaussian.yaml"))
        report = run("report-all", sc)
        assert report.passed, report.to_text()
        assert report.sections["thresholds"]["reach_avoid"]["certified"]
        assert report.sections["thresholds"]["liveness"]["certified"]


class TestMain:
    def test_ok_exit(self, tmp_path, capsys):
        code = main(["--scenario", str(SCENARIOS / "symmetric_walk.yaml"),
                     "--command", "solve", "--quiet"])
        assert code == EXIT_OK

    def test_report_written(self, tmp_path):
        code = main(["--scenario", str(SCENARIOS / "symmetric_walk.yaml"),
                     "--command", "assumption1", "--out", str(tmp_path), "--quiet"])
        assert code == EXIT_OK
        assert (tmp_path / "report.txt").exists()
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["command"] == "assumption1"

    def test_validation_exit(self, tmp_path, capsys):
        doc = _walk_doc()
        doc["system"]["disturbance"]["probs"] = [0.5, 0.4]
        path = _write(tmp_path, doc)
        code = main(["--scenario", str(path), "--command", "solve", "--quiet"])
        assert code == EXIT_VALIDATION
        assert "sum" in capsys.readouterr().err

    def test_verify_failure_exit(self, tmp_path):
        main(["--scenario", str(SCENARIOS / "symmetric_walk.yaml"),
              "--command", "extract", "--out", str(tmp_path), "--quiet"])
        cert_file = tmp_path / "certificate_ra_lower_a1.yaml"
        doc = yaml.safe_load(cert_file.read_text())
        doc["epsilon"] = 0.9  # claims more than the field value at x0
        cert_file.write_text(yaml.safe_dump(doc))
        code = main(["--scenario", str(SCENARIOS / "symmetric_walk.yaml"),
                     "--command", "verify", "--certificate", str(cert_file),
                     "--quiet"])
        assert code == EXIT_REJECTED

    def test_numeric_failure_exit(self, tmp_path, capsys):
        doc = _walk_doc()
        # dynamics blow up at the node x1 = 1 when the kernel is built
        doc["system"]["dynamics"] = ["1/(x1 - 1) + 0*th1"]
        path = _write(tmp_path, doc)
        code = main(["--scenario", str(path), "--command", "solve", "--quiet"])
        assert code == EXIT_NUMERIC
        assert "division" in capsys.readouterr().err
