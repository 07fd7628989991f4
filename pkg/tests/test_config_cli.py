import copy
import json

import pytest

from multidefault import cli
from multidefault import optimizer as optmod
from multidefault.config import fixture_path, from_dict, load_config
from multidefault.errors import AdmissibilityError, ConfigurationError

PROVENANCE = {"schema_version", "tool", "version", "command", "config_sha256", "seed"}

ONE_NAME_OPT = {
    "schema_version": 1,
    "seed": 5,
    "model": {"variant": "independent", "hazards": [0.3]},
    "assets": {"drift": {"default": [0.08]}, "vol": {"default": [[0.2]]}, "gamma": {"default": [0.4]}},
    "utility": {"risk_aversion": 2.0},
    "optimizer": {"T": 1.0, "grid": 3, "intervals": 2, "verify": None},
    "simulation": {"T": 1.0, "paths": 3, "dt": 0.1, "strategy": "optimal"},
}


def write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_full_loss_jump_is_rejected_with_admissibility_reason():
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["assets"]["gamma"]["default"] = [1.0]
    with pytest.raises(AdmissibilityError, match="pi.gamma < 1"):
        from_dict(raw)


def test_name_dependent_coefficients_rejected_for_optimizer():
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["model"]["hazards"] = [0.3, 0.2]
    raw["assets"]["drift"]["scenarios"] = {"{1,2}": {"base": [0.08], "by_name": {"1": [0.01]}}}
    with pytest.raises(ConfigurationError, match="optimizer state reduction"):
        from_dict(raw)
    del raw["optimizer"]
    del raw["simulation"]
    from_dict(raw)  # fine without an optimizer


def test_unknown_key_is_rejected():
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["model"]["hazard_rates"] = [0.1]
    with pytest.raises(ConfigurationError, match="hazard_rates"):
        from_dict(raw)


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema_version": 1,\n  "seed": ,\n}')
    with pytest.raises(ConfigurationError, match="line 3, column 11"):
        load_config(p)


def test_config_hash_ignores_formatting(tmp_path):
    a = load_config(write(tmp_path, ONE_NAME_OPT, "a.json"))
    p = tmp_path / "b.json"
    p.write_text(json.dumps(ONE_NAME_OPT, indent=4, sort_keys=True))
    assert load_config(p).sha256 == a.sha256


def test_price_fixture(tmp_path, capsys):
    assert cli.main(["price", "--config", str(fixture_path("survival_n1.json")), "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "prices.json").read_text())
    assert PROVENANCE <= set(out)
    for rec in out["records"]:
        assert rec["value"] == pytest.approx(0.6065306597, abs=1e-9)
        assert rec["monte_carlo"]["within_3_stderr"]
    assert (tmp_path / "prices.csv").read_text().startswith("# command=price config_sha256=")
    assert "0.606531" in capsys.readouterr().out


def test_optimize_and_simulate_are_reproducible(tmp_path):
    cfg = write(tmp_path, ONE_NAME_OPT)
    outputs = []
    for run, threads in (("r1", "1"), ("r2", "2")):
        for cmd in ("optimize", "simulate"):
            assert cli.main([cmd, "--config", cfg, "--threads", threads, "--out", str(tmp_path / run)]) == 0
        outputs.append({f: (tmp_path / run / f).read_bytes() for f in ("optimize.json", "values.csv", "paths.csv", "simulate.json")})
    assert outputs[0] == outputs[1]
    doc = json.loads(outputs[0]["optimize.json"])
    assert PROVENANCE <= set(doc) and doc["seed"] == 5
    assert "threads" not in outputs[0]["optimize.json"].decode()


def test_seed_override_changes_provenance(tmp_path):
    cfg = write(tmp_path, ONE_NAME_OPT)
    assert cli.main(["simulate", "--config", cfg, "--seed", "77", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "simulate.json").read_text())["seed"] == 77


def test_exit_code_configuration(tmp_path, capsys):
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["schema_version"] = 2
    assert cli.main(["optimize", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["optimize", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_numerical(tmp_path):
    raw = {
        "schema_version": 1,
        "model": {"variant": "independent", "hazards": [0.1, [[1.0, 0.0], [None, 0.1]]]},
        "products": [{"type": "kth", "k": 2, "T": 3.0}],
        # name 2 cannot have defaulted before t = 1, so this scenario has no mass
        "observation": {"t": 2.0, "defaulted": [2], "default_times": [0.5]},
    }
    assert cli.main(["price", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 3


def test_exit_code_verification(tmp_path, monkeypatch):
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["optimizer"]["verify"] = {"paths": 1000, "families": 0}
    monkeypatch.setattr(optmod, "verify_global", lambda *a, **k: {"passed": False})
    assert cli.main(["optimize", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 4


def test_optimize_with_verification_passes(tmp_path):
    raw = copy.deepcopy(ONE_NAME_OPT)
    raw["optimizer"]["verify"] = {"paths": 100000, "families": 3, "family_paths": 20000}
    assert cli.main(["optimize", "--config", write(tmp_path, raw), "--out", str(tmp_path)]) == 0
    ver = json.loads((tmp_path / "optimize.json").read_text())["report"]["verification"]
    assert ver["passed"] and ver["regrouping_gap"] == 0.0
