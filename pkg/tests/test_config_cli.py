"""Config parsing and the command-line client (in-process service)."""

from __future__ import annotations

import json

import pytest

from fractalwalks.cli import main
from fractalwalks.config import (
    EXPERIMENT_TAGS,
    canonical_text,
    config_hash,
    nominal_dw,
    parse_config_text,
)
from fractalwalks.errors import InvalidParameterError

REFERENCE_INI = """
[graph]
generator = gasket
level = 3

[kernel]
kind = direct
beta = 2.1

[experiment]
tag = identities
seed = 3

[grids]
samples = 40
"""

REFERENCE_JSON = """{
  "graph": {"generator": "gasket", "level": 3},
  "kernel": {"kind": "direct", "beta": 2.1},
  "experiment": {"tag": "identities", "seed": 3},
  "grids": {"samples": [40]}
}"""


def test_ini_and_json_parse_to_the_same_config():
    a = parse_config_text(REFERENCE_INI)
    b = parse_config_text(REFERENCE_JSON)
    assert a == b
    assert canonical_text(a) == canonical_text(b)
    assert config_hash(a) == "1b7c8ef5573d92a7"


def test_canonical_text_round_trips():
    cfg = parse_config_text(REFERENCE_INI)
    again = parse_config_text(canonical_text(cfg))
    assert again == cfg
    assert canonical_text(again) == canonical_text(cfg)


def test_overrides_enter_the_hash():
    base = parse_config_text(REFERENCE_INI)
    seeded = parse_config_text(REFERENCE_INI, seed=9)
    assert seeded.seed == 9
    assert config_hash(seeded) != config_hash(base)
    retagged = parse_config_text(REFERENCE_INI, tag="volume")
    assert retagged.tag == "volume"
    assert config_hash(retagged) != config_hash(base)


def test_tag_override_makes_experiment_section_optional():
    text = "[graph]\ngenerator = gasket\nlevel = 3\n\n[kernel]\nkind = direct\nbeta = 2.1\n"
    cfg = parse_config_text(text, tag="volume")
    assert cfg.tag == "volume"
    assert cfg.seed == 0
    with pytest.raises(InvalidParameterError):
        parse_config_text(text)  # no tag anywhere


def test_beta_validity_windows():
    def cfg_text(tag, beta):
        return (
            f"[graph]\ngenerator = gasket\nlevel = 3\n\n"
            f"[kernel]\nkind = direct\nbeta = {beta}\n\n"
            f"[experiment]\ntag = {tag}\n"
        )

    dw = nominal_dw("gasket")
    # hkp accepts both windows, csj only the upper one
    parse_config_text(cfg_text("hkp", 1.5))
    parse_config_text(cfg_text("hkp", 2.1))
    parse_config_text(cfg_text("csj", 2.1))
    with pytest.raises(InvalidParameterError, match="outside both validity windows"):
        parse_config_text(cfg_text("hkp", 3.5))
    with pytest.raises(InvalidParameterError, match="outside the validity window"):
        parse_config_text(cfg_text("csj", 1.5))
    assert 2.1 < dw < 2.4


def test_kernel_spec_validation():
    base = "[graph]\ngenerator = gasket\nlevel = 3\n\n[experiment]\ntag = identities\n\n"
    with pytest.raises(InvalidParameterError, match="no beta"):
        parse_config_text(base + "[kernel]\nkind = nearest-neighbor\nbeta = 2.0\n")
    with pytest.raises(InvalidParameterError, match="needs beta"):
        parse_config_text(base + "[kernel]\nkind = direct\n")
    with pytest.raises(InvalidParameterError, match="laziness"):
        parse_config_text(base + "[kernel]\nkind = nearest-neighbor\nlaziness = 1.0\n")
    with pytest.raises(InvalidParameterError, match="perturb"):
        parse_config_text(base + "[kernel]\nkind = direct\nbeta = 2.1\nperturb_seed = 1\n")
    with pytest.raises(InvalidParameterError, match="perturb_amplitude"):
        parse_config_text(
            base
            + "[kernel]\nkind = direct\nbeta = 2.1\n"
            + "perturb_seed = 1\nperturb_amplitude = 9\n"
        )
    with pytest.raises(InvalidParameterError, match="subordination"):
        parse_config_text(base + "[kernel]\nkind = subordinated\nbeta = 2.5\n")


def test_unknown_sections_and_keys_rejected():
    with pytest.raises(InvalidParameterError, match="unknown config sections"):
        parse_config_text(REFERENCE_INI + "\n[extra]\nkey = 1\n")
    with pytest.raises(InvalidParameterError, match="unknown kernel keys"):
        parse_config_text(REFERENCE_INI.replace("beta = 2.1", "beta = 2.1\ngamma = 3"))
    with pytest.raises(InvalidParameterError, match="missing"):
        parse_config_text("[graph]\ngenerator = gasket\nlevel = 3\n")
    with pytest.raises(InvalidParameterError, match="not valid JSON"):
        parse_config_text("{broken")
    with pytest.raises(InvalidParameterError, match="not valid INI"):
        parse_config_text("no section header\n")


def test_grid_accessors():
    cfg = parse_config_text(
        REFERENCE_INI.replace("samples = 40", "samples = 40\nns = 1 2 4")
    )
    assert cfg.grids["ns"] == [1.0, 2.0, 4.0]
    assert cfg.int_grid("ns", []) == [1, 2, 4]
    assert cfg.scalar("samples", 0.0) == 40.0
    assert cfg.scalar("absent", 7.0) == 7.0
    with pytest.raises(InvalidParameterError, match="single value"):
        cfg.scalar("ns", 0.0)
    assert "volume" in EXPERIMENT_TAGS and len(EXPERIMENT_TAGS) == 7


@pytest.fixture()
def recipe(tmp_path):
    path = tmp_path / "recipe.ini"
    path.write_text(REFERENCE_INI.replace("samples = 40", "samples = 24"), encoding="utf-8")
    return path


def test_cli_identities_run_writes_artifacts(recipe, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["identities", "--config", str(recipe), "--out", str(out)])
    assert code == 0
    captured = capsys.readouterr()
    assert "tag=identities" in captured.out
    assert (out / "identities_summary.json").exists()
    assert (out / "identities_report.csv").exists()
    summary = json.loads((out / "identities_summary.json").read_text())
    expected = parse_config_text(recipe.read_text(), tag="identities")
    assert summary["config_hash"] == config_hash(expected)
    assert summary["status"] == 0
    assert all(summary["checks"].values())


def test_cli_seed_override_changes_hash(recipe, tmp_path):
    out = tmp_path / "out"
    code = main(["identities", "--config", str(recipe), "--out", str(out), "--seed", "9"])
    assert code == 0
    summary = json.loads((out / "identities_summary.json").read_text())
    expected = parse_config_text(recipe.read_text(), tag="identities", seed=9)
    assert summary["config_hash"] == config_hash(expected)
    assert summary["seed"] == 9


def test_cli_command_overrides_recipe_tag(tmp_path):
    path = tmp_path / "recipe.ini"
    path.write_text(
        "[graph]\ngenerator = gasket\nlevel = 5\n\n[kernel]\nkind = nearest-neighbor\n\n"
        "[experiment]\ntag = identities\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    code = main(["graph", "--config", str(path), "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "volume_summary.json").read_text())
    assert summary["tag"] == "volume"


def test_cli_rerun_is_byte_identical(recipe, tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["identities", "--config", str(recipe), "--out", str(out1)]) == 0
    assert main(["identities", "--config", str(recipe), "--out", str(out2)]) == 0
    for name in ("identities_summary.json", "identities_report.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_cli_invalid_window_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(
        "[graph]\ngenerator = lattice\ndimension = 1\nside = 64\n\n"
        "[kernel]\nkind = direct\nbeta = 3.5\n\n[experiment]\ntag = hkp\n",
        encoding="utf-8",
    )
    code = main(["hkp", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code == 2
    captured = capsys.readouterr()
    assert "outside both validity windows" in captured.out + captured.err


def test_cli_missing_config_exits_2(tmp_path, capsys):
    code = main(["identities", "--config", str(tmp_path / "nope.ini")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_cli_kernel_json_digest(recipe, capsys):
    code = main(["kernel", "--config", str(recipe), "--json"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["kind"] == "direct-heavy-tail"
    assert body["cache"] == "off"
    assert body["is_markov"] is True
    assert body["markov_defect"] <= 1e-12
    assert len(body["fingerprint"]) == 24


def test_cli_report_consolidates(recipe, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["identities", "--config", str(recipe), "--out", str(out)]) == 0
    rep_dir = tmp_path / "consolidated"
    code = main(["report", str(out), "--out", str(rep_dir)])
    assert code == 0
    assert (rep_dir / "consolidated.json").exists()
    body = json.loads((rep_dir / "consolidated.json").read_text())
    assert "identities" in body["experiments"]
    assert "consolidated 1 summaries" in capsys.readouterr().out


def test_cli_report_without_summaries_exits_2(tmp_path, capsys):
    code = main(["report", str(tmp_path)])
    assert code == 2
    assert "no summary files" in capsys.readouterr().err


def test_cli_version_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "fractalwalks" in capsys.readouterr().out
