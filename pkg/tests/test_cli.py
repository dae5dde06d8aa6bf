from __future__ import annotations

import json
from importlib import resources

import pytest

from qfock.cli import (EXIT_FAIL, EXIT_HYPOTHESIS, EXIT_USAGE, ConfigError, RunConfig,
                       load_config, main)

FAST = {"d": 2, "N": 4, "draws": 2, "sweep_q": [0.5], "sweep_N": [2, 3],
        "sweep_mu": ["0.3"], "grid_m": 8, "ito_N": 3, "moments_N": 8}

SPEC = """name = "small"
S1 = "{S1}"
S2 = "{S2}"
meshes = [2, 4, 8]
n_test_vectors = 2
tolerance = 1e-6

[[R1]]
interval = [0.0, 1.0]
bioperator = [{{ left = "{left}", right = "", coeff = 1.0 }}]

[[R2]]
interval = [0.0, 1.0]
bioperator = [{{ left = "", right = "", coeff = 1.0 }}]
"""


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def write_config(tmp_path, drop=(), **overrides):
    with resources.as_file(resources.files("qfock") / "data" / "default.toml") as p:
        text = p.read_text()
    lines = []
    for line in text.splitlines():
        key = line.split("=")[0].strip()
        if key in drop:
            continue
        values = {**FAST, **overrides}
        if key in values and "=" in line:
            line = f"{key} = {_toml_value(values[key])}"
        lines.append(line)
    path = tmp_path / "run.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def run_cli(tmp_path, *args, out="out", **overrides):
    cfg = write_config(tmp_path, **overrides)
    return main([*args, "--config", str(cfg), "--out", str(tmp_path / out)])


def read_report(tmp_path, stem, out="out"):
    return json.loads((tmp_path / out / f"{stem}.json").read_text())


def test_bundled_config_loads():
    run = load_config()
    assert run.q == 0.5 and run.nu == 0.3 + 0.4j and run.relations == tuple(range(1, 9))
    assert "out" not in run.echo()


def test_missing_and_unknown_fields(tmp_path):
    with pytest.raises(ConfigError, match="missing config fields: seed"):
        load_config(write_config(tmp_path, drop=("seed",)))
    data = dict(vars(load_config()))
    with pytest.raises(ConfigError, match="unknown config fields: extra"):
        RunConfig.from_dict({**data, "extra": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**data, "q": 1.0})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**data, "relations": [9]})
    assert main(["relations", "--config", str(tmp_path / "nope.toml")]) == EXIT_USAGE


def test_relations_pass_and_corrupt_flag(tmp_path, capsys):
    assert run_cli(tmp_path, "relations") == 0
    rep = read_report(tmp_path, "relations")
    assert rep["verdict"] == "pass" and len(rep["results"]) == 8
    assert run_cli(tmp_path, "relations", debug_corrupt_q=True) == EXIT_FAIL
    err = capsys.readouterr().err
    assert "relation 1 failed" in err and "relation 2 failed" not in err


def test_normal_order_command(tmp_path, capsys):
    assert run_cli(tmp_path, "normal-order", "G(0.5) G(0.5)") == 0
    assert capsys.readouterr().out.splitlines()[0] == "G(0.25)"
    assert run_cli(tmp_path, "normal-order", "a(phi1) a*(psi1)") == 0
    rep = read_report(tmp_path, "normal_order")
    assert rep["normal_form"].startswith("0.5 a*(psi1) G(1) a(phi1) + ")
    assert rep["residual"] <= 1e-10
    assert run_cli(tmp_path, "normal-order", "a(phi1) + ") == EXIT_USAGE


def test_norm_sweep_command(tmp_path):
    assert run_cli(tmp_path, "norm-sweep") == 0
    rep = read_report(tmp_path, "norm_sweep")
    assert rep["violations"] == 0
    assert any(r["param"].startswith("integral") for r in rep["rows"])


def test_moments_command(tmp_path):
    assert run_cli(tmp_path, "moments") == 0
    csv = (tmp_path / "out" / "moments.csv").read_text().splitlines()
    assert csv[0] == "order,matrix,oracle,delta"
    assert csv[3].split(",")[2] == "2.5"
    assert run_cli(tmp_path, "moments", moments_N=6) == EXIT_USAGE


def test_ito_command(tmp_path):
    spec = tmp_path / "spec.toml"
    spec.write_text(SPEC.format(S1="A", S2="A*", left=""))
    assert run_cli(tmp_path, "ito", str(spec), q=0.0) == 0
    rep = read_report(tmp_path, "ito")
    assert rep["report"]["rule"] == "kw0" and rep["verdict"] == "pass"
    assert run_cli(tmp_path, "ito", str(spec), q=0.5) == EXIT_FAIL
    bad = tmp_path / "bad.toml"
    bad.write_text(SPEC.format(S1="A", S2="A*", left="a*(chi[0.5,1])"))
    assert run_cli(tmp_path, "ito", str(bad)) == EXIT_HYPOTHESIS
    bad.write_text(SPEC.format(S1="A", S2="A*", left="").replace("[0.0, 1.0]", "[0.0, 0.3]", 1))
    assert run_cli(tmp_path, "ito", str(bad)) == EXIT_USAGE
    assert run_cli(tmp_path, "ito", "no_such_spec.toml") == EXIT_USAGE


@pytest.mark.parametrize("command", [("relations",), ("moments",), ("normal-order", "a(x) a*(y)")])
def test_reports_are_deterministic(tmp_path, command):
    assert run_cli(tmp_path, *command, out="a") == run_cli(tmp_path, *command, out="b")
    stem = command[0].replace("-", "_")
    for ext in ("json", "csv"):
        assert (tmp_path / "a" / f"{stem}.{ext}").read_bytes() == \
            (tmp_path / "b" / f"{stem}.{ext}").read_bytes()


def test_seed_override_changes_relations_report(tmp_path):
    run_cli(tmp_path, "relations", out="a")
    cfg = write_config(tmp_path)
    main(["relations", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "7"])
    assert read_report(tmp_path, "relations", "b")["config"]["seed"] == 7
    assert (tmp_path / "a" / "relations.json").read_bytes() != \
        (tmp_path / "b" / "relations.json").read_bytes()
