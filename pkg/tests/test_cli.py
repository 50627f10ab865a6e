"""End-to-end tests for the batch driver: exit codes, schemas, determinism."""

import json

import numpy as np
import pytest

from kolmolab.cli import compile_expression, main
from kolmolab.errors import BadParameters, NumericalError
from kolmolab.group_conv import GridField

KINETIC = {"m0": 1, "blocks": [[[1.0]]]}


def _write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, cmd, cfg, out_name="out", extra=()):
    cfg_path = _write_cfg(tmp_path, f"{cmd}-cfg.json", cfg)
    out_dir = tmp_path / out_name
    code = main([cmd, str(cfg_path), "--out", str(out_dir), *extra])
    return code, out_dir


@pytest.fixture(autouse=True)
def _isolate_seed_env(monkeypatch):
    monkeypatch.delenv("KOLMOLAB_SEED", raising=False)


# ---------------------------------------------------------------------------
# usage errors (exit 2)
# ---------------------------------------------------------------------------


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "config.json"])
    assert exc.value.code == 2


def test_no_arguments_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_bad_threads_value_is_usage_error(tmp_path):
    cfg = _write_cfg(tmp_path, "c.json", {"structure": KINETIC, "mc": {}})
    with pytest.raises(SystemExit) as exc:
        main(["mc", str(cfg), "--threads", "0"])
    assert exc.value.code == 2


def test_missing_config_file_returns_2(tmp_path, capsys):
    code = main(["mc", str(tmp_path / "nope.json")])
    assert code == 2
    assert "cannot read config" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# validation errors (exit 3)
# ---------------------------------------------------------------------------


def test_invalid_json_reports_line_and_column(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"structure": }')
    code = main(["mc", str(path)])
    assert code == 3
    err = capsys.readouterr().err
    assert "invalid JSON at line 1" in err
    assert "column" in err


def test_empty_config_rejected(tmp_path):
    code, _ = _run(tmp_path, "mc", {})
    assert code == 3


def test_unknown_top_level_key_rejected(tmp_path, capsys):
    cfg = {
        "structure": KINETIC,
        "mc": {"start": [0.0, 0.0], "t": 1.0, "n": 10, "method": "exact"},
        "bogus": 1,
    }
    code, _ = _run(tmp_path, "mc", cfg)
    assert code == 3
    assert "bogus" in capsys.readouterr().err


def test_second_section_rejected(tmp_path):
    cfg = {
        "structure": KINETIC,
        "mc": {"start": [0.0, 0.0], "t": 1.0, "n": 10, "method": "exact"},
        "kernel-norms": {"p_values": [1.0]},
    }
    code, _ = _run(tmp_path, "mc", cfg)
    assert code == 3


def test_unknown_section_key_rejected(tmp_path, capsys):
    cfg = {
        "structure": KINETIC,
        "mc": {"start": [0.0, 0.0], "t": 1.0, "n": 10, "method": "exact", "spin": 3},
    }
    code, _ = _run(tmp_path, "mc", cfg)
    assert code == 3
    assert "spin" in capsys.readouterr().err


def test_p_below_one_rejected(tmp_path, capsys):
    cfg = {"structure": KINETIC, "kernel-norms": {"p_values": [0.5]}}
    code, _ = _run(tmp_path, "kernel-norms", cfg)
    assert code == 3
    assert "p must be >= 1" in capsys.readouterr().err


def test_cfl_violation_returns_3(tmp_path, capsys):
    cfg = {
        "structure": KINETIC,
        "maxprinciple": {
            "domain": {"V": [[0.0, 1.0]], "U": [[0.0, 2.0]], "T": 0.25},
            "grid": {"n": [21, 21], "dt": 0.25},
            "coefficients": {"d": -0.5},
            "boundary": {"gamma_P": "exp(-3*(x1-0.4)*(x1-0.4))"},
        },
    }
    code, _ = _run(tmp_path, "maxprinciple", cfg)
    assert code == 3
    assert "validation error" in capsys.readouterr().err


def test_bad_seed_env_returns_3(tmp_path, monkeypatch):
    monkeypatch.setenv("KOLMOLAB_SEED", "not-a-number")
    cfg = {
        "structure": KINETIC,
        "mc": {"start": [0.0, 0.0], "t": 1.0, "n": 10, "method": "exact"},
    }
    code, _ = _run(tmp_path, "mc", cfg)
    assert code == 3


# ---------------------------------------------------------------------------
# numerical failures (exit 4)
# ---------------------------------------------------------------------------


def test_expression_zero_division_returns_4(tmp_path, capsys):
    cfg = {
        "structure": KINETIC,
        "maxprinciple": {
            "domain": {"V": [[0.0, 1.0]], "U": [[0.0, 2.0]], "T": 0.25},
            "grid": {"n": [21, 21], "dt": 0.0125},
            "coefficients": {"d": -0.5},
            "boundary": {"gamma_P": "1/(t-t)"},
        },
    }
    code, _ = _run(tmp_path, "maxprinciple", cfg)
    assert code == 4
    assert "numerical failure" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# expression language gates
# ---------------------------------------------------------------------------


def test_expression_evaluates_vectorized():
    fn = compile_expression("x1 + 2*t - min(x2, 0)", 2, "w")
    x1 = np.array([1.0, -1.0])
    x2 = np.array([-3.0, 2.0])
    t = np.array([0.5, 0.25])
    np.testing.assert_allclose(fn(x1, x2, t), [5.0, -0.5])


def test_expression_unknown_variable_rejected():
    with pytest.raises(BadParameters, match="unknown variable"):
        compile_expression("x3 + t", 2, "w")


def test_expression_power_operator_rejected():
    with pytest.raises(BadParameters, match="disallowed syntax"):
        compile_expression("x1**2", 1, "w")


def test_expression_bool_literal_rejected():
    with pytest.raises(BadParameters, match="not a number"):
        compile_expression("True", 1, "w")


def test_expression_unknown_function_rejected():
    with pytest.raises(BadParameters, match="unknown function"):
        compile_expression("__import__(1)", 1, "w")


def test_expression_keyword_arguments_rejected():
    with pytest.raises(BadParameters, match="positional"):
        compile_expression("min(x1, t=1)", 1, "w")
    with pytest.raises(BadParameters, match="positional"):
        compile_expression("sin()", 1, "w")


def test_expression_scalar_zero_division_maps_to_numerical_error():
    fn = compile_expression("1/(t-t)", 1, "w")
    with pytest.raises(NumericalError, match="division by zero"):
        fn(0.5, 0.3)


def test_expression_syntax_error_rejected():
    with pytest.raises(BadParameters, match="cannot parse"):
        compile_expression("x1 +", 1, "w")


# ---------------------------------------------------------------------------
# successful runs and their outputs
# ---------------------------------------------------------------------------


def test_kernel_norms_run_and_divergence_flag(tmp_path):
    cfg = {
        "structure": KINETIC,
        "kernel-norms": {"p_values": [1.0, 1.2, 1.4, 1.5], "T": 1.0},
    }
    code, out = _run(tmp_path, "kernel-norms", cfg)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    rows = report["results"]["rows"]
    flags = {r["p"]: r["divergent_flag"] for r in rows}
    assert flags == {1.0: False, 1.2: False, 1.4: False, 1.5: True}
    for r in rows:
        if not r["divergent_flag"]:
            assert r["rel_err"] < 1e-3
    csv = (out / "kernel_norms.csv").read_text()
    assert csv.splitlines()[0] == "p,closed_form,quadrature,rel_err,divergent_flag"
    assert len(csv.splitlines()) == 5


def test_kernel_norms_empty_sweep_writes_header_only_csv(tmp_path):
    cfg = {"structure": KINETIC, "kernel-norms": {"p_values": []}}
    code, out = _run(tmp_path, "kernel-norms", cfg)
    assert code == 0
    assert (out / "kernel_norms.csv").read_text() == (
        "p,closed_form,quadrature,rel_err,divergent_flag\n"
    )


def test_report_json_is_canonical(tmp_path):
    cfg = {"structure": KINETIC, "kernel-norms": {"p_values": [1.0, 1.5]}}
    code, out = _run(tmp_path, "kernel-norms", cfg)
    assert code == 0
    text = (out / "report.json").read_text()
    assert text.endswith("\n")
    parsed = json.loads(text)
    assert json.dumps(parsed, sort_keys=True, indent=2) + "\n" == text
    # non-finite values are serialized as strings, never bare NaN/Infinity
    assert "Infinity" not in text and "NaN" not in text
    divergent_row = parsed["results"]["rows"][1]
    assert divergent_row["closed_form"] == "inf"  # divergent exponent, flagged not crashed
    assert divergent_row["divergent_flag"] is True
    assert parsed["results"]["rows"][0]["closed_form"] == 1.0  # unit mass on the slab


def test_mc_run_is_byte_deterministic(tmp_path):
    cfg = {
        "structure": KINETIC,
        "seed": 5,
        "mc": {"start": [0.5, -0.2], "t": 1.0, "n": 1500, "method": "exact", "bins": 10},
    }
    code1, out1 = _run(tmp_path, "mc", cfg, out_name="run1")
    code2, out2 = _run(tmp_path, "mc", cfg, out_name="run2")
    assert code1 == code2 == 0
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    assert (out1 / "samples.csv").read_bytes() == (out2 / "samples.csv").read_bytes()
    report = json.loads((out1 / "report.json").read_text())
    assert report["seed"] == 5
    assert report["results"]["n"] == 1500
    assert (out1 / "samples.csv").read_text().splitlines()[0] == "z1,z2"


def test_seed_env_overrides_config(tmp_path, monkeypatch):
    cfg = {
        "structure": KINETIC,
        "seed": 5,
        "mc": {"start": [0.5, -0.2], "t": 1.0, "n": 500, "method": "exact", "bins": 8},
    }
    _, out_base = _run(tmp_path, "mc", cfg, out_name="base")
    monkeypatch.setenv("KOLMOLAB_SEED", "12345")
    code, out_env = _run(tmp_path, "mc", cfg, out_name="env")
    assert code == 0
    report = json.loads((out_env / "report.json").read_text())
    assert report["seed"] == 12345
    assert (out_base / "samples.csv").read_bytes() != (out_env / "samples.csv").read_bytes()


def test_mc_em_requires_steps(tmp_path):
    cfg = {
        "structure": KINETIC,
        "mc": {"start": [0.0, 0.0], "t": 1.0, "n": 100, "method": "em"},
    }
    code, _ = _run(tmp_path, "mc", cfg)
    assert code == 3


def test_solve_refinement_ladder_and_orders_csv(tmp_path):
    pi = "3.141592653589793"
    ref = f"sin({pi}*x1)*(1+x2)*exp(-t)"
    cfg = {
        "structure": KINETIC,
        "solve": {
            "domain": {"V": [[0.0, 1.0]], "U": [[0.0, 1.0]], "T": 0.2},
            "grid": {"n": [11, 11], "dt": 0.005},
            "coefficients": {
                "g": f"({pi}*{pi} - 1)*{ref} - x1*sin({pi}*x1)*exp(-t)"
            },
            "boundary": {"gamma_P": ref},
            "reference": ref,
            "refine_levels": 2,
            "dt_rule": "quadratic",
        },
    }
    code, out = _run(tmp_path, "solve", cfg)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    levels = report["results"]["levels"]
    assert len(levels) == 2
    assert levels[1]["error"] < levels[0]["error"]
    assert levels[1]["order"] > 1.5
    csv_lines = (out / "solve_orders.csv").read_text().splitlines()
    assert csv_lines[0] == "level,n_max,h_max,dt,error,order"
    assert len(csv_lines) == 3
    assert (out / "solution.gfb").exists()
    u = GridField.load(out / "solution.gfb")
    assert u.values.shape == (21, 21, 161)


def test_maxprinciple_reports_nonnegative_margin(tmp_path):
    cfg = {
        "structure": KINETIC,
        "maxprinciple": {
            "domain": {"V": [[0.0, 1.0]], "U": [[0.0, 2.0]], "T": 0.25},
            "grid": {"n": [21, 21], "dt": 0.0125},
            "coefficients": {"d": -0.5},
            "boundary": {"gamma_P": "exp(-3*(x1-0.4)*(x1-0.4))*exp(-2*(x2-1)*(x2-1))"},
        },
    }
    code, out = _run(tmp_path, "maxprinciple", cfg)
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]
    assert res["satisfied"] is True
    assert res["margin"] >= 0.0
    assert res["excess"] == 0.0
    csv_lines = (out / "maxprinciple.csv").read_text().splitlines()
    assert csv_lines[0] == "sup_interior,sup_outflow,M,margin"
    assert len(csv_lines) == 2


def test_embed_l1_run(tmp_path):
    cfg = {
        "structure": KINETIC,
        "seed": 11,
        "embed": {
            "variant": "l1",
            "q": 1.0,
            "eps0": 0.25,
            "fields": {
                "box": [[-2.0, 2.0], [-2.0, 2.0]],
                "t_range": [0.0, 1.0],
                "shape": [25, 25, 9],
                "count": 2,
            },
        },
    }
    code, out = _run(tmp_path, "embed", cfg)
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]
    assert len(res["rows"]) == 2
    assert all(r["satisfied"] for r in res["rows"])
    assert (out / "embed.csv").read_text().splitlines()[0] == (
        "index,p,q,lhs,bound,sigma,ratio,satisfied"
    )


def test_embed_young_requires_exponents(tmp_path):
    cfg = {
        "structure": KINETIC,
        "embed": {
            "variant": "young",
            "fields": {
                "box": [[-1.0, 1.0], [-1.0, 1.0]],
                "t_range": [0.0, 0.5],
                "shape": [9, 9, 5],
            },
        },
    }
    code, _ = _run(tmp_path, "embed", cfg)
    assert code == 3


def test_degiorgi_run_certifies_sound_bound(tmp_path):
    cfg = {
        "structure": KINETIC,
        "degiorgi": {
            "field": {
                "box": [[0.0, 1.0], [0.0, 1.0]],
                "t_range": [0.0, 1.0],
                "shape": [9, 9, 5],
                "expr": "0.3 + 0.2*sin(3.14159*x1)*sin(3.14159*x2)*t",
            },
            "exponents": {"Q": 2, "eps0": 0.05, "theta": 0.05},
            "M": "auto",
        },
    }
    code, out = _run(tmp_path, "degiorgi", cfg)
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]
    assert res["sound"] is True
    assert res["certified_bound"] >= res["sup_observed"]
    assert (out / "decay.csv").read_text().splitlines()[0] == "n,level,measure,energy"


def test_degiorgi_loads_saved_container(tmp_path):
    box = ((0.0, 1.0), (0.0, 1.0))
    u = GridField.from_function(
        box, (0.0, 1.0), (9, 9, 5), lambda x1, x2, t: 0.4 + 0.1 * x1 * x2
    )
    container = tmp_path / "field.gfb"
    u.save(container)
    cfg = {
        "structure": KINETIC,
        "degiorgi": {
            "field": {"load": str(container)},
            "exponents": {"Q": 2, "eps0": 0.05, "theta": 0.05},
        },
    }
    code, out = _run(tmp_path, "degiorgi", cfg)
    assert code == 0
    res = json.loads((out / "report.json").read_text())["results"]
    assert res["sound"] is True


def test_degiorgi_missing_container_returns_3(tmp_path):
    cfg = {
        "structure": KINETIC,
        "degiorgi": {
            "field": {"load": str(tmp_path / "absent.gfb")},
            "exponents": {"eps0": 0.05},
        },
    }
    code, _ = _run(tmp_path, "degiorgi", cfg)
    assert code == 3
