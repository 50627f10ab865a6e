"""Batch experiment driver: one JSON config per run, one subcommand per engine.

Configs are schema-checked before any computation starts: every section has a
fixed key set, unknown keys are rejected with a path diagnostic, and every
coefficient or data expression is compiled up front from a small arithmetic
language (``+ - * /``, ``sin``, ``cos``, ``exp``, ``abs``, ``min``, ``max``
over the variables ``x1..xN`` and ``t``).  Each run writes ``report.json``
(sorted keys, newline-terminated, byte-stable for a fixed seed and thread
cap) plus command-specific CSV and grid-container files into the output
directory.

Exit codes: 0 success, 2 usage, 3 validation failure, 4 numerical failure.
The environment variable ``KOLMOLAB_SEED`` overrides the config seed.
"""

from __future__ import annotations

import argparse
import ast
import functools
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .degiorgi import run_level_iteration, solve_exponents
from .errors import BadParameters, KolmoLabError, NumericalError, ValidationError
from .fd_solver import (
    BoundaryData,
    CoefficientSet,
    ProductDomain,
    check_max_principle,
    solve,
    sup_norm,
)
from .group_conv import (
    GridField,
    embedding_grad,
    embedding_l1,
    random_smooth_field,
    young_check,
)
from .kernel import (
    QuadratureSpec,
    kernel_context,
    lp_norm_closed_form,
    lp_norm_quadrature,
)
from .lie_group import exp_neg_tB, structure_from_json
from .sde_oracle import covariance_factor, density_error, euler_maruyama, exact_sample

try:  # optional: caps BLAS/FFT worker pools when --threads is given
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - present in the supported environment
    threadpool_limits = None


# ---------------------------------------------------------------------------
# expression language
# ---------------------------------------------------------------------------

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "min": lambda *a: functools.reduce(np.minimum, a),
    "max": lambda *a: functools.reduce(np.maximum, a),
}
_BIN_OPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_UNARY_OPS = (ast.USub, ast.UAdd)


def compile_expression(text: str, n_dim: int, where: str = "expression"):
    """Compile an arithmetic expression over x1..xN and t to a callable.

    The callable has signature ``fn(x1, ..., xN, t)`` with array arguments
    and evaluates vectorized.  Anything outside the whitelisted grammar
    (four arithmetic operators, the six listed functions, numeric literals,
    and the named variables) is rejected before compilation.
    """
    if not isinstance(text, str):
        raise BadParameters(f"{where}: expected an expression string, got {text!r}")
    variables = [f"x{i + 1}" for i in range(n_dim)] + ["t"]
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise BadParameters(f"{where}: cannot parse {text!r}: {exc.msg}") from None
    called = {id(node.func) for node in ast.walk(tree) if isinstance(node, ast.Call)}
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(node.op, _BIN_OPS):
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY_OPS):
            continue
        if isinstance(node, (*_BIN_OPS, *_UNARY_OPS)):
            continue
        if isinstance(node, ast.Call):
            if node.keywords or not node.args:
                raise BadParameters(f"{where}: functions take positional arguments only")
            continue
        if isinstance(node, ast.Name):
            if id(node) in called:
                if node.id not in _FUNCTIONS:
                    raise BadParameters(f"{where}: unknown function {node.id!r}")
            elif node.id not in variables:
                raise BadParameters(
                    f"{where}: unknown variable {node.id!r} (allowed: {', '.join(variables)})"
                )
            continue
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise BadParameters(f"{where}: literal {node.value!r} is not a number")
            continue
        raise BadParameters(
            f"{where}: disallowed syntax {type(node).__name__} in {text!r}"
        )
    code = compile(tree, "<config-expression>", "eval")

    def fn(*args):
        env = dict(zip(variables, args))
        env.update(_FUNCTIONS)
        try:
            return eval(code, {"__builtins__": {}}, env)
        except ZeroDivisionError:
            raise NumericalError(f"{where}: division by zero in {text!r}") from None

    fn.source = text
    return fn


def _as_callable(value, n_dim: int, where: str):
    """Turn a config entry (number or expression string) into a field callable."""
    if isinstance(value, str):
        return compile_expression(value, n_dim, where)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        const = float(value)
        return lambda *args: const
    raise BadParameters(f"{where}: expected a number or expression string, got {value!r}")


# ---------------------------------------------------------------------------
# schema helpers
# ---------------------------------------------------------------------------


def _check_keys(obj, path: str, required: set, optional: set = frozenset()):
    if not isinstance(obj, dict):
        raise BadParameters(f"{path}: expected an object")
    unknown = sorted(set(obj) - required - optional)
    if unknown:
        raise BadParameters(f"{path}: unknown keys {unknown}")
    missing = sorted(k for k in required if k not in obj)
    if missing:
        raise BadParameters(f"{path}: missing required keys {missing}")


def _num(obj, key, path, default=None, positive=False):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise BadParameters(f"{path}.{key}: expected a number, got {v!r}")
    if positive and v <= 0:
        raise BadParameters(f"{path}.{key}: must be positive, got {v!r}")
    return float(v)


def _int(obj, key, path, default=None, minimum=None):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise BadParameters(f"{path}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise BadParameters(f"{path}.{key}: must be >= {minimum}, got {v}")
    return v


def _choice(obj, key, path, choices, default=None):
    if key not in obj:
        return default
    v = obj[key]
    if v not in choices:
        raise BadParameters(f"{path}.{key}: expected one of {sorted(choices)}, got {v!r}")
    return v


def _box(value, path, length=None):
    if not isinstance(value, list) or not value:
        raise BadParameters(f"{path}: expected a nonempty list of [lo, hi] pairs")
    out = []
    for i, pair in enumerate(value):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pair)
        ):
            raise BadParameters(f"{path}[{i}]: expected a [lo, hi] pair of numbers")
        lo, hi = float(pair[0]), float(pair[1])
        if hi <= lo:
            raise BadParameters(f"{path}[{i}]: needs hi > lo, got [{lo}, {hi}]")
        out.append((lo, hi))
    if length is not None and len(out) != length:
        raise BadParameters(f"{path}: expected {length} axes, got {len(out)}")
    return tuple(out)


def _num_list(value, path, length=None, minimum=None):
    if not isinstance(value, list):
        raise BadParameters(f"{path}: expected a list of numbers")
    out = []
    for i, v in enumerate(value):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise BadParameters(f"{path}[{i}]: expected a number, got {v!r}")
        if minimum is not None and v < minimum:
            raise BadParameters(f"{path}[{i}]: must be >= {minimum}, got {v}")
        out.append(float(v))
    if length is not None and len(out) != length:
        raise BadParameters(f"{path}: expected {length} entries, got {len(out)}")
    return out


def _int_list(value, path, length=None, minimum=None):
    if not isinstance(value, list):
        raise BadParameters(f"{path}: expected a list of integers")
    out = []
    for i, v in enumerate(value):
        if not isinstance(v, int) or isinstance(v, bool):
            raise BadParameters(f"{path}[{i}]: expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise BadParameters(f"{path}[{i}]: must be >= {minimum}, got {v}")
        out.append(v)
    if length is not None and len(out) != length:
        raise BadParameters(f"{path}: expected {length} entries, got {len(out)}")
    return out


def _field_from_spec(spec, path: str, rng) -> list:
    """Build one or more fields from a field spec (expression or random)."""
    _check_keys(
        spec, path, required={"box", "t_range", "shape"},
        optional={"expr", "count", "amplitude"},
    )
    box = _box(spec["box"], f"{path}.box")
    t0, t1 = _num_list(spec["t_range"], f"{path}.t_range", length=2)
    if t1 <= t0:
        raise BadParameters(f"{path}.t_range: needs t1 > t0")
    shape = tuple(_int_list(spec["shape"], f"{path}.shape", length=len(box) + 1, minimum=2))
    if "expr" in spec:
        if spec.get("count", 1) != 1:
            raise BadParameters(f"{path}: an explicit expr cannot be combined with count > 1")
        fn = compile_expression(spec["expr"], len(box), f"{path}.expr")
        return [GridField.from_function(box, (t0, t1), shape, fn)]
    count = _int(spec, "count", path, default=1, minimum=1)
    amplitude = _num(spec, "amplitude", path, default=1.0, positive=True)
    return [
        random_smooth_field(box, (t0, t1), shape, rng, amplitude=amplitude)
        for _ in range(count)
    ]


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    """Convert a result tree to JSON-native values; non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    if isinstance(obj, Fraction):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise NumericalError(f"cannot serialize {type(obj).__name__} into the report")


def _write_report(out_dir: Path, report: dict) -> None:
    clean = _jsonable(report)
    text = json.dumps(clean, sort_keys=True, indent=2) + "\n"
    if json.loads(text) != clean:
        raise NumericalError("report serialization does not round-trip")
    (out_dir / "report.json").write_text(text)


def _write_csv(path: Path, header: list, rows: list) -> None:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return "%.17g" % float(v)
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommand runners
# ---------------------------------------------------------------------------


def cmd_kernel_norms(sec, s, seed, out_dir: Path) -> dict:
    """Sweep ||K||_p: closed form vs quadrature, divergence flagged."""
    path = "kernel-norms"
    _check_keys(sec, path, required={"p_values"}, optional={"T", "t_min"})
    p_values = _num_list(sec["p_values"], f"{path}.p_values")
    for i, p in enumerate(p_values):
        if p < 1.0:
            raise BadParameters(f"{path}.p_values[{i}]: p must be >= 1, got {p}")
    T = _num(sec, "T", path, default=1.0, positive=True)
    t_min = _num(sec, "t_min", path, default=None, positive=True)
    spec = QuadratureSpec(t_min=t_min) if t_min is not None else QuadratureSpec()
    ctx = kernel_context(s)
    rows = []
    for p in p_values:
        closed = lp_norm_closed_form(ctx, p, T)
        quad = lp_norm_quadrature(ctx, p, T, spec)
        divergent = not closed.finite
        rel_err = (
            abs(quad.value - closed.value) / abs(closed.value)
            if closed.finite and closed.value != 0.0
            else float("nan")
        )
        rows.append(
            {
                "p": p,
                "closed_form": closed.value,
                "quadrature": quad.value,
                "rel_err": rel_err,
                "divergent_flag": divergent,
            }
        )
    _write_csv(
        out_dir / "kernel_norms.csv",
        ["p", "closed_form", "quadrature", "rel_err", "divergent_flag"],
        [[r["p"], r["closed_form"], r["quadrature"], r["rel_err"], r["divergent_flag"]] for r in rows],
    )
    return {"T": T, "t_min": t_min, "rows": rows}


def cmd_embed(sec, s, seed, out_dir: Path) -> dict:
    """Convolution inequality checks: two embedding variants and the product rule."""
    path = "embed"
    _check_keys(
        sec, path, required={"variant", "fields"},
        optional={"q", "eps0", "eps1", "direction", "p", "r", "tol"},
    )
    variant = _choice(sec, "variant", path, {"l1", "gradient", "young"})
    tol = _num(sec, "tol", path, default=0.05)
    rng = np.random.default_rng(seed)
    fields = _field_from_spec(sec["fields"], f"{path}.fields", rng)
    ctx = kernel_context(s)
    rows = []
    if variant == "young":
        for key in ("p", "q", "r"):
            if key not in sec:
                raise BadParameters(f"{path}: variant 'young' requires exponents p, q, r")
        p = _num(sec, "p", path, positive=True)
        q = _num(sec, "q", path, positive=True)
        r = _num(sec, "r", path, positive=True)
        pairs = (
            [(fields[0], fields[0])]
            if len(fields) == 1
            else list(zip(fields[0::2], fields[1::2]))
        )
        for f, g in pairs:
            rep = young_check(f, g, p, q, r, s, tol=tol)
            rows.append(
                {
                    "p": rep.p, "q": rep.q, "r": rep.r, "ratio": rep.ratio,
                    "norm_conv": rep.norm_conv, "norm_f": rep.norm_f,
                    "norm_g": rep.norm_g, "satisfied": rep.satisfied,
                }
            )
        header = ["index", "p", "q", "r", "ratio", "satisfied"]
        csv_rows = [
            [i, r_["p"], r_["q"], r_["r"], r_["ratio"], r_["satisfied"]]
            for i, r_ in enumerate(rows)
        ]
    else:
        if "q" not in sec:
            raise BadParameters(f"{path}: variant {variant!r} requires q")
        q = _num(sec, "q", path, positive=True)
        for u in fields:
            if variant == "l1":
                if "eps0" not in sec:
                    raise BadParameters(f"{path}: variant 'l1' requires eps0")
                rep = embedding_l1(u, q, _num(sec, "eps0", path), ctx, tol=tol)
            else:
                if "eps1" not in sec:
                    raise BadParameters(f"{path}: variant 'gradient' requires eps1")
                direction = _int(sec, "direction", path, default=1, minimum=1)
                if direction > s.m0:
                    raise BadParameters(
                        f"{path}.direction: gradient directions run 1..{s.m0}, got {direction}"
                    )
                rep = embedding_grad(
                    u, q, _num(sec, "eps1", path), ctx, i=direction - 1, tol=tol
                )
            rows.append(
                {
                    "p": rep.p, "q": rep.q, "lhs": rep.lhs, "bound": rep.bound,
                    "sigma": rep.sigma,
                    "ratio": rep.lhs / rep.bound if rep.bound > 0 else 0.0,
                    "satisfied": rep.satisfied,
                }
            )
        header = ["index", "p", "q", "lhs", "bound", "sigma", "ratio", "satisfied"]
        csv_rows = [
            [i, r_["p"], r_["q"], r_["lhs"], r_["bound"], r_["sigma"], r_["ratio"], r_["satisfied"]]
            for i, r_ in enumerate(rows)
        ]
    _write_csv(out_dir / "embed.csv", header, csv_rows)
    return {"variant": variant, "tol": tol, "rows": rows}


def cmd_mc(sec, s, seed, out_dir: Path) -> dict:
    """Sample the diffusion and compare the batch against the kernel law."""
    path = "mc"
    _check_keys(sec, path, required={"start", "t", "n", "method"}, optional={"steps", "bins"})
    start = _num_list(sec["start"], f"{path}.start", length=s.N)
    t = _num(sec, "t", path, positive=True)
    n = _int(sec, "n", path, minimum=2)
    method = _choice(sec, "method", path, {"exact", "em"})
    bins = _int(sec, "bins", path, default=24, minimum=2)
    if method == "em":
        steps = _int(sec, "steps", path, minimum=1)
        if steps is None:
            raise BadParameters(f"{path}: method 'em' requires steps")
    elif "steps" in sec:
        raise BadParameters(f"{path}.steps: only valid with method 'em'")
    ctx = kernel_context(s)
    if method == "exact":
        batch = exact_sample(ctx, start, t, n, seed)
    else:
        batch = euler_maruyama(s, start, t, steps, n, seed)
    batch.to_csv(out_dir / "samples.csv")
    rep = density_error(batch, ctx, bins=bins)
    L = covariance_factor(s, t)
    return {
        "method": method,
        "n": n,
        "t": t,
        "mean": batch.mean(),
        "expected_mean": exp_neg_tB(s, t) @ np.asarray(start),
        "cov": batch.cov(),
        "expected_cov": L @ L.T,
        "l1_distance": rep.l1_distance,
        "ks_stats": list(rep.ks_stats),
        "ks_critical_95": rep.ks_critical_95,
        "ks_passed": rep.ks_passed,
    }


def _parse_domain(spec, path, s) -> ProductDomain:
    _check_keys(spec, path, required={"V", "U", "T"})
    V = _box(spec["V"], f"{path}.V", length=s.m0)
    U = _box(spec["U"], f"{path}.U", length=s.N - s.m0)
    T = _num(spec, "T", path, positive=True)
    return ProductDomain(V=V, U=U, T=T)


def _parse_grid(spec, path) -> dict:
    _check_keys(spec, path, required={"dt"}, optional={"n", "h"})
    if ("n" in spec) == ("h" in spec):
        raise BadParameters(f"{path}: give exactly one of n (node counts) or h (spacings)")
    grid = {"dt": _num(spec, "dt", path, positive=True)}
    if "n" in spec:
        grid["n"] = _int_list(spec["n"], f"{path}.n", minimum=3)
    else:
        grid["h"] = _num_list(spec["h"], f"{path}.h", minimum=0.0)
        if any(h <= 0 for h in grid["h"]):
            raise BadParameters(f"{path}.h: spacings must be positive")
    return grid


def _matrix_callable(value, m0, n_dim, path):
    """Diffusion matrix from a number, expression, or m0 x m0 table of either."""
    if isinstance(value, (str, int, float)) and not isinstance(value, bool):
        if m0 != 1:
            raise BadParameters(f"{path}: a scalar entry needs m0 = 1; give an m0 x m0 table")
        entry = _as_callable(value, n_dim, path)
        return lambda *args: np.asarray(entry(*args))[None, None]
    if not isinstance(value, list) or len(value) != m0:
        raise BadParameters(f"{path}: expected an {m0} x {m0} table")
    table = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != m0:
            raise BadParameters(f"{path}[{i}]: expected {m0} entries")
        table.append([_as_callable(v, n_dim, f"{path}[{i}][{j}]") for j, v in enumerate(row)])

    def a_fn(*args):
        shape = np.shape(args[0])
        out = np.empty((m0, m0) + shape)
        for i in range(m0):
            for j in range(m0):
                out[i, j] = table[i][j](*args)
        return out

    return a_fn


def _vector_callable(value, m0, n_dim, path):
    if not isinstance(value, list) or len(value) != m0:
        raise BadParameters(f"{path}: expected a list of {m0} entries")
    entries = [_as_callable(v, n_dim, f"{path}[{i}]") for i, v in enumerate(value)]

    def v_fn(*args):
        shape = np.shape(args[0])
        out = np.empty((m0,) + shape)
        for i in range(m0):
            out[i] = entries[i](*args)
        return out

    return v_fn


def _parse_coefficients(spec, path, s) -> CoefficientSet:
    if spec is None:
        return CoefficientSet()
    _check_keys(
        spec, path, required=set(),
        optional={"a", "b", "c", "f", "d", "g", "lam", "Lam"},
    )
    kwargs = {}
    if "a" in spec:
        kwargs["a"] = _matrix_callable(spec["a"], s.m0, s.N, f"{path}.a")
    for key in ("b", "c", "f"):
        if key in spec:
            kwargs[key] = _vector_callable(spec[key], s.m0, s.N, f"{path}.{key}")
    for key in ("d", "g"):
        if key in spec:
            kwargs[key] = _as_callable(spec[key], s.N, f"{path}.{key}")
    kwargs["lam"] = _num(spec, "lam", path, default=1.0, positive=True)
    kwargs["Lam"] = _num(spec, "Lam", path, default=1.0, positive=True)
    if kwargs["Lam"] < kwargs["lam"]:
        raise BadParameters(f"{path}: Lam must be >= lam")
    return CoefficientSet(**kwargs)


def _parse_boundary(spec, path, s) -> BoundaryData:
    _check_keys(spec, path, required={"gamma_P"}, optional={"gamma_K_plus"})
    gamma_P = _as_callable(spec["gamma_P"], s.N, f"{path}.gamma_P")
    gamma_K_plus = (
        _as_callable(spec["gamma_K_plus"], s.N, f"{path}.gamma_K_plus")
        if "gamma_K_plus" in spec
        else None
    )
    return BoundaryData(gamma_P=gamma_P, gamma_K_plus=gamma_K_plus)


def cmd_solve(sec, s, seed, out_dir: Path) -> dict:
    """Run the scheme, optionally over a refinement ladder against a reference."""
    path = "solve"
    _check_keys(
        sec, path, required={"domain", "grid", "boundary"},
        optional={"coefficients", "reference", "refine_levels", "dt_rule", "save_field"},
    )
    dom = _parse_domain(sec["domain"], f"{path}.domain", s)
    grid = _parse_grid(sec["grid"], f"{path}.grid")
    coeffs = _parse_coefficients(sec.get("coefficients"), f"{path}.coefficients", s)
    data = _parse_boundary(sec["boundary"], f"{path}.boundary", s)
    reference = (
        compile_expression(sec["reference"], s.N, f"{path}.reference")
        if "reference" in sec
        else None
    )
    levels = _int(sec, "refine_levels", path, default=1, minimum=1)
    dt_rule = _choice(sec, "dt_rule", path, {"linear", "quadratic"}, default="linear")
    save_field = sec.get("save_field", True)
    if not isinstance(save_field, bool):
        raise BadParameters(f"{path}.save_field: expected true or false")

    if "n" in grid:
        base_n = grid["n"]
    else:
        base_n = [
            int(round((hi - lo) / h)) + 1
            for (lo, hi), h in zip(dom.box, grid["h"])
        ]
    base_dt = grid["dt"]
    dt_shrink = 0.5 if dt_rule == "linear" else 0.25

    rows = []
    u = None
    prev_err = None
    for lvl in range(levels):
        n_lvl = [(n - 1) * 2**lvl + 1 for n in base_n]
        dt_lvl = base_dt * dt_shrink**lvl
        u = solve(dom, s, coeffs, data, {"n": n_lvl, "dt": dt_lvl})
        row = {
            "level": lvl,
            "n": n_lvl,
            "dt": dt_lvl,
            "h_max": float(np.max(u.spacings)),
            "sup_norm": sup_norm(u),
        }
        if reference is not None:
            exact = GridField.from_function(dom.box, (0.0, dom.T), u.values.shape, reference)
            err = float(np.max(np.abs(u.values - exact.values)))
            row["error"] = err
            row["order"] = (
                float(np.log2(prev_err / err)) if prev_err and err > 0 else float("nan")
            )
            prev_err = err
        rows.append(row)

    if reference is not None:
        _write_csv(
            out_dir / "solve_orders.csv",
            ["level", "n_max", "h_max", "dt", "error", "order"],
            [
                [r["level"], max(r["n"]), r["h_max"], r["dt"], r["error"], r["order"]]
                for r in rows
            ],
        )
    if save_field:
        u.save(out_dir / "solution.gfb")
    return {"levels": rows, "refine_levels": levels, "dt_rule": dt_rule}


def _boundary_sup(u: GridField) -> float:
    """Largest value on the initial slice and the spatial faces of a field."""
    pieces = [u.values[..., 0].max()]
    for ax in range(u.n_dim):
        rolled = np.moveaxis(u.values, ax, 0)
        pieces.extend([rolled[0].max(), rolled[-1].max()])
    return float(max(pieces))


def cmd_degiorgi(sec, s, seed, out_dir: Path) -> dict:
    """Certify a sup bound for a field by the level-set iteration."""
    path = "degiorgi"
    _check_keys(
        sec, path, required={"field", "exponents"},
        optional={"M", "mode", "sigma0", "n_subintervals", "max_doublings", "max_levels"},
    )
    field_spec = sec["field"]
    if isinstance(field_spec, dict) and "load" in field_spec:
        _check_keys(field_spec, f"{path}.field", required={"load"})
        if not isinstance(field_spec["load"], str):
            raise BadParameters(f"{path}.field.load: expected a file path string")
        try:
            u = GridField.load(field_spec["load"])
        except OSError as exc:
            raise BadParameters(f"{path}.field.load: cannot read container: {exc}") from None
    else:
        rng = np.random.default_rng(seed)
        fields = _field_from_spec(field_spec, f"{path}.field", rng)
        if len(fields) != 1:
            raise BadParameters(f"{path}.field: exactly one field is iterated per run")
        u = fields[0]

    exp_spec = sec["exponents"]
    _check_keys(exp_spec, f"{path}.exponents", required={"eps0"}, optional={"Q", "theta"})
    Q = _int(exp_spec, "Q", f"{path}.exponents", default=s.Q, minimum=1)
    theta = _num(exp_spec, "theta", f"{path}.exponents", default=0.9)
    bundle = solve_exponents(Q, _num(exp_spec, "eps0", f"{path}.exponents"), theta=theta)

    M_spec = sec.get("M", "auto")
    if M_spec == "auto":
        M = _boundary_sup(u)
    elif isinstance(M_spec, (int, float)) and not isinstance(M_spec, bool):
        M = float(M_spec)
    else:
        raise BadParameters(f'{path}.M: expected a number or "auto", got {M_spec!r}')

    mode = _choice(sec, "mode", path, {"l2_to_linf", "data_bound"}, default="l2_to_linf")
    state = run_level_iteration(
        u, M, bundle, mode,
        sigma0=_num(sec, "sigma0", path, default=1.0, positive=True),
        n_subintervals=_int(sec, "n_subintervals", path, default=4, minimum=1),
        max_doublings=_int(sec, "max_doublings", path, default=40, minimum=1),
        max_levels=_int(sec, "max_levels", path, default=40, minimum=1),
    )
    (out_dir / "decay.csv").write_text(state.to_csv())
    return {
        "M": M,
        "sup_observed": sup_norm(u),
        "bundle": bundle.to_json(),
        "iteration": state.to_json(),
        "certified_bound": state.certified_bound,
        "sound": state.certified_bound >= sup_norm(u),
    }


def cmd_maxprinciple(sec, s, seed, out_dir: Path) -> dict:
    """Solve, then compare interior/outflow suprema to the boundary ceiling."""
    path = "maxprinciple"
    _check_keys(
        sec, path, required={"domain", "grid", "boundary"},
        optional={"coefficients", "tol"},
    )
    dom = _parse_domain(sec["domain"], f"{path}.domain", s)
    grid = _parse_grid(sec["grid"], f"{path}.grid")
    coeffs = _parse_coefficients(sec.get("coefficients"), f"{path}.coefficients", s)
    data = _parse_boundary(sec["boundary"], f"{path}.boundary", s)
    tol = _num(sec, "tol", path, default=0.0)
    u = solve(dom, s, coeffs, data, grid)
    rep = check_max_principle(dom, s, coeffs, data, u, tol=tol)
    margin = rep.M - max(rep.sup_interior, rep.sup_outflow)
    _write_csv(
        out_dir / "maxprinciple.csv",
        ["sup_interior", "sup_outflow", "M", "margin"],
        [[rep.sup_interior, rep.sup_outflow, rep.M, margin]],
    )
    return {
        "sup_interior": rep.sup_interior,
        "sup_outflow": rep.sup_outflow,
        "M": rep.M,
        "margin": margin,
        "excess": rep.excess,
        "satisfied": rep.satisfied,
        "hypothesis": rep.hypothesis,
    }


_RUNNERS = {
    "kernel-norms": cmd_kernel_norms,
    "embed": cmd_embed,
    "mc": cmd_mc,
    "solve": cmd_solve,
    "degiorgi": cmd_degiorgi,
    "maxprinciple": cmd_maxprinciple,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _resolve_seed(raw: dict) -> int:
    env = os.environ.get("KOLMOLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise BadParameters(f"KOLMOLAB_SEED must be an integer, got {env!r}") from None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise BadParameters(f"seed: expected an integer, got {seed!r}")
    return seed


def _run(args) -> int:
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"kolmolab: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadParameters(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None

    section = args.command
    _check_keys(
        raw, str(path), required={"structure", section},
        optional={"seed", "output_dir"},
    )
    if not isinstance(raw["structure"], dict):
        raise BadParameters(f"{path}: structure must be an object")
    s = structure_from_json(json.dumps(raw["structure"]))
    seed = _resolve_seed(raw)
    out_spec = args.out if args.out is not None else raw.get("output_dir", ".")
    if not isinstance(out_spec, (str, os.PathLike)):
        raise BadParameters(f"{path}: output_dir must be a path string")
    out_dir = Path(out_spec)
    out_dir.mkdir(parents=True, exist_ok=True)

    runner = _RUNNERS[section]
    if args.threads is not None and threadpool_limits is not None:
        with threadpool_limits(limits=args.threads):
            results = runner(raw[section], s, seed, out_dir)
    else:
        results = runner(raw[section], s, seed, out_dir)

    report = {
        "command": section,
        "seed": seed,
        "threads": args.threads,
        "structure": {"m0": s.m0, "N": s.N, "Q": s.Q},
        "results": results,
    }
    _write_report(out_dir, report)
    print(f"{section}: wrote {out_dir / 'report.json'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kolmolab",
        description="Run one experiment from a JSON config and write its reports.",
    )
    parser.add_argument("command", choices=sorted(_RUNNERS), help="experiment to run")
    parser.add_argument("config", help="path to the experiment JSON file")
    parser.add_argument(
        "--threads", type=int, default=None, help="cap worker threads (default: library choice)"
    )
    parser.add_argument(
        "--out", default=None, help="output directory (overrides config output_dir)"
    )
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return _run(args)
    except ValidationError as exc:
        print(f"kolmolab: validation error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"kolmolab: numerical failure: {exc}", file=sys.stderr)
        return 4
    except KolmoLabError as exc:  # pragma: no cover - defensive catch-all
        print(f"kolmolab: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
