"""Command line runner: ``qfock relations|normal-order|norm-sweep|ito|moments``.

Every command reads a flat TOML config (the bundled ``default.toml`` when
``--config`` is absent), writes a JSON report and a CSV table into the output
directory, and exits 0 iff its verdict passes. Reports contain no timestamps
so identical config and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import zlib
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._toml import load_toml
from .fock_core import TruncationConfig, TruncationError, estimate_constants
from .fock_ops import (annihilation, check_gauge_mu, creation, exact_norm, gamma, gauge,
                       q_operator_norm)
from .wick import (ParseError, apply_polynomial, format_number, format_polynomial, normal_order,
                   parse_polynomial)

EXIT_FAIL = 1
EXIT_HYPOTHESIS = 2
EXIT_USAGE = 3

RELATIONS = {
    1: "a(phi) a*(psi) = q a*(psi) a(phi) + <phi,psi>",
    2: "a(phi) G(mu) = mu G(mu) a(phi)",
    3: "G(mu) a*(phi) = mu a*(phi) G(mu)",
    4: "a(phi) L(mu;T) = mu L(mu;T) a(phi) + mu G(mu) a(T~ phi)",
    5: "L(mu;T) a*(phi) = mu a*(phi) L(mu;T) + mu a*(T phi) G(mu)",
    6: "L(mu;T) G(nu) = G(mu) L(nu;T) = L(mu nu;T)",
    7: "G(mu) G(nu) = G(mu nu)",
    8: "L(mu;T1) L(nu;T2) = L(nu;T2) L(mu;T1) for commuting T1, T2",
}


class ConfigError(ValueError):
    pass


def _complex(x, key) -> complex:
    try:
        if isinstance(x, (int, float)):
            return complex(x)
        return complex(str(x).replace(" ", ""))
    except ValueError:
        raise ConfigError(f"{key}: cannot read {x!r} as a complex number") from None


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; times are in units of the horizon ``T_max``."""

    q: float
    mu: complex
    nu: complex
    d: int
    N: int
    grid_m: int
    ito_N: int
    T_max: float
    tolerance: float
    seed: int
    out: str
    draws: int
    relations: tuple
    sweep_q: tuple
    sweep_N: tuple
    sweep_mu: tuple
    moments_N: int
    moments_n_max: int
    debug_corrupt_q: bool

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = list(cls.__dataclass_fields__)
        missing = [k for k in names if k not in data]
        if missing:
            raise ConfigError(f"missing config fields: {', '.join(missing)}")
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        try:
            cfg = cls(q=float(data["q"]), mu=_complex(data["mu"], "mu"),
                      nu=_complex(data["nu"], "nu"), d=int(data["d"]), N=int(data["N"]),
                      grid_m=int(data["grid_m"]), ito_N=int(data["ito_N"]),
                      T_max=float(data["T_max"]), tolerance=float(data["tolerance"]),
                      seed=int(data["seed"]), out=str(data["out"]), draws=int(data["draws"]),
                      relations=tuple(int(r) for r in data["relations"]),
                      sweep_q=tuple(float(x) for x in data["sweep_q"]),
                      sweep_N=tuple(int(x) for x in data["sweep_N"]),
                      sweep_mu=tuple(_complex(x, "sweep_mu") for x in data["sweep_mu"]),
                      moments_N=int(data["moments_N"]),
                      moments_n_max=int(data["moments_n_max"]),
                      debug_corrupt_q=bool(data["debug_corrupt_q"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            for q in (self.q,) + self.sweep_q:
                TruncationConfig(1, 1, q)
            TruncationConfig(self.d, self.N, self.q)
            TruncationConfig(self.grid_m, self.ito_N, self.q)
            for mu in (self.mu, self.nu) + self.sweep_mu:
                check_gauge_mu(mu)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.T_max > 0:
            raise ConfigError(f"T_max must be positive, got {self.T_max}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.draws < 1:
            raise ConfigError("draws must be at least 1")
        bad = [r for r in self.relations if r not in RELATIONS]
        if bad:
            raise ConfigError(f"unknown relations {bad}; choose from 1..8")
        if any(n < 1 for n in self.sweep_N):
            raise ConfigError("sweep_N entries must be at least 1")

    def echo(self) -> dict:
        """Config as reported; the output directory does not affect results."""
        out = asdict(self)
        del out["out"]
        for key in ("mu", "nu"):
            out[key] = [out[key].real, out[key].imag]
        out["sweep_mu"] = [[z.real, z.imag] for z in self.sweep_mu]
        for key in ("relations", "sweep_q", "sweep_N"):
            out[key] = list(out[key])
        return out


def load_config(path=None) -> RunConfig:
    if path is None:
        data = load_toml(resources.files("qfock") / "data" / "default.toml")
    else:
        try:
            data = load_toml(path)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except Exception as exc:  # TOML decode error type differs between tomllib and tomli
            raise ConfigError(f"{path}: {exc}") from None
    return RunConfig.from_dict(data)


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream ``name``; independent of call order."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


# --------------------------------------------------------------------------- #
# reports
# --------------------------------------------------------------------------- #

def _clean(x):
    """JSON-safe view: complex → [re, im], numpy scalars → Python, NaN → null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) else x
    return x


def write_report(out_dir: Path, stem: str, report: dict, rows: list) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / f"{stem}.json"
    cpath = out_dir / f"{stem}.csv"
    jpath.write_text(json.dumps(_clean(report), sort_keys=True, indent=2) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    cpath.write_text(buf.getvalue())
    return jpath, cpath


def _base_report(command: str, run: RunConfig, q: float, d: int, N: int) -> dict:
    return {"schema_version": 1, "command": command, "version": __version__,
            "config": run.echo(), "constants": estimate_constants(d, N, q).as_dict()}


# --------------------------------------------------------------------------- #
# relations
# --------------------------------------------------------------------------- #

def _rand_vec(rng, d):
    return rng.standard_normal(d) + 1j * rng.standard_normal(d)


def _rand_mu(rng, r_max=0.8):
    return complex(r_max * math.sqrt(rng.random()) * np.exp(2j * math.pi * rng.random()))


def relation_residuals(cfg: TruncationConfig, rng: np.random.Generator, relations=tuple(RELATIONS),
                       corrupt_q: bool = False) -> dict:
    """Frobenius residual of each relation on source levels ``≤ N−2``, one draw."""
    d = cfg.d
    phi, psi = _rand_vec(rng, d), _rand_vec(rng, d)
    T = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    mu, nu = _rand_mu(rng), _rand_mu(rng)
    # commuting pair: both polynomials in one random matrix
    M = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    c = rng.standard_normal(3)
    T1 = M + c[0] * np.eye(d)
    T2 = c[1] * M @ M + c[2] * M
    q_rhs = cfg.q + 0.05 if corrupt_q else cfg.q
    a, ad = annihilation, creation
    one = np.eye(cfg.dim)
    pairs = {
        1: lambda: ((a(cfg, phi) @ ad(cfg, psi)).matrix,
                    q_rhs * (ad(cfg, psi) @ a(cfg, phi)).matrix + np.vdot(phi, psi) * one),
        2: lambda: ((a(cfg, phi) @ gamma(cfg, mu)).matrix,
                    mu * (gamma(cfg, mu) @ a(cfg, phi)).matrix),
        3: lambda: ((gamma(cfg, mu) @ ad(cfg, phi)).matrix,
                    mu * (ad(cfg, phi) @ gamma(cfg, mu)).matrix),
        4: lambda: ((a(cfg, phi) @ gauge(cfg, mu, T)).matrix,
                    mu * (gauge(cfg, mu, T) @ a(cfg, phi)).matrix
                    + mu * (gamma(cfg, mu) @ a(cfg, T.conj().T @ phi)).matrix),
        5: lambda: ((gauge(cfg, mu, T) @ ad(cfg, phi)).matrix,
                    mu * (ad(cfg, phi) @ gauge(cfg, mu, T)).matrix
                    + mu * (ad(cfg, T @ phi) @ gamma(cfg, mu)).matrix),
        7: lambda: ((gamma(cfg, mu) @ gamma(cfg, nu)).matrix, gamma(cfg, mu * nu).matrix),
        8: lambda: ((gauge(cfg, mu, T1) @ gauge(cfg, nu, T2)).matrix,
                    (gauge(cfg, nu, T2) @ gauge(cfg, mu, T1)).matrix),
    }
    cols = np.arange(cfg.offset(cfg.N - 1))
    out = {}
    for r in relations:
        if r == 6:
            target = gauge(cfg, mu * nu, T).matrix
            lhs1 = (gauge(cfg, mu, T) @ gamma(cfg, nu)).matrix
            lhs2 = (gamma(cfg, mu) @ gauge(cfg, nu, T)).matrix
            out[r] = float(max(np.linalg.norm((lhs1 - target)[:, cols]),
                               np.linalg.norm((lhs2 - target)[:, cols])))
        else:
            lhs, rhs = pairs[r]()
            out[r] = float(np.linalg.norm((lhs - rhs)[:, cols]))
    return out


def cmd_relations(run: RunConfig) -> tuple[dict, list, bool]:
    cfg = TruncationConfig(run.d, run.N, run.q)
    rng = named_rng(run.seed, "relations")
    worst = {r: 0.0 for r in run.relations}
    for _ in range(run.draws):
        res = relation_residuals(cfg, rng, run.relations, run.debug_corrupt_q)
        for r, v in res.items():
            worst[r] = max(worst[r], v)
    rows = [("relation", "statement", "max_residual", "pass")]
    results = []
    for r in run.relations:
        ok = worst[r] <= run.tolerance
        rows.append((r, RELATIONS[r], repr(worst[r]), ok))
        results.append({"relation": r, "statement": RELATIONS[r], "max_residual": worst[r],
                        "pass": ok})
    passed = all(x["pass"] for x in results)
    report = _base_report("relations", run, run.q, run.d, run.N)
    report.update({"levels": f"source levels <= {run.N - 2}", "results": results,
                   "verdict": "pass" if passed else "fail"})
    for x in results:
        if not x["pass"]:
            print(f"relation {x['relation']} failed: {x['statement']} "
                  f"(residual {x['max_residual']:.3e})", file=sys.stderr)
    return report, rows, passed


# --------------------------------------------------------------------------- #
# normal ordering
# --------------------------------------------------------------------------- #

def cmd_normal_order(run: RunConfig, expression: str) -> tuple[dict, list, bool]:
    """Normal form of ``expression`` with names bound to seeded random data.

    The residual is the largest q-norm of ``(p - nf(p))Φ`` over basis vectors Φ
    on which both sides act exactly.
    """
    from .fock_core import q_norms

    p = parse_polynomial(expression)
    table = _symbol_table(run)
    nf = normal_order(p, table, run.q)
    cfg = TruncationConfig(run.d, run.N, run.q)
    v = _probe_basis(cfg, p, nf)
    residual = 0.0
    if v is not None:
        diff = apply_polynomial(p, table, v) - apply_polynomial(nf, table, v)
        residual = float(np.max(q_norms(diff)))
    text = format_polynomial(nf)
    passed = residual <= run.tolerance
    report = _base_report("normal-order", run, run.q, run.d, run.N)
    report.update({"expression": expression, "normal_form": text, "terms": len(nf),
                   "residual": residual, "verdict": "pass" if passed else "fail"})
    rows = [("expression", "normal_form", "residual"), (expression, text, repr(residual))]
    return report, rows, passed


def _symbol_table(run: RunConfig):
    from .wick import RandomSymbolTable

    return RandomSymbolTable(run.d, run.seed)


def _probe_basis(cfg, *polys):
    from .fock_core import FockVector
    from .wick import polynomial_rise

    top = cfg.N - max(polynomial_rise(p) for p in polys)
    if top < 0:
        return None
    return FockVector.basis(cfg, range(top + 1))


# --------------------------------------------------------------------------- #
# norm sweep
# --------------------------------------------------------------------------- #

def norm_sweep_rows(run: RunConfig) -> list:
    """``(param, computed, bound, slack)`` rows for the operator norm bounds.

    The random ``φ`` and ``T`` depend on ``q`` only, so rows at fixed ``q``
    show how the slack moves with ``N``.
    """
    rows = []
    for q in run.sweep_q:
        rng = named_rng(run.seed, f"norm-sweep:q={q!r}")
        phi = _rand_vec(rng, run.d)
        phi /= np.linalg.norm(phi)
        T = rng.standard_normal((run.d, run.d)) + 1j * rng.standard_normal((run.d, run.d))
        t_norm = float(np.linalg.norm(T, 2))
        for N in run.sweep_N:
            cfg = TruncationConfig(run.d, N, q)
            tag = f"q={q!r},N={N}"
            val = exact_norm(cfg, creation(cfg, phi)).value
            rows.append((f"creation,{tag}", val, 1.0 / math.sqrt(1 - abs(q))))
            for mu in run.sweep_mu:
                mtag = f"{tag},mu={format_number(mu)}"
                val = q_operator_norm(cfg, gauge(cfg, mu, T))
                rows.append((f"gauge,{mtag}", val, t_norm * _sup_n_mu_n(abs(mu))))
                rows.append((f"gamma,{mtag}", q_operator_norm(cfg, gamma(cfg, mu)), 1.0))
    return [(p, float(c), float(b), float(b - c)) for p, c, b in rows]


def _sup_n_mu_n(r: float) -> float:
    """``sup_{n≥1} n rⁿ`` for ``0 ≤ r < 1``; attained at ``n = ⌊1/ln(1/r)⌋`` or the next integer."""
    if r == 0.0:
        return 0.0
    n0 = max(1, int(1.0 / math.log(1.0 / r)))
    return max(n * r**n for n in (n0, n0 + 1))


def integral_sweep_rows(run: RunConfig, n_samples: int = 3, grid_m: int = 4,
                        N: int = 4) -> list:
    """``(param, computed, bound, slack)`` rows for integrals against seminorms."""
    from .sde import (ADAPTED, LEFT, NONE, RIGHT, GridSymbolTable, ProcessKind, TimeGrid,
                      integrate, random_simple_biprocess, seminorm_annihilation,
                      seminorm_creation, seminorm_gauge, seminorm_time)

    rows = []
    grid = TimeGrid(run.T_max, grid_m)
    kinds = [(ProcessKind("A*"), LEFT), (ProcessKind("A"), RIGHT),
             (ProcessKind("Lambda", run.mu), ADAPTED), (ProcessKind("T"), NONE)]
    for q in run.sweep_q:
        cfg = TruncationConfig(grid_m, N, q)
        consts = estimate_constants(grid_m, N, q)
        table = GridSymbolTable(grid, seed=run.seed)
        for kind, adapt in kinds:
            rng = named_rng(run.seed, f"integral-sweep:q={q!r}:{kind}")
            for s in range(n_samples):
                R = random_simple_biprocess(grid, rng, adapt, lam_mu=run.mu)
                val = exact_norm(cfg, integrate(R, kind, table, cfg)).value
                if kind.name == "A*":
                    bound = seminorm_creation(R, table, cfg, consts)
                elif kind.name == "A":
                    bound = seminorm_annihilation(R, table, cfg, consts)
                elif kind.name == "Lambda":
                    bound = seminorm_gauge(R, kind.mu, table, cfg)
                else:
                    bound = seminorm_time(R, table, cfg)
                rows.append((f"integral {kind},q={q!r},sample={s}", float(val), float(bound),
                             float(bound - val)))
    return rows


def cmd_norm_sweep(run: RunConfig) -> tuple[dict, list, bool]:
    body = norm_sweep_rows(run) + integral_sweep_rows(run)
    tol = run.tolerance
    passed = all(s >= -tol * max(1.0, b) for _, _, b, s in body)
    rows = [("param", "computed", "bound", "slack")] + [(p, repr(c), repr(b), repr(s))
                                                        for p, c, b, s in body]
    report = _base_report("norm-sweep", run, run.q, run.d, run.N)
    report.update({"rows": [{"param": p, "computed": c, "bound": b, "slack": s}
                            for p, c, b, s in body],
                   "violations": sum(1 for _, _, b, s in body if s < -tol * max(1.0, b)),
                   "verdict": "pass" if passed else "fail"})
    return report, rows, passed


# --------------------------------------------------------------------------- #
# Itô and moments
# --------------------------------------------------------------------------- #

def cmd_ito(run: RunConfig, spec_path) -> tuple[dict, list, bool]:
    from .ito import load_ito_spec, verify_ito
    from .sde import GridSymbolTable, TimeGrid

    spec = load_ito_spec(spec_path, run.seed)
    grid = TimeGrid(run.T_max, run.grid_m)
    table = GridSymbolTable(grid, seed=run.seed)
    cfg = TruncationConfig(run.grid_m, run.ito_N, run.q)
    rep = verify_ito(spec, table, cfg)
    report = _base_report("ito", run, run.q, min(run.grid_m, 4), run.ito_N)
    report["constants_note"] = "constants estimated at d = min(grid_m, 4)"
    report["report"] = rep.to_dict()
    report["verdict"] = rep.verdict
    return report, rep.csv_rows(), rep.verdict == "pass"


def cmd_moments(run: RunConfig) -> tuple[dict, list, bool]:
    from .ito import brownian_moments, pair_partition_moment

    cfg = TruncationConfig(1, run.moments_N, run.q)
    vals = brownian_moments(cfg, run.T_max, run.moments_n_max)
    rows = [("order", "matrix", "oracle", "delta")]
    out = []
    for n, v in enumerate(vals):
        o = pair_partition_moment(n, run.q, run.T_max)
        rows.append((2 * n, repr(v), repr(o), repr(v - o)))
        out.append({"order": 2 * n, "matrix": v, "oracle": o, "delta": v - o})
    passed = all(abs(x["delta"]) <= run.tolerance * max(1.0, abs(x["oracle"])) for x in out)
    report = _base_report("moments", run, run.q, 1, run.moments_N)
    report.update({"t": run.T_max, "moments": out, "odd_moments": "zero by grading",
                   "verdict": "pass" if passed else "fail"})
    return report, rows, passed


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML run config (default: bundled)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="U64 seed (overrides the config)")
    parser = argparse.ArgumentParser(prog="qfock", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qfock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("relations", parents=[common], help="commutation relation suite")
    p = sub.add_parser("normal-order", parents=[common], help="normal form of an expression")
    p.add_argument("expression", help='word expression, e.g. "a(phi1) a*(psi1)"')
    sub.add_parser("norm-sweep", parents=[common], help="norms against their bounds")
    p = sub.add_parser("ito", parents=[common], help="Itô table refinement study")
    p.add_argument("spec", help="Itô spec TOML, or the name of a bundled spec")
    sub.add_parser("moments", parents=[common], help="Brownian vacuum moments")
    return parser


def _resolve_spec(name: str):
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("qfock") / "data" / name
    if bundled.is_file():
        return bundled
    raise ConfigError(f"no spec file {name!r}")


def main(argv=None) -> int:
    from .ito import HypothesisError
    from .sde import AlignmentError

    args = build_parser().parse_args(argv)
    try:
        run = load_config(args.config)
        if args.seed is not None or args.out is not None:
            data = asdict(run)
            if args.seed is not None:
                data["seed"] = args.seed
            if args.out is not None:
                data["out"] = args.out
            run = RunConfig(**data)
            run.validate()
        if args.command == "relations":
            report, rows, ok = cmd_relations(run)
        elif args.command == "normal-order":
            report, rows, ok = cmd_normal_order(run, args.expression)
            print(report["normal_form"])
            print(f"residual {report['residual']:.3e}")
        elif args.command == "norm-sweep":
            report, rows, ok = cmd_norm_sweep(run)
        elif args.command == "ito":
            report, rows, ok = cmd_ito(run, _resolve_spec(args.spec))
        else:
            report, rows, ok = cmd_moments(run)
    except HypothesisError as exc:
        print(f"qfock: hypothesis failed: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ConfigError, ParseError, TruncationError, AlignmentError, ValueError) as exc:
        print(f"qfock: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stem = args.command.replace("-", "_")
    jpath, cpath = write_report(Path(run.out), stem, report, rows)
    print(f"{args.command}: {report['verdict']} ({jpath}, {cpath})")
    return 0 if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
