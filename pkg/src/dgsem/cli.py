"""Configuration-driven experiment runner.

    dg simulate|compare|edge-study|verify --config run.json [--out DIR] [--threads K] [--set KEY=VALUE ...]

Configs are JSON objects; every key is optional except where an experiment
needs it and unknown keys are rejected. Exit status: 0 success, 1 config
error, 2 numerical abort (non-finite state), 3 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .analysis import (
    edge_aliasing_study,
    energy_budget,
    epsilon_estimate,
    is_unstable,
    scheme_comparison_experiment,
    write_edge_csv,
    write_trace_csv,
)
from .geometry import GeometryError, builtin_mesh, builtin_mesh_names, load_mesh, metric_identity_residual
from .solver import (
    FORMS,
    INITIAL_KINDS,
    BoundaryCondition,
    DGOperator,
    NumericalAbort,
    SchemeConfig,
    SchemeError,
    SolutionField,
    cfl_time_step,
    gauss_law_residual,
    initial_condition,
    integrate,
)
from .spectral_ops import lgl_rule
from .system import STRATEGIES, CoefficientError, make_system

__all__ = ["ConfigError", "RunConfig", "parse_config", "dump_config", "run", "main", "EXPERIMENTS"]

log = logging.getLogger("dgsem")

EXPERIMENTS = ("simulate", "compare-schemes", "edge-study", "verify-operators")
SUBCOMMANDS = {"simulate": "simulate", "compare": "compare-schemes",
               "edge-study": "edge-study", "verify": "verify-operators"}

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "simulate"
    mesh: str = "curved-periodic-2x2"
    system: str = "constant"
    system_params: dict = field(default_factory=dict)
    N: int = 4
    M: int | None = None
    L: int | None = None
    form: str = "W"
    strategy: str = "PN"
    flux: str = "upwind"
    s1_product: str = "M"
    T: float = 0.0
    dt: float | None = None
    cfl: float = 0.5
    boundary: dict = field(default_factory=dict)
    initial: str = "random"
    modes: int = 3
    seed: int = 0
    output: str = "out"
    q: int = 18
    N_range: list = field(default_factory=lambda: [3, 13])
    alpha: float = 1e-3
    beta: float = 1.0
    gamma: float = -1.0
    samples: int = 50

    def scheme(self) -> SchemeConfig:
        return SchemeConfig(self.N, self.M, self.L, self.strategy, self.form,
                            self.flux == "upwind", self.s1_product)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {"N", "M", "L", "modes", "seed", "q", "samples"}
_FLOAT_KEYS = {"T", "dt", "cfl", "alpha", "beta", "gamma"}


def _coerce(key, value):
    if value is None:
        if key in ("M", "L", "dt"):
            return None
        raise ConfigError(f"{key} must not be null")
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key in ("system_params", "boundary") and not isinstance(value, dict):
        raise ConfigError(f"{key} must be an object")
    if key == "N_range":
        if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value)):
            raise ConfigError("N_range must be [first, last]")
        return list(value)
    if key in ("experiment", "mesh", "system", "form", "strategy", "flux", "s1_product", "initial", "output"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
    return value


def validate(cfg: RunConfig) -> RunConfig:
    """Check semantic rules; errors name the rule that failed."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if cfg.flux not in ("upwind", "central"):
        raise ConfigError("flux must be 'upwind' or 'central'")
    if cfg.strategy.upper() not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}")
    if cfg.form.upper() not in FORMS:
        raise ConfigError(f"form must be one of {FORMS}")
    if cfg.initial not in INITIAL_KINDS:
        raise ConfigError(f"initial must be one of {INITIAL_KINDS}")
    if cfg.T < 0:
        raise ConfigError("T must be >= 0")
    if cfg.dt is not None and cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.cfl <= 0:
        raise ConfigError("cfl must be positive")
    if cfg.experiment == "edge-study":
        if cfg.q % 3:
            raise ConfigError("q must be divisible by 3")
        lo, hi = cfg.N_range
        if lo < 1 or hi < lo:
            raise ConfigError("N_range must satisfy 1 <= first <= last")
        return cfg
    try:
        scheme = cfg.scheme()
    except SchemeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.experiment == "compare-schemes":
        if cfg.M is None or cfg.M <= cfg.N:
            raise ConfigError("compare-schemes needs M > N")
        probe = SchemeConfig(cfg.N, cfg.M, cfg.M, cfg.strategy)
        if not probe.product_rule_exact:
            raise ConfigError(f"compare-schemes needs M >= {probe.product_rule_threshold()} "
                              f"(product-rule threshold for strategy {probe.strategy})")
    for tag, spec in cfg.boundary.items():
        if not (spec in ("zero", "periodic") or (isinstance(spec, list) and all(isinstance(v, (int, float)) for v in spec))):
            raise ConfigError(f"boundary state for {tag!r} must be 'zero' or a list of numbers")
    try:
        make_system(cfg.system, **cfg.system_params)
    except CoefficientError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.mesh not in builtin_mesh_names() and not Path(cfg.mesh).is_file():
        raise ConfigError(f"mesh {cfg.mesh!r} is neither a built-in mesh {builtin_mesh_names()} nor a file")
    return cfg


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in data.items()}
    return validate(RunConfig(**values))


def _load_json(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config."""
    return config_from_dict(_load_json(text))


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def _merge_overrides(data: dict, overrides) -> dict:
    data = dict(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data[key.strip()] = value
    return data


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    return config_from_dict(_merge_overrides(cfg.to_dict(), overrides))


# -- experiments -----------------------------------------------------------------

def _mesh(cfg: RunConfig):
    try:
        if cfg.mesh in builtin_mesh_names():
            return builtin_mesh(cfg.mesh, cfg.N)
        return load_mesh(cfg.mesh, cfg.N)
    except (GeometryError, OSError) as exc:
        raise ConfigError(f"cannot build mesh {cfg.mesh!r}: {exc}") from None


def _boundary(cfg: RunConfig) -> BoundaryCondition:
    states = {}
    for tag, spec in cfg.boundary.items():
        if isinstance(spec, list):
            vals = np.asarray(spec, dtype=float)
            states[tag] = lambda x, t, v=vals: np.broadcast_to(v, x.shape[:-1] + v.shape)
        else:
            states[tag] = spec
    return BoundaryCondition(states)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _simulate(cfg: RunConfig, out: Path, threads: int) -> dict:
    mesh = _mesh(cfg)
    system = make_system(cfg.system, **cfg.system_params)
    scheme = cfg.scheme()
    try:
        op = DGOperator.build(mesh, system, scheme, _boundary(cfg), threads=threads)
    except (SchemeError, CoefficientError) as exc:
        raise ConfigError(str(exc)) from None
    dt = cfg.dt if cfg.dt is not None else cfl_time_step(op, cfg.cfl)
    U0 = initial_condition(mesh, op.p, cfg.initial, cfg.seed, cfg.modes)
    reports = []

    def monitor(state):
        reports.append(energy_budget(state, operator=op, with_epsilon=scheme.kind == "standard"))
        return reports[-1].energy

    try:
        integrate(SolutionField(U0), cfg.T, op, dt, {"energy": monitor})
    finally:
        write_trace_csv(reports, out / "trace.csv")
    summary = {
        "experiment": cfg.experiment,
        "scheme": {"kind": scheme.kind, "N": scheme.N, "M": scheme.M, "L": scheme.L,
                   "form": scheme.form, "strategy": scheme.strategy,
                   "volume_exact": scheme.volume_exact, "product_rule_exact": scheme.product_rule_exact},
        "dt": dt,
        "steps": len(reports) - 1,
        "verdict": "unstable" if any(is_unstable(r) for r in reports) else "stable",
        "max_dEdt": max(r.dEdt for r in reports),
        "initial_energy": reports[0].energy,
        "final_energy": reports[-1].energy,
        "max_closure_error": max(r.closure_error for r in reports),
        "gamma_hat": reports[0].gamma_hat,
        "divergence_term_initial": reports[0].divergence,
    }
    if scheme.kind == "standard":
        summary["epsilon_quotient_initial"] = reports[0].epsilon_quotient
        summary["epsilon_estimate"] = epsilon_estimate(op.contrav, seed=cfg.seed)
    return summary


def _compare(cfg: RunConfig, out: Path, threads: int) -> dict:
    mesh = _mesh(cfg)
    system = make_system(cfg.system, **cfg.system_params)
    bc = _boundary(cfg)
    ref = DGOperator.build(mesh, system, SchemeConfig(cfg.N, strategy=cfg.strategy), bc)
    dt = cfg.dt if cfg.dt is not None else cfl_time_step(ref, cfg.cfl)
    U0 = initial_condition(mesh, ref.p, cfg.initial, cfg.seed, cfg.modes)
    result = scheme_comparison_experiment(mesh, system, cfg.N, cfg.M, cfg.T, U0, dt, cfg.strategy, bc,
                                          threads=threads, upwind=cfg.flux == "upwind")
    for name, trace in result.traces.items():
        write_trace_csv(trace, out / f"trace_{name}.csv")
    return {"experiment": cfg.experiment, "dt": dt, "steps": len(next(iter(result.traces.values()))) - 1,
            "schemes": result.verdicts()}


def _edge_study(cfg: RunConfig, out: Path, threads: int) -> dict:
    lo, hi = cfg.N_range
    rows = edge_aliasing_study(cfg.q, range(lo, hi + 1), cfg.alpha, cfg.beta, cfg.gamma)
    write_edge_csv(rows, out / "edge_study.csv")
    return {"experiment": cfg.experiment, "q": cfg.q,
            "unstable_N": [r.N for r in rows if r.unstable],
            "rows": [asdict(r) for r in rows]}


def _verify(cfg: RunConfig, out: Path, threads: int) -> dict:
    """Operator checks: quadrature exactness, metric identities, discrete Gauss law, free stream."""
    rng = np.random.default_rng(cfg.seed)
    checks = {}
    worst = 0.0
    for n in range(1, 17):
        rule = lgl_rule(n)
        for _ in range(cfg.samples):
            c = rng.standard_normal(2 * n)
            exact = sum(c[k] * (1 - (-1) ** (k + 1)) / (k + 1) for k in range(2 * n))
            worst = max(worst, abs(rule.weights @ np.polyval(c[::-1], rule.nodes) - exact) / max(1.0, abs(exact)))
    checks["quadrature_exactness"] = {"max_error": worst, "passed": worst <= 1e-12}

    mesh = _mesh(cfg)
    checks["metric_identity"] = {
        "max_residual": max(metric_identity_residual(e) for e in mesh.elements)}
    checks["metric_identity"]["passed"] = checks["metric_identity"]["max_residual"] <= 1e-11
    d, n = mesh.dim, cfg.N + 1
    gl = 0.0
    for M in (cfg.N, 2 * cfg.N, 3 * cfg.N):
        for _ in range(cfg.samples):
            F = rng.standard_normal((n,) * d + (d,))
            V = rng.standard_normal((n,) * d)
            gl = max(gl, gauss_law_residual(cfg.N, F, V, M))
    checks["gauss_law"] = {"max_residual": gl, "passed": gl <= 1e-11}
    if d == 2:
        ones = np.ones((mesh.K, n, n, 1))
        bc = BoundaryCondition(default=lambda x, t: np.ones(x.shape[:-1] + (1,)))
        fs = 0.0
        Ms = sorted({cfg.N, 2 * cfg.N, 2 * cfg.N + 1})
        const = make_system("constant")
        for M in Ms:
            for L in sorted({cfg.N, M}):
                for form in FORMS:
                    op = DGOperator.build(mesh, const, SchemeConfig(cfg.N, M, L, cfg.strategy, form), bc)
                    fs = max(fs, float(np.max(np.abs(op(ones)))))
        checks["free_stream"] = {"max_rhs": fs, "passed": fs <= 1e-11}
    passed = all(c["passed"] for c in checks.values())
    return {"experiment": cfg.experiment, "checks": checks, "all_passed": passed}


_RUNNERS = {"simulate": _simulate, "compare-schemes": _compare,
            "edge-study": _edge_study, "verify-operators": _verify}


def run(cfg: RunConfig, out: str | Path | None = None, threads: int = 1) -> int:
    """Run one experiment, writing config.json, CSV traces and summary.json into ``out``."""
    out = Path(out if out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg))
    try:
        # overflow on the way to a non-finite state is reported once, as an abort
        with np.errstate(over="ignore", invalid="ignore"):
            summary = _RUNNERS[cfg.experiment](cfg, out, threads)
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        _write_json(out / "summary.json", {"experiment": cfg.experiment, "status": "aborted", "error": str(exc)})
        return EXIT_ABORT
    summary["status"] = "ok"
    _write_json(out / "summary.json", summary)
    if cfg.experiment == "verify-operators" and not summary["all_passed"]:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dg", description="DGSEM energy-stability experiments")
    parser.add_argument("command", choices=sorted(SUBCOMMANDS))
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, default=1, help="element-parallel worker cap")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (value parsed as JSON when possible)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        data = _load_json(Path(args.config).read_text()) if args.config else {}
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        overrides = [f"experiment={json.dumps(SUBCOMMANDS[args.command])}"] + list(args.overrides)
        if args.out:
            overrides.append(f"output={json.dumps(args.out)}")
        cfg = config_from_dict(_merge_overrides(data, overrides))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return run(cfg, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
