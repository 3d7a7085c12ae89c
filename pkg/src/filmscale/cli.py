"""Scenario runner: config ingestion, pipeline orchestration, reports.

A scenario is a TOML (or JSON) file naming the prestrain exponents, the
prestrain matrices as expression strings in x1/x2, and the tasks to run.
Tasks execute in dependency order -- the regime classification feeds the
functional assembly, the minimizer feeds the recovery probe -- and every
report embeds the regime record so artifacts are self-describing.

Reports are deterministic for a fixed config and seed: report.json holds
no wall-clock data (timings land in timings.json next to it) and is
written with sorted keys, so reruns are byte-identical.

Exit codes: 0 success, 2 config error (message names the offending field
path), 3 task failure (diagnostics in the report and on stderr).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

from . import __version__
from .curvature import leading_fit
from .elastic import Material
from .fields import ExprError, Grid2, parse, sample_sym3
from .gamma import assemble, evaluate, minimize
from .probe import ProbeScenario, commutator_fit, scaling_fit
from .regimes import classify, optimality_indicators

TASKS = ("classify", "minimize", "indicators", "curvature", "probe", "commutator")
_SOLVER_TASKS = {"minimize", "indicators", "probe"}

_COMPONENTS = (
    ((1, 2), (1, 2)),
    ((1, 3), (1, 3)),
    ((2, 3), (2, 3)),
    ((1, 2), (1, 3)),
    ((1, 2), (2, 3)),
    ((1, 3), (2, 3)),
)


class ConfigError(Exception):
    """Invalid scenario config; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path!r}: {message}")
        self.path = path


# ------------------------------------------------------------- scenario type


@dataclass
class ScenarioConfig:
    """Validated scenario: fields resolved, defaults applied."""

    alpha: float
    gamma: float
    tasks: tuple[str, ...]
    label: str = ""
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    resolution: int = 65
    S: tuple[str, ...] = ("0",) * 6   # upper triangle (11, 12, 13, 22, 23, 33)
    B: tuple[str, ...] = ("0",) * 6
    mu: float = 1.0
    lam: float = 1.0
    h_sweep: tuple[float, ...] = ()
    seed: int = 0
    out: str = "out"
    probe_options: dict = field(default_factory=dict)
    commutator_options: dict = field(default_factory=dict)
    curvature_options: dict = field(default_factory=dict)

    @property
    def material(self) -> Material:
        return Material(self.mu, self.lam)

    def resolved(self) -> dict:
        """Canonical dict for hashing and for embedding in the report."""
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "tasks": list(self.tasks),
            "label": self.label,
            "domain": list(self.domain),
            "resolution": self.resolution,
            "S": list(self.S),
            "B": list(self.B),
            "material": {"mu": self.mu, "lambda": self.lam},
            "h_sweep": list(self.h_sweep),
            "seed": self.seed,
            "probe": dict(sorted(self.probe_options.items())),
            "commutator": dict(sorted(self.commutator_options.items())),
            "curvature": dict(sorted(self.curvature_options.items())),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------- config loading


def _need(raw: dict, key: str, kind, where: str = ""):
    path = f"{where}.{key}" if where else key
    if key not in raw:
        raise ConfigError(path, "required field is missing")
    val = raw[key]
    if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if kind is int and isinstance(val, int) and not isinstance(val, bool):
        return val
    if isinstance(val, kind) and not isinstance(val, bool):
        return val
    raise ConfigError(path, f"expected {kind.__name__}, got {type(val).__name__}")


def _opt(raw: dict, key: str, kind, default, where: str = ""):
    if key not in raw:
        return default
    return _need(raw, key, kind, where)


def _expr_entry(entry, path: str) -> str:
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        entry = repr(float(entry))
    if not isinstance(entry, str):
        raise ConfigError(path, "matrix entries are expression strings or numbers")
    try:
        parse(entry)
    except ExprError as exc:
        raise ConfigError(path, f"does not parse: {exc}") from None
    return entry


def _matrix6(raw, name: str) -> tuple[str, ...]:
    """S/B input: scalar zero, 6 upper-triangle entries, or nested 3x3."""
    if raw is None:
        return ("0",) * 6
    if isinstance(raw, (str, int, float)) and not isinstance(raw, bool):
        ent = _expr_entry(raw, name)
        if ent.strip() not in ("0", "0.0"):
            raise ConfigError(
                name, "a single entry must be 0; spell out 6 or 3x3 entries"
            )
        return ("0",) * 6
    if isinstance(raw, (list, tuple)) and len(raw) == 6 and not any(
        isinstance(r, (list, tuple)) for r in raw
    ):
        return tuple(
            _expr_entry(e, f"{name}[{i}]") for i, e in enumerate(raw)
        )
    if isinstance(raw, (list, tuple)) and len(raw) == 3:
        rows = []
        for i, row in enumerate(raw):
            if not isinstance(row, (list, tuple)) or len(row) != 3:
                raise ConfigError(f"{name}[{i}]", "expected a row of 3 entries")
            rows.append([_expr_entry(e, f"{name}[{i}][{j}]")
                         for j, e in enumerate(row)])
        for i in range(3):
            for j in range(i + 1, 3):
                a, b = parse(rows[i][j]), parse(rows[j][i])
                if a != b:
                    raise ConfigError(
                        f"{name}[{j}][{i}]", "matrix must be symmetric"
                    )
        return (rows[0][0], rows[0][1], rows[0][2],
                rows[1][1], rows[1][2], rows[2][2])
    raise ConfigError(name, "expected 0, a 6-entry upper triangle, or a 3x3 matrix")


def _sweep(raw, path: str) -> tuple[float, ...]:
    if raw is None:
        return tuple(float(h) for h in np.geomspace(1e-1, 10 ** -2.5, 8))
    if isinstance(raw, dict):
        count = _opt(raw, "count", int, 8, path)
        h_max = _opt(raw, "h_max", float, 1e-1, path)
        h_min = _opt(raw, "h_min", float, float(10 ** -2.5), path)
        if count < 6:
            raise ConfigError(f"{path}.count", "need at least 6 h values")
        if not (0.0 < h_min < h_max):
            raise ConfigError(f"{path}.h_min", "need 0 < h_min < h_max")
        return tuple(float(h) for h in np.geomspace(h_max, h_min, count))
    if isinstance(raw, (list, tuple)):
        if len(raw) < 6:
            raise ConfigError(path, "need at least 6 h values")
        try:
            hs = tuple(sorted((float(h) for h in raw), reverse=True))
        except (TypeError, ValueError):
            raise ConfigError(path, "h values must be numbers") from None
        if hs[-1] <= 0.0:
            raise ConfigError(path, "h values must be positive")
        return hs
    raise ConfigError(path, "expected a list of h values or {count, h_max, h_min}")


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and validate a TOML or JSON scenario file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(str(path), "no such config file")
    text = p.read_bytes()
    if p.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    else:
        try:
            raw = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a table/object")
    return validate_config(raw)


def validate_config(raw: dict) -> ScenarioConfig:
    known = {
        "alpha", "gamma", "tasks", "label", "domain", "resolution", "S", "B",
        "material", "h_sweep", "seed", "out", "probe", "commutator",
        "curvature",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    alpha = _need(raw, "alpha", float)
    gamma = _need(raw, "gamma", float)
    if alpha <= 0.0:
        raise ConfigError("alpha", "must be positive")
    if gamma <= 0.0:
        raise ConfigError("gamma", "must be positive")

    tasks_raw = _need(raw, "tasks", list)
    if not tasks_raw:
        raise ConfigError("tasks", "must name at least one task")
    for i, t in enumerate(tasks_raw):
        if t not in TASKS:
            raise ConfigError(
                f"tasks[{i}]", f"unknown task {t!r}; choose from {', '.join(TASKS)}"
            )
    tasks = tuple(t for t in TASKS if t in tasks_raw)

    domain_raw = _opt(raw, "domain", list, [0.0, 1.0, 0.0, 1.0])
    if len(domain_raw) != 4 or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in domain_raw
    ):
        raise ConfigError("domain", "expected [x1_min, x1_max, x2_min, x2_max]")
    domain = tuple(float(x) for x in domain_raw)
    if not (domain[0] < domain[1] and domain[2] < domain[3]):
        raise ConfigError("domain", "min must be below max on both axes")

    resolution = _opt(raw, "resolution", int, 65)
    if resolution < 5:
        raise ConfigError("resolution", "need at least 5 nodes per axis")
    if resolution < 17 and _SOLVER_TASKS & set(tasks):
        raise ConfigError(
            "resolution", "solver tasks (minimize/indicators/probe) need >= 17"
        )

    mat_raw = _opt(raw, "material", dict, {})
    mu = _opt(mat_raw, "mu", float, 1.0, "material")
    lam = _opt(mat_raw, "lambda", float, 1.0, "material")
    if mu <= 0.0:
        raise ConfigError("material.mu", "must be positive")
    if lam < 0.0:
        raise ConfigError("material.lambda", "must be nonnegative")

    seed = _opt(raw, "seed", int, 0)
    label = _opt(raw, "label", str, "")
    out = _opt(raw, "out", str, "out")
    S = _matrix6(raw.get("S"), "S")
    B = _matrix6(raw.get("B"), "B")
    h_sweep = _sweep(raw.get("h_sweep"), "h_sweep")

    probe_raw = _opt(raw, "probe", dict, {})
    probe_known = {
        "variant", "refine_resolution", "quad", "v", "w", "mollify_t",
        "holder_a",
    }
    for key in probe_raw:
        if key not in probe_known:
            raise ConfigError(f"probe.{key}", "unknown field")
    if "variant" in probe_raw and probe_raw["variant"] not in (
        "auto", "recseq", "recseq0", "recseq5"
    ):
        raise ConfigError("probe.variant", "choose auto/recseq/recseq0/recseq5")
    if "v" in probe_raw:
        _expr_entry(probe_raw["v"], "probe.v")
    if "w" in probe_raw:
        w = probe_raw["w"]
        if not isinstance(w, (list, tuple)) or len(w) != 2:
            raise ConfigError("probe.w", "expected two expressions")
        for i, e in enumerate(w):
            _expr_entry(e, f"probe.w[{i}]")
    if "quad" in probe_raw:
        q = probe_raw["quad"]
        if (not isinstance(q, (list, tuple)) or len(q) != 2
                or not all(isinstance(x, int) and x > 0 for x in q)):
            raise ConfigError("probe.quad", "expected [cells_per_axis, x3_points]")

    comm_raw = _opt(raw, "commutator", dict, {})
    for key in comm_raw:
        if key not in {"v", "resolution", "holder_a", "epsilons"}:
            raise ConfigError(f"commutator.{key}", "unknown field")
    if "v" in comm_raw:
        _expr_entry(comm_raw["v"], "commutator.v")

    curv_raw = _opt(raw, "curvature", dict, {})
    for key in curv_raw:
        if key not in {"point", "components"}:
            raise ConfigError(f"curvature.{key}", "unknown field")
    if "point" in curv_raw:
        pt = curv_raw["point"]
        if (not isinstance(pt, (list, tuple)) or len(pt) != 2
                or not all(isinstance(x, (int, float)) for x in pt)):
            raise ConfigError("curvature.point", "expected [x1, x2]")

    return ScenarioConfig(
        alpha=alpha, gamma=gamma, tasks=tasks, label=label, domain=domain,
        resolution=resolution, S=S, B=B, mu=mu, lam=lam, h_sweep=h_sweep,
        seed=seed, out=out, probe_options=dict(probe_raw),
        commutator_options=dict(comm_raw), curvature_options=dict(curv_raw),
    )


# ---------------------------------------------------------------- task runner


@dataclass
class RunReport:
    """Per-task outputs plus the regime record and provenance data."""

    config: ScenarioConfig
    regime: dict
    tasks: dict
    failures: dict
    timings: dict
    partial: bool

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "config_hash": self.config.config_hash(),
            "config": self.config.resolved(),
            "regime": self.regime,
            "tasks": self.tasks,
            "failures": self.failures,
            "partial": self.partial,
        }

    def write(self, outdir: str | Path) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        report = out / "report.json"
        report.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True)
                          + "\n")
        (out / "timings.json").write_text(
            json.dumps(self.timings, indent=2, sort_keys=True) + "\n"
        )
        return report


def _grid(cfg: ScenarioConfig, resolution: int | None = None) -> Grid2:
    n = resolution or cfg.resolution
    return Grid2(*cfg.domain, n, n)


def _s22_zero(S_fld, alpha: float, gamma: float) -> bool:
    """Route to the shear-only taxonomy only when it is the relevant one.

    A prestrain that vanishes entirely satisfies the general hypotheses
    whenever they apply (alpha >= 4, gamma >= 2), so it keeps the general
    case label; the shear-only cases are reserved for genuinely sheared S
    (and for S = 0 outside the general range, e.g. alpha = 2).
    """
    if float(np.abs(S_fld.minor2().comps).max()) > 1e-12:
        return False
    if (float(np.abs(S_fld.comps).max()) <= 1e-12
            and alpha >= 4.0 and gamma >= 2.0):
        return False
    return True


def _auto_variant(spec) -> str:
    if spec.theorem_case == "T1.2-scaling-only":
        return "recseq0"
    return "recseq5" if spec.s22_zero else "recseq"


def _run_minimize(cfg: ScenarioConfig, spec, outdir: Path):
    grid = _grid(cfg)
    S_fld = sample_sym3(cfg.S, grid)
    B_fld = sample_sym3(cfg.B, grid)
    E = assemble(spec, S_fld, B_fld, cfg.material, grid)
    res = minimize(E, options={"seed": cfg.seed})
    refine = int(cfg.probe_options.get("refine_resolution", 129))
    refined = None
    if refine > cfg.resolution:
        g2 = _grid(cfg, refine)
        E2 = assemble(spec, sample_sym3(cfg.S, g2), sample_sym3(cfg.B, g2),
                      cfg.material, g2)
        refined = minimize(E2, options={"seed": cfg.seed, "starts": 0,
                                        "v0": res.v})
    payload = res.to_dict()
    if refined is not None:
        payload["refined"] = {"resolution": refine, **refined.to_dict()}
    return payload, (E, res, refined)


def _run_indicators(cfg: ScenarioConfig, spec):
    grid = _grid(cfg)
    rep = optimality_indicators(sample_sym3(cfg.S, grid),
                                sample_sym3(cfg.B, grid), spec)
    return rep.to_dict()


def _run_curvature(cfg: ScenarioConfig, outdir: Path):
    opts = cfg.curvature_options
    x1 = 0.5 * (cfg.domain[0] + cfg.domain[1])
    x2 = 0.5 * (cfg.domain[2] + cfg.domain[3])
    point = tuple(float(x) for x in opts.get("point", (x1, x2))) + (0.0,)
    comps = opts.get("components")
    if comps in (None, "all"):
        comps = _COMPONENTS
    fits = []
    flat = True
    for comp in comps:
        fit = leading_fit(cfg.S, cfg.B, cfg.alpha, cfg.gamma, comp, point)
        fits.append(fit.to_dict())
        flat = flat and fit.vanishing
        (a, b), (c, d) = fit.component
        fit.save_csv(outdir / f"curvature_R{a}{b}{c}{d}.csv")
    return {"point": list(point), "flat": flat, "fits": fits}


def _run_probe(cfg: ScenarioConfig, spec, minimize_out, outdir: Path):
    opts = cfg.probe_options
    variant = opts.get("variant", "auto")
    if variant == "auto":
        variant = _auto_variant(spec)
    quad = tuple(opts.get("quad", (48, 3)))

    if variant == "recseq0":
        if "v" not in opts:
            raise ValueError(
                "scaling-only scenarios have no canonical recovery; set "
                "probe.v (and optionally probe.w, probe.mollify_t) for a "
                "machinery-only run"
            )
        sc = ProbeScenario(
            variant="recseq0",
            v=opts["v"],
            w=tuple(opts.get("w", ("0", "0"))),
            S=cfg.S, B=cfg.B,
            alpha=cfg.alpha, gamma=cfg.gamma,
            material=cfg.material, domain=cfg.domain,
            mollify_t=opts.get("mollify_t"),
            holder_a=opts.get("holder_a"),
            resolution=max(cfg.resolution, 129),
            quad=quad,
            machinery_only=True,
            label=cfg.label or "machinery-only recseq0 probe",
        )
        report = scaling_fit(sc, h_sweep=cfg.h_sweep)
        report.save_csv(outdir / "probe_scaling.csv")
        report.save_json(outdir / "probe_scaling.json")
        return report.to_dict()

    if minimize_out is None:
        raise ValueError("probe needs the minimizer; dependency failed")
    E, res, refined = minimize_out
    use = refined if refined is not None else res
    plate_value, plate_bend, plate_stretch = use.value, use.bending, use.stretching
    sc = ProbeScenario(
        variant=variant,
        v=use.v, w=use.w,
        S=cfg.S, B=cfg.B,
        alpha=cfg.alpha, gamma=cfg.gamma, delta=spec.delta,
        material=cfg.material, domain=cfg.domain,
        predicted_exponent=spec.predicted_exponent,
        quad=quad,
        label=cfg.label,
    )
    report = scaling_fit(sc, h_sweep=cfg.h_sweep)
    report.save_csv(outdir / "probe_scaling.csv")
    report.save_json(outdir / "probe_scaling.json")
    payload = report.to_dict()
    payload["plate_value"] = float(plate_value)
    payload["plate_bending"] = float(plate_bend)
    payload["plate_stretching"] = float(plate_stretch)
    if report.verdict == "ok" and plate_value > 0.0:
        idx = max(i for i, k in enumerate(report.kept) if k)
        ratio = report.energies[idx] / report.h[idx] ** (2.0 + spec.delta)
        payload["limit_ratio"] = float(ratio)
        payload["limit_rel_gap"] = float(abs(ratio - plate_value) / plate_value)
    return payload


def _run_commutator(cfg: ScenarioConfig, outdir: Path):
    opts = cfg.commutator_options
    v = opts.get("v", "weier(1.4, 2, 7)")
    res = int(opts.get("resolution", 513))
    grid = Grid2(*cfg.domain, res, res)
    eps = opts.get("epsilons")
    rep = commutator_fit(v, grid, epsilons=eps)
    payload = {
        "v": v,
        "resolution": res,
        "epsilons": [float(e) for e in rep["epsilons"]],
        "defects": [float(d) for d in rep["defects"]],
        "slope": float(rep["slope"]),
    }
    if "holder_a" in opts:
        a = float(opts["holder_a"])
        payload["holder_a"] = a
        payload["slope_floor"] = 2.0 * a - 0.1
        payload["passes_floor"] = bool(rep["slope"] >= 2.0 * a - 0.1)
    with open(outdir / "commutator.csv", "w") as f:
        f.write("epsilon,defect\n")
        for e, d in zip(rep["epsilons"], rep["defects"]):
            f.write(f"{e!r},{d!r}\n")
    return payload


def run(cfg: ScenarioConfig, outdir: str | Path | None = None) -> RunReport:
    """Execute the requested tasks in dependency order and write reports."""
    out = Path(outdir if outdir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    grid = _grid(cfg)
    S_fld = sample_sym3(cfg.S, grid)
    B_fld = sample_sym3(cfg.B, grid)
    spec = classify(cfg.alpha, cfg.gamma, S_fld, B_fld,
                    s22_zero=_s22_zero(S_fld, cfg.alpha, cfg.gamma))

    tasks: dict = {}
    failures: dict = {}
    timings: dict = {}
    if "classify" in cfg.tasks:
        tasks["classify"] = spec.to_dict()

    def attempt(name: str, fn, *args):
        t0 = time.perf_counter()
        try:
            result = fn(*args)
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            failures[name] = f"{type(exc).__name__}: {exc}"
            return None
        finally:
            timings[name] = time.perf_counter() - t0
        return result

    need_minimize = "minimize" in cfg.tasks or (
        "probe" in cfg.tasks and _auto_variant(spec) != "recseq0"
        and cfg.probe_options.get("variant", "auto") != "recseq0"
    )
    minimize_out = None
    if need_minimize:
        got = attempt("minimize", _run_minimize, cfg, spec, out)
        if got is not None:
            payload, minimize_out = got
            if "minimize" in cfg.tasks or minimize_out is not None:
                tasks["minimize"] = payload

    if "indicators" in cfg.tasks:
        got = attempt("indicators", _run_indicators, cfg, spec)
        if got is not None:
            tasks["indicators"] = got

    if "curvature" in cfg.tasks:
        got = attempt("curvature", _run_curvature, cfg, out)
        if got is not None:
            tasks["curvature"] = got

    if "probe" in cfg.tasks:
        if need_minimize and minimize_out is None:
            failures["probe"] = "aborted: dependency 'minimize' failed"
            timings["probe"] = 0.0
        else:
            got = attempt("probe", _run_probe, cfg, spec, minimize_out, out)
            if got is not None:
                tasks["probe"] = got

    if "commutator" in cfg.tasks:
        got = attempt("commutator", _run_commutator, cfg, out)
        if got is not None:
            tasks["commutator"] = got

    report = RunReport(
        config=cfg,
        regime=spec.to_dict(),
        tasks=tasks,
        failures=failures,
        timings=timings,
        partial=bool(failures),
    )
    report.write(out)
    return report


# ------------------------------------------------------------------- frontend


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.grid is not None:
        if args.grid < 5:
            raise ConfigError("--grid", "need at least 5 nodes per axis")
        if args.grid < 17 and _SOLVER_TASKS & set(cfg.tasks):
            raise ConfigError("--grid", "solver tasks need >= 17")
        cfg.resolution = args.grid
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report = run(cfg)
    path = Path(cfg.out) / "report.json"
    for name in cfg.tasks:
        if name in report.failures:
            print(f"{name}: FAILED - {report.failures[name]}", file=sys.stderr)
        elif name in report.tasks:
            print(f"{name}: ok")
    print(f"report: {path}")
    return 3 if report.failures else 0


def _cmd_classify(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    grid = _grid(cfg)
    S_fld = sample_sym3(cfg.S, grid)
    spec = classify(cfg.alpha, cfg.gamma, S_fld, sample_sym3(cfg.B, grid),
                    s22_zero=_s22_zero(S_fld, cfg.alpha, cfg.gamma))
    print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    root = Path(args.config_dir)
    if not root.is_dir():
        print(f"config error at {str(root)!r}: not a directory", file=sys.stderr)
        return 2
    paths = sorted(
        p for p in root.iterdir() if p.suffix.lower() in (".toml", ".json")
    )
    if not paths:
        print(f"config error at {str(root)!r}: no .toml or .json configs",
              file=sys.stderr)
        return 2
    any_config_error = False
    any_failure = False
    for p in paths:
        try:
            cfg = _apply_overrides(load_config(p), args)
        except ConfigError as exc:
            any_config_error = True
            print(f"{p.name}: {exc}", file=sys.stderr)
            continue
        outdir = Path(args.out) / p.stem if args.out else Path(cfg.out) / p.stem
        report = run(cfg, outdir)
        case = report.regime.get("case")
        if report.failures:
            any_failure = True
            bad = ", ".join(sorted(report.failures))
            print(f"{p.name}: PARTIAL ({case}; failed: {bad})")
        else:
            print(f"{p.name}: ok ({case})")
    if any_config_error:
        return 2
    return 3 if any_failure else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="filmscale",
        description="Scaling regimes, plate functionals, and recovery probes "
                    "for shallowly prestrained films",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, default=None,
                        help="override grid resolution per axis")
    common.add_argument("--seed", type=int, default=None,
                        help="override the rng seed")
    common.add_argument("--out", default=None, help="override output directory")

    p_run = sub.add_parser("run", parents=[common],
                           help="run a scenario's tasks and write report.json")
    p_run.add_argument("config")
    p_run.set_defaults(fn=_cmd_run)

    p_cls = sub.add_parser("classify", parents=[common],
                           help="print the regime record for a scenario")
    p_cls.add_argument("config")
    p_cls.set_defaults(fn=_cmd_classify)

    p_swp = sub.add_parser("sweep", parents=[common],
                           help="run every scenario config in a directory")
    p_swp.add_argument("config_dir")
    p_swp.set_defaults(fn=_cmd_sweep)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
