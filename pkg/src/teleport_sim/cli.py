"""``teleport-sim``: verification runs, outcome enumeration and density sweeps.

Exit codes: 0 when every check passes, 1 when a numerical check fails (the
failing check is named on stderr), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .fock import matrix_trace_distance
from .hilbert import OPERATOR_TOL, half_half_splitting, projection_splitting
from .teleport import (
    PROTOCOL_TOL,
    VARIANTS,
    ModelError,
    QuditState,
    TeleportModel,
    build_model,
    closed_forms,
    dft_b_matrix,
    end_to_end,
    entangled_unitary_residual,
    locality_residuals,
    unfiltered_pure_probability,
    validate_b_matrix,
)

COMMANDS = ("verify", "teleport", "sweep", "spatial")
SPLITTINGS = ("half-half", "regions")
CSV_HEADER = ("N", "d", "n", "m", "probability", "total_probability", "closed_form_total",
              "fidelity", "e1_residual", "e2_residual")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    command: str
    n: int = 2
    d: Optional[float] = None
    d_min: Optional[float] = None
    d_max: Optional[float] = None
    d_steps: Optional[int] = None
    d_scale: str = "linear"
    splitting: Optional[str] = None
    b: str = "dft"
    state: str = "random:0"
    variant: Optional[str] = None
    out: Optional[str] = None
    format: Optional[str] = None
    tol: float = PROTOCOL_TOL
    operator_tol: float = OPERATOR_TOL
    sample: Optional[int] = None

    def resolved(self) -> "ExperimentConfig":
        """Fill command-dependent defaults and validate."""
        cfg = ExperimentConfig(**asdict(self))
        if cfg.command not in COMMANDS:
            raise ConfigError(f"unknown command {cfg.command!r}")
        if cfg.splitting is None:
            cfg.splitting = "regions" if cfg.command == "spatial" else "half-half"
        if cfg.variant is None:
            cfg.variant = "coherent+filter" if cfg.command in ("sweep", "spatial") else "perfect"
        if cfg.format is None:
            cfg.format = "csv" if cfg.command == "sweep" else "json"
        if not isinstance(cfg.n, int) or isinstance(cfg.n, bool) or cfg.n < 1:
            raise ConfigError(f"N must be a positive integer, got {cfg.n!r}")
        if cfg.splitting not in SPLITTINGS:
            raise ConfigError(f"splitting must be one of {SPLITTINGS}, got {cfg.splitting!r}")
        if cfg.command == "spatial" and cfg.splitting != "regions":
            raise ConfigError("spatial runs need the regions splitting")
        if cfg.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
        if cfg.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {cfg.format!r}")
        if cfg.d_scale not in ("linear", "log"):
            raise ConfigError(f"d scale must be linear or log, got {cfg.d_scale!r}")
        for name in ("tol", "operator_tol"):
            value = getattr(cfg, name)
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        grid = any(v is not None for v in (cfg.d_min, cfg.d_max, cfg.d_steps))
        if grid and cfg.d is not None:
            raise ConfigError("give either a single d or a d grid, not both")
        if grid and cfg.command != "sweep":
            raise ConfigError(f"{cfg.command} takes a single d")
        if not grid and cfg.d is None:
            cfg.d = 1.0
        cfg.grid()  # validates
        return cfg

    def grid(self) -> list:
        if self.d is not None:
            values = [self.d]
        else:
            if None in (self.d_min, self.d_max, self.d_steps):
                raise ConfigError("a d grid needs min, max and steps")
            if not isinstance(self.d_steps, int) or self.d_steps < 1:
                raise ConfigError(f"d steps must be a positive integer, got {self.d_steps!r}")
            if self.d_max < self.d_min:
                raise ConfigError("d max must not be below d min")
            if self.d_steps == 1:
                values = [self.d_min]
            elif self.d_scale == "log":
                if self.d_min <= 0:
                    raise ConfigError("log grid needs d min > 0")
                values = np.geomspace(self.d_min, self.d_max, self.d_steps).tolist()
            else:
                values = np.linspace(self.d_min, self.d_max, self.d_steps).tolist()
        for d in values:
            if not (isinstance(d, (int, float)) and math.isfinite(d) and d > 0):
                raise ConfigError(f"d must be positive and finite, got {d!r}")
        return [float(d) for d in values]


_FILE_KEYS = {f.name for f in fields(ExperimentConfig)} - {"command"}


def _config_from_file(path: str) -> dict:
    """Read a JSON config; ``N``, ``output``, grid objects and tolerance objects are accepted."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    out = {}
    for key, value in raw.items():
        if key == "N":
            out["n"] = value
        elif key == "output":
            out["out"] = value
        elif key == "d" and isinstance(value, dict):
            for sub in ("min", "max", "steps", "scale"):
                if sub in value:
                    out[f"d_{sub}"] = value[sub]
        elif key in ("tolerance", "tolerances"):
            if isinstance(value, dict):
                if "protocol" in value:
                    out["tol"] = value["protocol"]
                if "operator" in value:
                    out["operator_tol"] = value["operator"]
            else:
                out["tol"] = value
        elif key in _FILE_KEYS or key == "command":
            out[key] = value
        else:
            raise ConfigError(f"unknown config field {key!r}")
    return out


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teleport-sim",
                                     description="Beam-splitting teleportation on the Boson Fock space.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="FILE", help="JSON config; flags override its fields")
    parser.add_argument("--n", type=int, help="qudit dimension N")
    parser.add_argument("--d", type=float, help="beam density (mean particle number)")
    parser.add_argument("--d-min", type=float)
    parser.add_argument("--d-max", type=float)
    parser.add_argument("--d-steps", type=int)
    parser.add_argument("--d-scale", choices=("linear", "log"))
    parser.add_argument("--splitting", choices=SPLITTINGS)
    parser.add_argument("--b", metavar="dft|FILE", help="phase matrix: DFT or a JSON file")
    parser.add_argument("--state", metavar="SPEC",
                        help="basis:K, uniform, random:SEED or a JSON file (default random:0)")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--tol", type=float, help=f"protocol tolerance (default {PROTOCOL_TOL:g})")
    parser.add_argument("--operator-tol", type=float,
                        help=f"operator-identity tolerance (default {OPERATOR_TOL:g})")
    parser.add_argument("--sample", type=int, metavar="SEED",
                        help="teleport: also draw one outcome with this seed")
    return parser


def parse_config(argv) -> ExperimentConfig:
    args = _parser().parse_args(argv)
    values = _config_from_file(args.config) if args.config else {}
    if "command" in values and values["command"] != args.command:
        raise ConfigError(f"config is for {values['command']!r}, command line says {args.command!r}")
    values["command"] = args.command
    for key, value in vars(args).items():
        if key not in ("config", "command") and value is not None:
            values[key] = value
    if "d" in vars(args) and args.d is not None:
        for key in ("d_min", "d_max", "d_steps"):
            if getattr(args, key) is None:
                values.pop(key, None)
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.resolved()


# ---------------------------------------------------------------- inputs


def _complex_array(data, what: str, ndim: int) -> np.ndarray:
    """Numbers of rank ``ndim``, or ``[re, im]`` pairs one rank deeper."""
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected numbers or [re, im] pairs") from exc
    if arr.ndim == ndim + 1 and arr.shape[-1] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim != ndim:
        raise ConfigError(f"{what}: expected a rank-{ndim} array, got shape {arr.shape}")
    return arr.astype(complex)


def load_b(spec: str, n: int) -> np.ndarray:
    if spec == "dft":
        return dft_b_matrix(n)
    try:
        raw = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read b matrix {spec}: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("b")
    b = _complex_array(raw, "b matrix", 2)
    if b.shape != (n, n):
        raise ConfigError(f"b matrix must be {n}x{n}, got shape {b.shape}")
    return b


def load_state(spec: str, n: int) -> QuditState:
    """``basis:K``, ``uniform``, ``random:SEED`` or a JSON file.

    The file holds ``{"vector": [...]}`` or ``{"density_matrix": [[...]]}``
    with complex entries written as ``[re, im]`` pairs or plain reals.
    """
    try:
        if spec == "uniform":
            return QuditState.uniform(n)
        if spec.startswith("basis:"):
            k = int(spec.split(":", 1)[1])
            if not 0 <= k < n:
                raise ConfigError(f"basis index {k} out of range for N={n}")
            return QuditState.basis(n, k)
        if spec.startswith("random:"):
            seed = int(spec.split(":", 1)[1])
            return QuditState.random(n, np.random.default_rng(seed))
    except ValueError as exc:
        raise ConfigError(f"bad state spec {spec!r}: {exc}") from exc
    try:
        raw = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read state {spec}: {exc}") from exc
    if not isinstance(raw, dict) or not ({"vector", "density_matrix"} & raw.keys()):
        raise ConfigError("state file needs a 'vector' or 'density_matrix' field")
    try:
        if "vector" in raw:
            vec = _complex_array(raw["vector"], "state vector", 1)
            if vec.shape != (n,):
                raise ConfigError(f"state vector must have length {n}")
            return QuditState.from_density_matrix(np.outer(vec, vec.conj()))
        rho = _complex_array(raw["density_matrix"], "density matrix", 2)
        if rho.shape != (n, n):
            raise ConfigError(f"density matrix must be {n}x{n}")
        return QuditState.from_density_matrix(rho)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid state: {exc}") from exc


# ---------------------------------------------------------------- runs


def _check(name: str, residual: float, tolerance: float) -> dict:
    residual = float(residual)
    return {"name": name, "residual": residual, "tolerance": float(tolerance),
            "pass": bool(residual <= tolerance)}


def _encode_matrix(mat: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in mat]


def _build(cfg: ExperimentConfig, d: float) -> TeleportModel:
    split = half_half_splitting(cfg.n) if cfg.splitting == "half-half" else projection_splitting(cfg.n)
    return build_model(cfg.n, d, split, b=load_b(cfg.b, cfg.n), tol=cfg.tol)


def _reference_probabilities(model: TeleportModel, q: QuditState, variant: str):
    """Analytic per-outcome probabilities and their total."""
    n = model.n
    if variant == "perfect":
        per = np.full((n, n), 1.0 / n ** 2)
        return per, 1.0
    if variant == "coherent+filter":
        cf = closed_forms(n, model.d)
        return np.full((n, n), cf.per_outcome), cf.total
    per = np.zeros((n, n))
    for w, row in zip(q.weights, q.rows):
        for nn in range(n):
            per[nn, :] += w * unfiltered_pure_probability(model, row, nn)
    return per, float(per.sum())


@dataclass
class PointResult:
    d: float
    checks: list
    outcomes: list
    rows: list


def run_point(cfg: ExperimentConfig, d: float, q: QuditState) -> PointResult:
    """Build the model at one density and run every check for the configured variant.

    Raises:
        ModelError: when the model itself fails an identity.
    """
    model = _build(cfg, d)
    checks = [_check(name, value, OPERATOR_TOL if _is_operator_check(name) else cfg.tol)
              for name, value in model.residuals.items()]
    local = cfg.command == "spatial"
    results = end_to_end(model, q, cfg.variant, local=local, with_e1=True)
    per_ref, total_ref = _reference_probabilities(model, q, cfg.variant)
    probs = np.array([[results[nn * model.n + m].probability for m in range(model.n)]
                      for nn in range(model.n)])
    total = float(probs.sum())
    target = q.density_matrix()

    checks.append(_check("outcome_probability_closed_form", np.max(np.abs(probs - per_ref)), cfg.tol))
    checks.append(_check("total_probability_closed_form", abs(total - total_ref), cfg.tol))
    oracle = max(matrix_trace_distance(r.recovered_qudit.density_matrix(), target) for r in results)
    checks.append(_check("qudit_key_recovery", oracle, cfg.tol))
    if cfg.variant != "coherent":
        checks.append(_check("channel_trace_distance", max(r.e1_residual for r in results), cfg.tol))
    if cfg.variant == "perfect" and model.splitting.kind == "half-half":
        checks.append(_check("entangled_state_unitary", entangled_unitary_residual(model), cfg.tol))
    if local:
        for name, value in locality_residuals(model, [q]).items():
            checks.append(_check(name, value, cfg.operator_tol))
        if cfg.variant == "coherent+filter":
            glob = end_to_end(model, q, cfg.variant, local=False, with_e1=False)
            gap = max(abs(a.probability - b.probability) for a, b in zip(results, glob))
            checks.append(_check("local_vs_global_filter_probability", gap, cfg.operator_tol))

    outcomes, rows = [], []
    for r in results:
        outcomes.append({
            "n": r.n, "m": r.m, "probability": float(r.probability),
            "fidelity": float(r.fidelity_to_input), "e1_residual": float(r.e1_residual),
            "recovered_qudit": _encode_matrix(r.recovered_qudit.density_matrix()),
        })
        rows.append([cfg.n, d, r.n, r.m, r.probability, total, total_ref,
                     r.fidelity_to_input, r.e1_residual, abs(total - 1.0)])
    rows.append([cfg.n, d, "", "", total, total, total_ref,
                 min(r.fidelity_to_input for r in results),
                 max(r.e1_residual for r in results), abs(total - 1.0)])
    return PointResult(d=d, checks=checks, outcomes=outcomes, rows=rows)


def _is_operator_check(name: str) -> bool:
    return name in ("resolution_of_identity", "t_unitary", "t_maps_arms", "k1_orthogonal",
                    "half_mass", "k2_orthogonal", "b_unit_modulus", "b_rows_orthogonal",
                    "keys_unitary")


def _sample(results: list, seed: int) -> dict:
    probs = np.array([o["probability"] for o in results])
    reject = max(0.0, 1.0 - probs.sum())
    weights = np.append(probs, reject)
    pick = int(np.random.default_rng(seed).choice(len(weights), p=weights / weights.sum()))
    outcome = None if pick == len(probs) else [results[pick]["n"], results[pick]["m"]]
    return {"seed": seed, "outcome": outcome}


def _format_float(x) -> str:
    return x if isinstance(x, str) else (str(x) if isinstance(x, int) else format(float(x), ".17g"))


def render_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_format_float(x) for x in row])
    return buf.getvalue()


def render_json(cfg: ExperimentConfig, checks: list, outcomes: list, extra: Optional[dict] = None) -> str:
    report = {"config": asdict(cfg), "checks": checks, "outcomes": outcomes}
    if extra:
        report.update(extra)
    return json.dumps(report, indent=2) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc


def run(cfg: ExperimentConfig) -> int:
    """Execute a resolved config; returns the exit code."""
    q = load_state(cfg.state, cfg.n)
    b = load_b(cfg.b, cfg.n)
    grid = cfg.grid()
    try:
        if cfg.command == "sweep":
            with ThreadPoolExecutor() as pool:
                points = list(pool.map(lambda d: run_point(cfg, d, q), grid))
        else:
            points = [run_point(cfg, grid[0], q)]
    except ModelError as exc:
        checks = [_check(exc.check, exc.residual, exc.tolerance)]
        if exc.check.startswith("b_"):
            checks = [_check(k, v, OPERATOR_TOL) for k, v in validate_b_matrix(b).items()]
        _emit(render_json(cfg, checks, []), cfg.out)
        print(f"FAIL {exc.check}: residual {exc.residual:.3e} exceeds {exc.tolerance:.1e}",
              file=sys.stderr)
        return EXIT_FAIL

    checks = []
    for p in points:
        for c in p.checks:
            checks.append({**c, "d": p.d} if cfg.command == "sweep" else c)
    if cfg.format == "csv":
        _emit(render_csv([row for p in points for row in p.rows]), cfg.out)
    else:
        extra = None
        if cfg.command == "teleport" and cfg.sample is not None:
            extra = {"sample": _sample(points[0].outcomes, cfg.sample)}
        outcomes = [{**o, "d": p.d} if cfg.command == "sweep" else o
                    for p in points for o in p.outcomes]
        _emit(render_json(cfg, checks, outcomes, extra), cfg.out)

    failed = [c for c in checks if not c["pass"]]
    for c in failed:
        where = f" at d={c['d']:g}" if "d" in c else ""
        print(f"FAIL {c['name']}{where}: residual {c['residual']:.3e} exceeds {c['tolerance']:.1e}",
              file=sys.stderr)
    if not failed:
        print(f"PASS {len(checks)} checks", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
