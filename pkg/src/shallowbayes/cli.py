"""Batch front-end: reproducible sweeps and experiment drivers.

Subcommands
-----------
hermite               print an activation's Hermite data (mu_l, nu, g(1))
sweep-theory          solve both branches over an alpha grid, write a CSV
alpha-sp              locate the specialisation transition, write JSON
gamp-run              matrix-sensing AMP instances against theory, CSV
mcmc-run              posterior sampling chains, trace CSVs + summary JSON
build-spectral-table  precompute the feature-signal spectral table

Configs are TOML files; ``--set section.key=value`` (repeatable) patches
them, ``--seed`` overrides the seed of the command's own section, and
``--dry-run`` validates everything without computing.  Every output file
starts with a header carrying the package version, the resolved config
as one-line JSON, and two hashes: ``config_hash`` identifies the full
run recipe (everything except the [output] block), ``model_hash`` just
the [model] block, which is what plot overlays are matched on.

Reruns with the same config in the same out-dir reuse finished work:
sweep and GAMP grids checkpoint per grid point (interruption loses at
most the in-flight point), sampler runs checkpoint per chain.  An output
file whose embedded hash disagrees with the current config is never
appended to; the command refuses and asks for a fresh out-dir.

Exit codes: 0 success, 2 bad config or usage, 3 at least one solver or
chain did not converge (partial outputs are kept and flagged in place).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:  # python < 3.11
    import tomli

from . import __version__
from .activations import builtin, g_eval
from .gamp import GampConfig, GampDivergence, gamp_rie_fit, predict
from .mcmc import (ChainConfig, OverlapTrace, centered_q2, centered_q2_series,
                   equilibration_gate, hmc_gaussian, load_snapshot,
                   metropolis_binary, save_snapshot)
from .model import ModelParams, generate_dataset, sample_teacher
from .saddle import SolverConfig, TheoryParams, find_alpha_sp, solve_equilibrium, solve_universal
from .spectral import (SpectralConfig, SpectralTable, TableFormatError,
                       build_spectral_table, packaged_table)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SWEEP_COLUMNS = ("alpha", "gamma", "delta", "phase", "q2", "qhat2", "qW",
                 "qhatW", "f", "mi", "eps_opt", "converged", "iters")
GAMP_COLUMNS = ("alpha", "instance", "seed", "d", "eps_test", "eps_theory",
                "rel_gap", "q2_implied", "converged", "iters")

_MODEL_KEYS = {"activation", "he_coeffs", "gamma", "delta", "w_prior", "v_prior"}
_REQUIRED_MODEL = ("activation", "gamma", "delta", "w_prior", "v_prior")
_SWEEP_KEYS = {"alphas", "alpha_min", "alpha_max", "alpha_count", "spacing"}
_SOLVER_KEYS = {"tol", "max_iter", "damping", "damping_floor", "quad_nodes",
                "fd_step", "collapse_qW", "strict"}
_TABLE_KEYS = {"path", "v_prior", "gamma", "grid", "sizes", "seed",
               "eta_rels", "extrapolation", "signal_kind"}
_ALPHA_SP_KEYS = {"bracket", "tol"}
_GAMP_KEYS = {"d", "alphas", "instances", "seed", "test_samples",
              "matched_moments", "solver"}
_MCMC_KEYS = {"sampler", "d", "alpha", "chains", "seed", "teacher_seed",
              "data_seed", "sweeps", "init", "step_size", "leapfrog_steps",
              "adapt", "target_accept", "readouts_fixed", "measure_every",
              "ell_max", "resync_every"}
_OUTPUT_KEYS = {"out_dir"}

_COMMAND_SECTIONS = {
    "sweep-theory": {"model", "sweep", "solver", "table", "output"},
    "alpha-sp": {"model", "alpha_sp", "solver", "table", "output"},
    "gamp-run": {"model", "gamp", "output"},
    "mcmc-run": {"model", "mcmc", "output"},
    "build-spectral-table": {"table", "output"},
}
# which section --seed patches, per command
_SEED_HOME = {"gamp-run": "gamp", "mcmc-run": "mcmc",
              "build-spectral-table": "table"}


class ConfigError(ValueError):
    """Anything wrong with the config file or the flags."""


def _short_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: command, patched config tree, output plumbing.

    ``options`` is the TOML tree after all flag overrides, so two runs
    with the same hash really did solve the same problem.  The [output]
    block is excluded from the hash: where files land must not orphan
    checkpoints.
    """

    command: str
    options: dict
    out_dir: Path
    workers: int = 1
    dry_run: bool = False

    @property
    def config_hash(self) -> str:
        stripped = {k: v for k, v in self.options.items() if k != "output"}
        return _short_hash({"command": self.command, "options": stripped})

    @property
    def model_hash(self) -> str:
        return _short_hash(self.options.get("model", {}))

    def header_lines(self) -> list:
        cfg = json.dumps(self.options, sort_keys=True, separators=(",", ":"),
                         default=str)
        return [f"# command: {self.command}",
                f"# code_version: {__version__}",
                f"# config_hash: {self.config_hash}",
                f"# model_hash: {self.model_hash}",
                f"# config: {cfg}"]

    def report_header(self) -> dict:
        return {"command": self.command, "code_version": __version__,
                "config_hash": self.config_hash, "model_hash": self.model_hash,
                "config": self.options}


# ---------------------------------------------------------------------------
# config loading and validation helpers
# ---------------------------------------------------------------------------

def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}")


def _parse_override(expr: str):
    key, sep, raw = expr.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"--set wants key=value, got {expr!r}")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()  # unquoted strings are taken literally
    return key, value


def _apply_override(options: dict, key: str, value) -> None:
    parts = key.split(".")
    node = options
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part!r} is not a table")
    node[parts[-1]] = value


def make_run_config(command: str, args) -> RunConfig:
    path = getattr(args, "config_flag", None) or args.config
    if getattr(args, "config_flag", None) and args.config \
            and args.config_flag != args.config:
        raise ConfigError("config file given twice (positional and --config)")
    if not path:
        raise ConfigError("a config file is required (positional or --config)")
    options = _load_toml(path)
    _check_keys(options, _COMMAND_SECTIONS[command], "top level")
    for expr in args.set or []:
        _apply_override(options, *_parse_override(expr))
    if args.seed is not None:
        home = _SEED_HOME.get(command)
        if home is None:
            print(f"note: {command} is deterministic, --seed ignored",
                  file=sys.stderr)
        else:
            options.setdefault(home, {})["seed"] = int(args.seed)
    out_dir = Path(args.out_dir or options.get("output", {}).get("out_dir", "."))
    output = options.get("output", {})
    if isinstance(output, dict):
        _check_keys(output, _OUTPUT_KEYS, "output")
    return RunConfig(command=command, options=options, out_dir=out_dir,
                     workers=max(1, args.workers), dry_run=args.dry_run)


def _model_block(options: dict) -> dict:
    model = options.get("model")
    if not isinstance(model, dict):
        raise ConfigError("a [model] block is required")
    _check_keys(model, _MODEL_KEYS, "model")
    missing = [k for k in _REQUIRED_MODEL if k not in model]
    if missing:
        raise ConfigError(f"[model] is missing {', '.join(missing)}")
    return model


def _activation(model: dict):
    name = model["activation"]
    if not isinstance(name, str):
        raise ConfigError("model.activation must be a string")
    coeffs = model.get("he_coeffs")
    try:
        if coeffs is not None:
            coeffs = tuple(float(c) for c in coeffs)
        return builtin(name, he_coeffs=coeffs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.activation: {exc}")


def _theory_params(model: dict, alpha: float) -> TheoryParams:
    try:
        return TheoryParams(gamma=float(model["gamma"]), alpha=float(alpha),
                            delta=float(model["delta"]),
                            w_prior=str(model["w_prior"]),
                            v_prior=str(model["v_prior"]),
                            activation=_activation(model))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}")


def _model_params(model: dict, d: int, alpha: float) -> ModelParams:
    try:
        return ModelParams(d=int(d), gamma=float(model["gamma"]),
                           alpha=float(alpha), delta=float(model["delta"]),
                           w_prior=str(model["w_prior"]),
                           v_prior=str(model["v_prior"]),
                           activation=_activation(model))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}")


def _load_table(options: dict, model: dict) -> SpectralTable:
    table_sec = options.get("table", {})
    if not isinstance(table_sec, dict):
        raise ConfigError("[table] must be a table")
    path = table_sec.get("path")
    try:
        if path is not None:
            return SpectralTable.load(path)
        return packaged_table(str(model["v_prior"]), float(model["gamma"]))
    except (FileNotFoundError, TableFormatError) as exc:
        raise ConfigError(str(exc))


def _solver_config(options: dict) -> SolverConfig:
    sec = dict(options.get("solver", {}))
    _check_keys(sec, _SOLVER_KEYS, "solver")
    # the CLI flags non-convergence through the output rows and the exit
    # code instead of aborting mid-grid
    sec.setdefault("strict", False)
    try:
        return SolverConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver]: {exc}")


def _alpha_grid(options: dict) -> list:
    sec = options.get("sweep")
    if not isinstance(sec, dict):
        raise ConfigError("a [sweep] block is required")
    _check_keys(sec, _SWEEP_KEYS, "sweep")
    range_keys = [k for k in ("alpha_min", "alpha_max", "alpha_count")
                  if k in sec]
    if "alphas" in sec:
        if range_keys or "spacing" in sec:
            raise ConfigError("[sweep] mixes an explicit alphas list with "
                              "range keys")
        return [float(a) for a in sec["alphas"]]
    if len(range_keys) != 3:
        raise ConfigError("[sweep] needs either alphas = [...] or all of "
                          "alpha_min, alpha_max, alpha_count")
    lo, hi = float(sec["alpha_min"]), float(sec["alpha_max"])
    count = int(sec["alpha_count"])
    spacing = sec.get("spacing", "linear")
    if count < 1 or hi < lo:
        raise ConfigError("[sweep] range is empty or reversed")
    if spacing == "linear":
        return np.linspace(lo, hi, count).tolist()
    if spacing == "log":
        if lo <= 0.0:
            raise ConfigError("[sweep] log spacing needs alpha_min > 0")
        return np.geomspace(lo, hi, count).tolist()
    raise ConfigError(f"[sweep] spacing must be linear or log, got {spacing!r}")


# ---------------------------------------------------------------------------
# checkpointed CSV plumbing
# ---------------------------------------------------------------------------

def _scan_existing(path: Path, rc: RunConfig, n_key_cols: int,
                   converged_col=None):
    """Validate an existing output's hash; collect its finished row keys.

    Returns (done_keys, any_unconverged) or None when the file does not
    exist.  A file with a different embedded hash is refused outright:
    appending to it would break the header-tells-the-truth invariant.
    """
    if not path.exists():
        return None
    seen_hash = None
    done, bad = set(), False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# config_hash:"):
                    seen_hash = line.split(":", 1)[1].strip()
                continue
            fields = line.split(",")
            if not fields[0].lstrip("-").replace(".", "", 1)[:1].isdigit():
                continue  # the column-name row
            done.add(tuple(fields[:n_key_cols]))
            if converged_col is not None and \
                    fields[converged_col] in ("0", "False", "false"):
                bad = True
    if seen_hash != rc.config_hash:
        raise ConfigError(
            f"{path} was written by config {seen_hash}, this run is "
            f"{rc.config_hash}; move it aside or use a fresh --out-dir")
    return done, bad


def _open_csv(path: Path, rc: RunConfig, columns, fresh: bool):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w" if fresh else "a", newline="")
    writer = csv.writer(fh)
    if fresh:
        for line in rc.header_lines():
            fh.write(line + "\n")
        writer.writerow(columns)
        fh.flush()
    return fh, writer


def _write_row(fh, writer, values) -> None:
    writer.writerow([repr(v) if isinstance(v, float) else v for v in values])
    fh.flush()


def _map_ordered(workers: int, fn, payloads):
    if workers <= 1 or len(payloads) <= 1:
        yield from map(fn, payloads)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, payloads)


# per-process caches for the pool workers
_TABLE_MEMO: dict = {}


def _cached_table(options: dict, model: dict) -> SpectralTable:
    key = (options.get("table", {}).get("path"),
           str(model["v_prior"]), float(model["gamma"]))
    if key not in _TABLE_MEMO:
        _TABLE_MEMO[key] = _load_table(options, model)
    return _TABLE_MEMO[key]


# ---------------------------------------------------------------------------
# hermite
# ---------------------------------------------------------------------------

def cmd_hermite(args) -> int:
    coeffs = None
    if args.coeffs:
        try:
            coeffs = tuple(float(c) for c in args.coeffs.split(","))
        except ValueError:
            raise ConfigError(f"--coeffs wants comma-separated floats, "
                              f"got {args.coeffs!r}")
    try:
        spec = builtin(args.activation, he_coeffs=coeffs)
    except ValueError as exc:
        raise ConfigError(str(exc))
    if args.orders < 0:
        raise ConfigError("--orders must be nonnegative")
    if args.dry_run:
        print(f"config ok: hermite {args.activation}")
        return EXIT_OK
    cspec = spec.centered()
    top = min(args.orders, spec.L)
    mu = {f"mu_{l}": float(spec.mu[l]) for l in range(top + 1)}
    g1 = float(g_eval(1.0, cspec))
    print(f"activation {spec.name}")
    for name, value in mu.items():
        print(f"{name} {value!r}")
    print(f"nu {float(spec.nu)!r}")
    print(f"g1 {g1!r}")
    if args.out_dir:
        rc = RunConfig(command="hermite", out_dir=Path(args.out_dir),
                       options={"activation": args.activation,
                                "he_coeffs": list(coeffs) if coeffs else None,
                                "orders": args.orders})
        rc.out_dir.mkdir(parents=True, exist_ok=True)
        report = {**rc.report_header(), **mu, "nu": float(spec.nu), "g1": g1}
        out = rc.out_dir / f"hermite_{spec.name}.json"
        out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-theory
# ---------------------------------------------------------------------------

def _sweep_point(payload):
    options, alpha = payload
    model = options["model"]
    tp = _theory_params(model, alpha)
    table = _cached_table(options, model)
    sol = solve_equilibrium(tp, table, _solver_config(options))
    s = sol.state
    return (float(alpha), tp.gamma, tp.delta, sol.phase, s.q2, s.q_hat2,
            s.qW, s.q_hatW, sol.f, sol.mi, sol.eps_opt,
            int(sol.converged), sol.iterations)


def cmd_sweep_theory(args) -> int:
    rc = make_run_config("sweep-theory", args)
    model = _model_block(rc.options)
    grid = _alpha_grid(rc.options)
    _solver_config(rc.options)
    _load_table(rc.options, model)
    for alpha in grid:
        _theory_params(model, alpha)
    out = rc.out_dir / "sweep_theory.csv"
    if rc.dry_run:
        print(f"config ok: {len(grid)} grid points, hash={rc.config_hash}, "
              f"-> {out}")
        return EXIT_OK
    scan = _scan_existing(out, rc, n_key_cols=1, converged_col=11)
    done, bad_old = scan if scan else (set(), False)
    todo = [a for a in grid if (repr(float(a)),) not in done]
    fh, writer = _open_csv(out, rc, SWEEP_COLUMNS, fresh=scan is None)
    bad_new = 0
    with fh:
        payloads = [(rc.options, a) for a in todo]
        for row in _map_ordered(rc.workers, _sweep_point, payloads):
            _write_row(fh, writer, row)
            if not row[11]:
                bad_new += 1
    print(f"wrote {len(todo)} rows ({len(done)} already present) -> {out}")
    if bad_new or bad_old:
        print(f"{bad_new} fresh grid points did not converge; see the "
              f"converged column", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# alpha-sp
# ---------------------------------------------------------------------------

def cmd_alpha_sp(args) -> int:
    rc = make_run_config("alpha-sp", args)
    model = _model_block(rc.options)
    sec = rc.options.get("alpha_sp")
    if not isinstance(sec, dict):
        raise ConfigError("an [alpha_sp] block is required")
    _check_keys(sec, _ALPHA_SP_KEYS, "alpha_sp")
    bracket = sec.get("bracket")
    if (not isinstance(bracket, (list, tuple)) or len(bracket) != 2
            or not all(isinstance(b, (int, float)) for b in bracket)):
        raise ConfigError("alpha_sp.bracket must be [alpha_lo, alpha_hi]")
    lo, hi = float(bracket[0]), float(bracket[1])
    tol = float(sec.get("tol", 1e-3))
    table = _load_table(rc.options, model)
    solver_cfg = _solver_config(rc.options)
    tp = _theory_params(model, 0.5 * (lo + hi))
    out = rc.out_dir / "alpha_sp.json"
    if rc.dry_run:
        print(f"config ok: bracket=({lo}, {hi}), hash={rc.config_hash}, "
              f"-> {out}")
        return EXIT_OK
    try:
        alpha_sp = find_alpha_sp(tp, table, (lo, hi), tol=tol,
                                 solver_cfg=solver_cfg)
    except ValueError as exc:
        raise ConfigError(f"alpha_sp.bracket: {exc}")
    report = {**rc.report_header(), "alpha_sp": alpha_sp,
              "bracket": [lo, hi], "tol": tol}
    if alpha_sp is None:
        report["note"] = "no specialisation transition for this model"
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    shown = "none" if alpha_sp is None else f"{alpha_sp:.6g}"
    print(f"alpha_sp = {shown} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gamp-run
# ---------------------------------------------------------------------------

def _gamp_section(options: dict) -> dict:
    sec = options.get("gamp")
    if not isinstance(sec, dict):
        raise ConfigError("a [gamp] block is required")
    _check_keys(sec, _GAMP_KEYS, "gamp")
    for key in ("d", "alphas"):
        if key not in sec:
            raise ConfigError(f"[gamp] is missing {key}")
    return sec


def _gamp_config(sec: dict) -> GampConfig:
    sub = dict(sec.get("solver", {}))
    try:
        return GampConfig(**sub)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[gamp.solver]: {exc}")


def _gamp_point(payload):
    options, alpha, instance, eps_theory = payload
    model = options["model"]
    sec = options["gamp"]
    seed = int(sec.get("seed", 0))
    params = _model_params(model, int(sec["d"]), alpha)
    spec = params.activation
    teacher = sample_teacher(params, seed, index=instance)
    train = generate_dataset(teacher, params, seed, index=instance)
    test = generate_dataset(teacher, params, seed,
                            n=int(sec.get("test_samples", 4000)),
                            purpose="test", index=instance)
    kwargs = {}
    if sec.get("matched_moments", True):
        kwargs = {"gamma": params.gamma, "v_prior": params.v_prior}
    try:
        state = gamp_rie_fit(train, spec, params.delta, _gamp_config(sec),
                             **kwargs)
    except GampDivergence as exc:
        state = exc.state
        return (float(alpha), instance, seed, params.d, math.nan, eps_theory,
                math.nan, math.nan, 0, state.iterations)
    y_hat = predict(state, test.X, spec.centered())
    eps_test = float(np.mean((test.y - y_hat) ** 2))
    rel_gap = abs(eps_test - eps_theory) / eps_theory
    return (float(alpha), instance, seed, params.d, eps_test, eps_theory,
            rel_gap, state.q2_implied, int(state.converged), state.iterations)


def cmd_gamp_run(args) -> int:
    rc = make_run_config("gamp-run", args)
    model = _model_block(rc.options)
    sec = _gamp_section(rc.options)
    _gamp_config(sec)
    alphas = [float(a) for a in sec["alphas"]]
    instances = int(sec.get("instances", 8))
    if instances < 1:
        raise ConfigError("gamp.instances must be >= 1")
    table = _load_table(rc.options, model)
    solver_cfg = _solver_config({})
    out = rc.out_dir / "gamp_run.csv"
    if rc.dry_run:
        print(f"config ok: {len(alphas) * instances} runs, "
              f"hash={rc.config_hash}, -> {out}")
        return EXIT_OK
    eps_theory = {a: solve_universal(_theory_params(model, a), table,
                                     solver_cfg).eps_opt for a in alphas}
    scan = _scan_existing(out, rc, n_key_cols=2, converged_col=8)
    done, bad_old = scan if scan else (set(), False)
    payloads = [(rc.options, a, i, eps_theory[a])
                for a in alphas for i in range(instances)
                if (repr(float(a)), str(i)) not in done]
    fh, writer = _open_csv(out, rc, GAMP_COLUMNS, fresh=scan is None)
    bad_new = 0
    with fh:
        for row in _map_ordered(rc.workers, _gamp_point, payloads):
            _write_row(fh, writer, row)
            if not row[8]:
                bad_new += 1
    print(f"wrote {len(payloads)} rows ({len(done)} already present) -> {out}")
    if bad_new or bad_old:
        print(f"{bad_new} fresh instances diverged or stalled; rows are "
              f"flagged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# mcmc-run
# ---------------------------------------------------------------------------

_SAMPLERS = {"hmc": hmc_gaussian, "metropolis": metropolis_binary}


def _mcmc_section(options: dict) -> dict:
    sec = options.get("mcmc")
    if not isinstance(sec, dict):
        raise ConfigError("an [mcmc] block is required")
    _check_keys(sec, _MCMC_KEYS, "mcmc")
    for key in ("sampler", "d", "alpha"):
        if key not in sec:
            raise ConfigError(f"[mcmc] is missing {key}")
    if sec["sampler"] not in _SAMPLERS:
        raise ConfigError(f"mcmc.sampler must be one of "
                          f"{sorted(_SAMPLERS)}, got {sec['sampler']!r}")
    return sec


def _chain_config(sec: dict, chain: int) -> ChainConfig:
    base = int(sec.get("seed", 0))
    kwargs = {k: sec[k] for k in ("sweeps", "init", "step_size",
                                  "leapfrog_steps", "adapt", "target_accept",
                                  "readouts_fixed", "measure_every",
                                  "ell_max", "resync_every") if k in sec}
    try:
        return ChainConfig(seed=base + chain, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[mcmc]: {exc}")


def _trace_from_csv(path: Path) -> OverlapTrace:
    # genfromtxt would mistake the first header comment for the names row
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    raw = np.genfromtxt(io.StringIO("\n".join(lines)), delimiter=",",
                        names=True)
    raw = np.atleast_1d(raw)
    cols = []
    for ell in range(1, 6):
        col = np.asarray(raw[f"q{ell}"], dtype=float)
        if np.all(np.isfinite(col)):
            cols.append(col)
        else:
            break
    return OverlapTrace(steps=np.asarray(raw["step"], dtype=int),
                        q_w=np.asarray(raw["qW"], dtype=float),
                        q_ell=np.column_stack(cols),
                        energy=np.asarray(raw["energy"], dtype=float),
                        acc_rate=np.asarray(raw["acc_rate"], dtype=float))


def _write_trace_csv(path: Path, rc: RunConfig, trace: OverlapTrace) -> None:
    tmp = path.with_suffix(".tmp")
    trace.save_csv(tmp)
    body = tmp.read_text()
    tmp.unlink()
    path.write_text("\n".join(rc.header_lines()) + "\n" + body)


def cmd_mcmc_run(args) -> int:
    rc = make_run_config("mcmc-run", args)
    model = _model_block(rc.options)
    sec = _mcmc_section(rc.options)
    sampler = _SAMPLERS[sec["sampler"]]
    chains = int(sec.get("chains", 2))
    if chains < 1:
        raise ConfigError("mcmc.chains must be >= 1")
    cfgs = [_chain_config(sec, j) for j in range(chains)]
    params = _model_params(model, int(sec["d"]), float(sec["alpha"]))
    teacher_seed = int(sec.get("teacher_seed", sec.get("seed", 0)))
    data_seed = int(sec.get("data_seed", teacher_seed))
    summary_path = rc.out_dir / "mcmc_summary.json"
    if rc.dry_run:
        print(f"config ok: {chains} {sec['sampler']} chains x "
              f"{cfgs[0].sweeps} sweeps, hash={rc.config_hash}, "
              f"-> {summary_path}")
        return EXIT_OK
    if summary_path.exists():
        stored = json.loads(summary_path.read_text())
        if stored.get("config_hash") != rc.config_hash:
            raise ConfigError(
                f"{summary_path} was written by config "
                f"{stored.get('config_hash')}, this run is {rc.config_hash}; "
                f"move it aside or use a fresh --out-dir")
        print(f"run already complete -> {summary_path}")
        return int(stored.get("exit", EXIT_OK))

    teacher = sample_teacher(params, teacher_seed)
    data = generate_dataset(teacher, params, data_seed)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    any_failed = False
    for j, cfg in enumerate(cfgs):
        trace_path = rc.out_dir / f"mcmc_trace_c{j}.csv"
        snap_path = rc.out_dir / f"mcmc_chain_c{j}.npz"
        reused = False
        if trace_path.exists() and snap_path.exists():
            # a finished chain from an interrupted run of the same config
            _scan_existing(trace_path, rc, n_key_cols=1)
            snap = load_snapshot(snap_path)
            if int(snap["steps_done"]) >= cfg.sweeps:
                trace = _trace_from_csv(trace_path)
                q2_late = float(centered_q2(snap["W"], snap["v"],
                                            teacher.W0, teacher.v0))
                flags = ("reused finished chain from a previous run; "
                         "centred q2 is the final sample only",)
                accept = float(trace.acc_rate[-1]) if len(trace) else math.nan
                reused = True
        if not reused:
            try:
                result = sampler(data, teacher, params, cfg)
            except ValueError as exc:
                raise ConfigError(f"chain {j}: {exc}")
            trace = result.trace
            _write_trace_csv(trace_path, rc, trace)
            save_snapshot(snap_path, result)
            series = centered_q2_series(result, teacher)
            q2_late = float(np.mean(series[len(series) // 2:]))
            flags = result.flags
            accept = result.accept_rate
        gate = equilibration_gate(trace)
        half = len(trace) // 2
        entry = {
            "chain": j, "seed": cfg.seed, "init": cfg.init,
            "steps_done": int(trace.steps[-1]) if len(trace) else 0,
            "accept_rate": accept,
            "equilibrated": bool(gate.equilibrated),
            "gate_gap": gate.gap, "gate_stderr": gate.stderr,
            "gate_flags": list(gate.flags),
            "sampler_flags": list(flags),
            "q2_centered_late": q2_late,
            "qW_late": float(np.mean(trace.q_w[half:])) if len(trace) else math.nan,
            "q2_raw_late": float(np.mean(trace.q_ell[half:, 1]))
                           if trace.q_ell.shape[1] >= 2 else math.nan,
            "reused": reused,
            "trace_csv": trace_path.name, "snapshot": snap_path.name,
        }
        entries.append(entry)
        if not gate.equilibrated:
            any_failed = True
        print(f"chain {j}: accept={entry['accept_rate']:.3f} "
              f"equilibrated={gate.equilibrated} "
              f"q2_centered_late={q2_late:.4f}")
    exit_code = EXIT_NUMERIC if any_failed else EXIT_OK
    report = {**rc.report_header(), "sampler": sec["sampler"],
              "teacher_seed": teacher_seed, "data_seed": data_seed,
              "chains": entries, "exit": exit_code}
    summary_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {summary_path}")
    if any_failed:
        print("at least one chain failed the equilibration gate; summary "
              "is flagged", file=sys.stderr)
    return exit_code


# ---------------------------------------------------------------------------
# build-spectral-table
# ---------------------------------------------------------------------------

def cmd_build_table(args) -> int:
    rc = make_run_config("build-spectral-table", args)
    sec = rc.options.get("table")
    if not isinstance(sec, dict):
        raise ConfigError("a [table] block is required")
    _check_keys(sec, _TABLE_KEYS - {"path"}, "table")
    for key in ("v_prior", "gamma"):
        if key not in sec:
            raise ConfigError(f"[table] is missing {key}")
    v_prior, gamma = str(sec["v_prior"]), float(sec["gamma"])
    grid = np.asarray(sec["grid"], dtype=float) if "grid" in sec else None
    cfg_kwargs = {}
    if "sizes" in sec:
        try:
            cfg_kwargs["sizes"] = tuple((int(d), int(s)) for d, s in sec["sizes"])
        except (TypeError, ValueError):
            raise ConfigError("table.sizes must be a list of [size, seeds] "
                              "pairs")
    for key in ("seed", "extrapolation", "signal_kind"):
        if key in sec:
            cfg_kwargs[key] = sec[key]
    if "eta_rels" in sec:
        cfg_kwargs["eta_rels"] = tuple(float(e) for e in sec["eta_rels"])
    try:
        spectral_cfg = SpectralConfig(**cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[table]: {exc}")
    npz_path = rc.out_dir / f"spectral_{v_prior}_gamma{gamma:g}.npz"
    report_path = rc.out_dir / "build_spectral_table.json"
    if rc.dry_run:
        print(f"config ok: hash={rc.config_hash}, -> {npz_path}")
        return EXIT_OK
    if report_path.exists():
        stored = json.loads(report_path.read_text())
        if stored.get("config_hash") == rc.config_hash and npz_path.exists():
            print(f"table already built -> {npz_path}")
            return EXIT_OK
        if stored.get("config_hash") != rc.config_hash:
            raise ConfigError(
                f"{report_path} was written by config "
                f"{stored.get('config_hash')}, this run is {rc.config_hash}; "
                f"move it aside or use a fresh --out-dir")
    try:
        table = build_spectral_table(gamma, v_prior, grid=grid,
                                     config=spectral_cfg)
    except ValueError as exc:
        raise ConfigError(f"[table]: {exc}")
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    saved = table.save(npz_path)
    report = {**rc.report_header(), "table_npz": str(saved),
              "table_json": str(Path(saved).with_suffix(".json")),
              "grid_points": int(table.grid.size)}
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {saved}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shallowbayes",
        description="theory sweeps, AMP and sampler drivers for shallow "
                    "teacher-student networks in the quadratic data regime")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    hermite = sub.add_parser("hermite", help="print an activation's "
                             "Hermite data")
    hermite.add_argument("activation", help="relu, elu, he2, he3, he2he3, "
                         "identity, or custom-poly")
    hermite.add_argument("--coeffs", default=None,
                         help="comma-separated He_l coefficients for "
                              "custom-poly")
    hermite.add_argument("--orders", type=int, default=4,
                         help="highest mu_l to print (default 4)")
    hermite.add_argument("--out-dir", default=None,
                         help="also write hermite_<name>.json here")
    hermite.add_argument("--dry-run", action="store_true")
    hermite.set_defaults(func=cmd_hermite)

    specs = (("sweep-theory", cmd_sweep_theory,
              "solve both branches over an alpha grid"),
             ("alpha-sp", cmd_alpha_sp,
              "bisect for the specialisation transition"),
             ("gamp-run", cmd_gamp_run,
              "run matrix-sensing AMP instances against theory"),
             ("mcmc-run", cmd_mcmc_run,
              "run posterior sampling chains"),
             ("build-spectral-table", cmd_build_table,
              "precompute the feature-signal spectral table"))
    for name, func, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", nargs="?", default=None,
                        help="TOML config file")
        sp.add_argument("--config", dest="config_flag", default=None,
                        help="TOML config file (same as the positional)")
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry, e.g. model.delta=0.2")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the command's seed")
        sp.add_argument("--workers", type=int, default=1,
                        help="worker processes for grid points")
        sp.add_argument("--out-dir", default=None,
                        help="output directory (default: [output].out_dir "
                             "or .)")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate the config and exit")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
