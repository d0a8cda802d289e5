"""Config loading, command dispatch and CSV emission.

Configs are single JSON documents; matrices are row-major nested arrays.
Commands write CSV data files plus a small JSON manifest next to them.
Numeric CSV cells use 17 significant digits so replays with the same seed
are byte identical.

Exit codes: 0 success, 2 validation error, 3 infeasible plan, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, kalman, planner, sim
from .lp import SimplexCycleError
from .model import (
    GaussianBelief,
    LinearSystem,
    ScenarioConfig,
    SeparationSpec,
    SpoofPlan,
    validate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Unreadable or invalid configuration file."""

    def __init__(self, message: str, violations: tuple[str, ...] = ()):
        super().__init__(message)
        self.violations = violations


def _axes(n: int) -> list[str]:
    letters = "xyzw"
    if n <= len(letters):
        return list(letters[:n])
    return [f"c{i + 1}" for i in range(n)]


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return "%.17g" % float(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Config serialization
# ---------------------------------------------------------------------------


def config_from_dict(doc: dict) -> ScenarioConfig:
    try:
        n = int(doc["n"])
        F = doc["F"]
        B = doc["B"]
        R = doc["R"]
        Q = doc["Q"]
        u = doc["u"]
        m0 = doc["m0"]
        sigma0 = doc["Sigma0"]
        T = int(doc["T"])
    except KeyError as exc:
        raise ConfigError(f"missing required config field {exc.args[0]!r}") from exc

    if "H" in doc:
        H = doc["H"]
    else:
        H = np.eye(n)
        logger.info("config omits 'H'; defaulting to the identity measurement matrix")
    system = LinearSystem(F=F, B=B, H=H, R=R, Q=Q)

    m0_tilde = doc.get("m0_tilde", m0)
    sigma0_tilde = doc.get("Sigma0_tilde", sigma0)
    init_observer = GaussianBelief(m0, sigma0)
    init_attacker = GaussianBelief(m0_tilde, sigma0_tilde)

    dist = None
    if doc.get("m0_distribution") is not None:
        d = doc["m0_distribution"]
        dist = GaussianBelief(d["mean"], d["cov"])

    if "M0" in doc:
        M0 = np.asarray(doc["M0"], dtype=float)
    else:
        expected_m0 = dist.mean if dist is not None else init_observer.mean
        M0 = expected_m0 - init_attacker.mean

    constraints = {int(c["t"]): float(c["d"]) for c in doc.get("constraints", [])}
    gamma = doc.get("gamma", 1.0)
    if isinstance(gamma, list):
        gamma = {i + 1: float(g) for i, g in enumerate(gamma)}
    elif isinstance(gamma, dict):
        gamma = {int(t): float(g) for t, g in gamma.items()}
    spec = SeparationSpec(constraints=constraints, T=T, p=int(doc.get("p", 1)), gamma=gamma)

    return ScenarioConfig(
        system=system,
        controls=np.asarray(u, dtype=float),
        init_observer=init_observer,
        init_attacker=init_attacker,
        M0=M0,
        spec=spec,
        mode=doc.get("mode", "known-init"),
        horizon_online=int(doc.get("H_online", 0)),
        trials=int(doc.get("trials", 1)),
        seed=int(doc.get("seed", 0)),
        m0_distribution=dist,
        sigma0_guess=None if doc.get("sigma0_guess") is None else np.asarray(doc["sigma0_guess"], dtype=float),
    )


def config_to_dict(config: ScenarioConfig) -> dict:
    doc = {
        "n": config.system.n,
        "F": config.system.F.tolist(),
        "B": config.system.B.tolist(),
        "H": config.system.H.tolist(),
        "R": config.system.R.tolist(),
        "Q": config.system.Q.tolist(),
        "u": config.controls.tolist(),
        "m0": config.init_observer.mean.tolist(),
        "Sigma0": config.init_observer.cov.tolist(),
        "m0_tilde": config.init_attacker.mean.tolist(),
        "Sigma0_tilde": config.init_attacker.cov.tolist(),
        "M0": config.M0.tolist(),
        "p": config.spec.p,
        "T": config.spec.T,
        "constraints": [{"t": t, "d": d} for t, d in config.spec.constraints.items()],
        "gamma": config.spec.gamma if not isinstance(config.spec.gamma, dict) else {str(t): g for t, g in config.spec.gamma.items()},
        "mode": config.mode,
        "H_online": config.horizon_online,
        "trials": config.trials,
        "seed": config.seed,
    }
    if config.m0_distribution is not None:
        doc["m0_distribution"] = {
            "mean": config.m0_distribution.mean.tolist(),
            "cov": config.m0_distribution.cov.tolist(),
        }
    if config.sigma0_guess is not None:
        doc["sigma0_guess"] = config.sigma0_guess.tolist()
    return doc


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario config; raises ConfigError on any issue."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    config = config_from_dict(doc)
    report = validate(config)
    if not report.ok:
        raise ConfigError(
        "invalid config:\n" + "\n".join(f"  - {v}" for v in report.violations),
            report.violations,
        )
    return config


def write_config(config: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config_to_dict(config), indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_path: str
    seed: int
    outputs: tuple[str, ...]
    wall_clock_s: float
    version: str = __version__


def _write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(dataclasses.asdict(manifest), indent=2) + "\n")
    return path


def write_plan_csv(path: Path, plan: SpoofPlan | np.ndarray) -> None:
    eps = plan.epsilons if isinstance(plan, SpoofPlan) else np.asarray(plan)
    header = ["t"] + [f"eps_{a}" for a in _axes(eps.shape[1])]
    rows = [[t + 1, *eps[t]] for t in range(eps.shape[0])]
    write_csv(path, header, rows)


def read_plan_csv(path) -> np.ndarray:
    lines = Path(path).read_text().strip().splitlines()
    return np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])


def cmd_plan(config: ScenarioConfig, out_dir, config_path: str = "") -> dict:
    """Plan offline and write plan.csv plus the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    plan = planner.plan_offline(config)
    plan_path = out_dir / "plan.csv"
    write_plan_csv(plan_path, plan)
    manifest = RunManifest(
        command="plan",
        config_path=str(config_path),
        seed=config.seed,
        outputs=(str(plan_path),),
        wall_clock_s=time.perf_counter() - start,
    )
    _write_manifest(out_dir, manifest)
    print(f"plan: status={plan.status} objective={plan.objective:.12g} branches={plan.branches_solved}")
    return {"plan": plan_path, "plan_obj": plan}


def cmd_simulate(
    config: ScenarioConfig,
    plan_path=None,
    trials: int | None = None,
    seed: int | None = None,
    out_dir=".",
    config_path: str = "",
) -> dict:
    """Replay a plan; per-step CSV for the first trial, summary when trials > 1."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = config.trials if trials is None else trials
    seed = config.seed if seed is None else seed
    start = time.perf_counter()
    if plan_path is not None:
        eps = read_plan_csv(plan_path)
        if eps.shape != (config.spec.T, config.system.n):
            raise ConfigError(
                f"plan shape {eps.shape} does not match horizon {config.spec.T} and dimension {config.system.n}"
            )
        plan: SpoofPlan | np.ndarray = eps
    else:
        plan = planner.plan_offline(config) if config.mode != "online" else None

    first = sim.run_trial(config, plan, sim.generator(seed, (0,)))
    axes = _axes(config.system.n)
    header = (
        ["t"]
        + [f"m_{a}" for a in axes]
        + [f"mtilde_{a}" for a in axes]
        + ["sep_l1", "sep_l2", "d_t"]
        + [f"eps_{a}" for a in axes]
        + [f"z_{a}" for a in axes]
    )
    rows = []
    for t in range(1, first.T + 1):
        d_t = config.spec.constraints.get(t, "")
        rows.append(
            [
                t,
                *first.means_clean[t - 1],
                *first.means_spoofed[t - 1],
                first.sep_l1[t - 1],
                first.sep_l2[t - 1],
                d_t,
                *first.epsilons[t - 1],
                *first.measurements[t - 1],
            ]
        )
    steps_path = out_dir / "steps.csv"
    write_csv(steps_path, header, rows)
    outputs = [str(steps_path)]

    if trials > 1:
        summary = sim.monte_carlo(config, plan, trials=trials, seed=seed)
        summary_path = out_dir / "summary.csv"
        write_csv(
            summary_path,
            ["step", "mean", "std", "min", "max"],
            [
                [t, s["mean"], s["std"], s["min"], s["max"]]
                for t, s in sorted(summary.stats.items())
            ],
        )
        outputs.append(str(summary_path))

    manifest = RunManifest(
        command="simulate",
        config_path=str(config_path),
        seed=seed,
        outputs=tuple(outputs),
        wall_clock_s=time.perf_counter() - start,
    )
    _write_manifest(out_dir, manifest)
    print(f"simulate: wrote {', '.join(outputs)}")
    return {"steps": steps_path, "outputs": outputs}


def cmd_online(config: ScenarioConfig, seed: int | None = None, out_dir=".", config_path: str = "") -> dict:
    """Run the online-vs-offline comparison and write its CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed if seed is None else seed
    start = time.perf_counter()
    comparison = sim.compare_online_offline(config, seed)

    div_path = out_dir / "divergence.csv"
    write_csv(
        div_path,
        ["t", "divergence_offline", "divergence_online"],
        [[t, off, on] for t, (off, on) in sorted(comparison.divergence.items())],
    )
    energy_path = out_dir / "energy.csv"
    cum_off = np.cumsum(np.abs(comparison.offline.epsilons).sum(axis=1))
    cum_on = np.cumsum(np.abs(comparison.online.epsilons).sum(axis=1))
    write_csv(
        energy_path,
        ["t", "cum_energy_offline", "cum_energy_online"],
        [[t + 1, cum_off[t], cum_on[t]] for t in range(len(cum_off))],
    )
    manifest = RunManifest(
        command="online",
        config_path=str(config_path),
        seed=seed,
        outputs=(str(div_path), str(energy_path)),
        wall_clock_s=time.perf_counter() - start,
    )
    _write_manifest(out_dir, manifest)
    print(
        f"online: energy offline={comparison.energy[0]:.6g} online={comparison.energy[1]:.6g}"
    )
    return {"divergence": div_path, "energy": energy_path, "comparison": comparison}


def cmd_sweep(
    config: ScenarioConfig,
    out_dir=".",
    seeds: int | None = None,
    d_values: list[float] | None = None,
    at_step: int | None = None,
    seed: int | None = None,
    config_path: str = "",
) -> dict:
    """Parameter sweeps: over seeds (online vs offline) or over a d value."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seed if seed is None else seed
    start = time.perf_counter()
    outputs = []
    if seeds is not None:
        rows = []
        for s in range(seeds):
            comp = sim.compare_online_offline(config, seed + s)
            abs_div = np.array(list(comp.divergence.values()))
            rows.append(
                [
                    seed + s,
                    comp.energy[0],
                    comp.energy[1],
                    float(np.abs(abs_div[:, 0]).mean()),
                    float(np.abs(abs_div[:, 1]).mean()),
                ]
            )
        path = out_dir / "seed_sweep.csv"
        write_csv(
            path,
            ["seed", "energy_offline", "energy_online", "mean_absdiv_offline", "mean_absdiv_online"],
            rows,
        )
        outputs.append(str(path))
    if d_values:
        step = at_step if at_step is not None else config.spec.steps[0]
        rows = []
        for d in d_values:
            constraints = dict(config.spec.constraints)
            constraints[step] = float(d)
            spec = SeparationSpec(constraints, T=config.spec.T, p=config.spec.p, gamma=config.spec.gamma)
            cfg = dataclasses.replace(config, spec=spec)
            summary = sim.monte_carlo(cfg, None, trials=config.trials, seed=seed)
            s = summary.stats[step]
            rows.append([d, s["mean"], s["std"], s["min"], s["max"]])
        path = out_dir / "d_sweep.csv"
        write_csv(path, ["d", "mean", "std", "min", "max"], rows)
        outputs.append(str(path))
    manifest = RunManifest(
        command="sweep",
        config_path=str(config_path),
        seed=seed,
        outputs=tuple(outputs),
        wall_clock_s=time.perf_counter() - start,
    )
    _write_manifest(out_dir, manifest)
    print(f"sweep: wrote {', '.join(outputs) if outputs else 'nothing (no sweep arguments)'}")
    return {"outputs": outputs}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfspoof", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a scenario JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")

    p_plan = sub.add_parser("plan", help="compute an offline spoofing plan")
    common(p_plan)

    p_sim = sub.add_parser("simulate", help="replay a plan through the dual filters")
    common(p_sim)
    p_sim.add_argument("--plan", default=None, help="plan CSV (defaults to planning in-process)")
    p_sim.add_argument("--trials", type=int, default=None, help="override the config trial count")

    p_online = sub.add_parser("online", help="compare online and offline spoofing")
    common(p_online)

    p_sweep = sub.add_parser("sweep", help="sweep over seeds or separation values")
    common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=None, help="number of seeded comparison runs")
    p_sweep.add_argument("--d", default=None, help="comma-separated separation values to sweep")
    p_sweep.add_argument("--at-step", type=int, default=None, help="constrained step the d sweep varies")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        if args.command == "plan":
            cmd_plan(config, args.out, config_path=args.config)
        elif args.command == "simulate":
            cmd_simulate(
                config,
                plan_path=args.plan,
                trials=args.trials,
                seed=args.seed,
                out_dir=args.out,
                config_path=args.config,
            )
        elif args.command == "online":
            cmd_online(config, seed=args.seed, out_dir=args.out, config_path=args.config)
        elif args.command == "sweep":
            d_values = [float(v) for v in args.d.split(",")] if args.d else None
            cmd_sweep(
                config,
                out_dir=args.out,
                seeds=args.seeds,
                d_values=d_values,
                at_step=args.at_step,
                seed=args.seed,
                config_path=args.config,
            )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except planner.InfeasiblePlanError as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SimplexCycleError, kalman.SingularInnovationError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
