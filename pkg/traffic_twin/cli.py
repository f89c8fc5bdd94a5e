import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from traffic_twin.config import RunConfig, load_config
from traffic_twin.errors import ConfigInvalid, DivergenceError, TrafficTwinException
from traffic_twin.network import LinkParams, Network, ParameterRanges, load_network, normalize_beta
from traffic_twin.network import sample_parameters, save_network
from traffic_twin.optimization import (
    ControlTarget,
    busiest_link,
    calibrate,
    control,
    gradcheck,
    metrics,
    noise_stream,
    run_grafting_demo,
)
from traffic_twin.simulation import (
    CountSeries,
    ObservationMask,
    nowcast,
    record_counts,
    simulate,
    synthesize_observations,
)
from traffic_twin.storage import RunDirectory

COMMANDS = ("synthesize", "calibrate", "nowcast", "control", "tg-demo", "gradcheck")
# commands that run without a config file
STANDALONE = ("tg-demo", "gradcheck")
GRADCHECK_TOLERANCE = 1e-4

parse = argparse.ArgumentParser(
    prog="traffic-twin",
    description="Differentiable traffic simulation: synthesize, calibrate, nowcast and control",
)

parse.add_argument("command", help="Pipeline step to run", choices=COMMANDS)
parse.add_argument("-c", "--config", help="Path to the run config (TOML)", default=None)
parse.add_argument("-s", "--seed", help="Override scenario.seed", type=int, default=None)
parse.add_argument("-o", "--out", help="Run directory for inputs and outputs", default="run")
parse.add_argument(
    "-p",
    "--params",
    help="Link parameter file (JSON). calibrate resumes from it; "
    "nowcast and control use it instead of the calibrated parameters",
    default=None,
)
parse.add_argument("--draws", help="Parameter draws of gradcheck", type=int, default=20)
parse.add_argument(
    "--no-color",
    help="forces tool to not use color",
    default=False,
    action="store_true",
)
parse.add_argument(
    "-v",
    "--verbose",
    help="Log debug messages",
    default=False,
    action="store_true",
)

USE_COLORS = True

logger = logging.getLogger(__name__)


def colors_enabled(no_color: bool = False) -> bool:
    """Colour only a terminal, and never when NO_COLOR is set"""
    if no_color or os.environ.get("NO_COLOR"):
        return False

    return sys.stdout.isatty()


def color(s: object, code: int) -> str:
    s = str(s)
    if not USE_COLORS:
        return s

    # re-open this colour after any reset nested inside
    return f"\033[{code}m" + s.replace("\033[0m", f"\033[0m\033[{code}m") + "\033[0m"


def red(s: str) -> str:
    return color(s, 31)


def green(s: str) -> str:
    return color(s, 32)


def yellow(s: str) -> str:
    return color(s, 33)


def cyan(s: str) -> str:
    return color(s, 36)


def print_error(s: str) -> None:
    print(red(s))


@dataclass
class CommandResult:
    outputs: list[str]
    timings: dict[str, Any] = field(default_factory=dict)
    code: int = 0


def _read_params(path: Path | str, network: Network) -> LinkParams:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid("Parameter file doesn't exist", path)

    params = LinkParams.from_dict(RunDirectory(path.parent).read_json(path.name))
    if len(params) != network.size:
        raise ConfigInvalid(f"Parameter file covers {len(params)} links, network has {network.size}", path)

    return params


def _load_inputs(out: RunDirectory) -> tuple[Network, CountSeries, ObservationMask]:
    network, _ = load_network(out.require("network.json"))
    obs = CountSeries.read_csv(out.require("observations.csv"))
    mask = ObservationMask.load(out.require("mask.json"))
    return network, obs, mask


def _working_params(args: argparse.Namespace, out: RunDirectory, network: Network) -> LinkParams:
    return _read_params(args.params or out.require("calibrated_params.json"), network)


def cmd_synthesize(config: RunConfig, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    rng = config.rng
    network = config.build_network()
    ranges = ParameterRanges()

    if config.scenario.mean_parameters:
        truth = LinkParams.midpoint(network, ranges)
    else:
        truth = sample_parameters(network, ranges, rng.child("synthesis").generator("params"))

    print(f"Simulating ground truth on {cyan(network)}")
    scenario = config.scenario_for(network, config.scenario.horizon_minutes)
    run = simulate(scenario, truth, rng.child("synthesis").child("gumbel"), checkpointing=False)

    truth_counts = record_counts(run)
    obs, mask = synthesize_observations(
        truth_counts.head(config.observation.points),
        network.physical_links.tolist(),
        config.observation.noise,
        config.observation.coverage,
        rng.child("observation"),
    )

    save_network(network, out.path("network.json"))
    out.write_json("truth_params.json", truth.to_dict())
    truth_counts.to_csv(out.path("truth_counts.csv"))
    obs.select(mask.observed).to_csv(out.path("observations.csv"))
    mask.save(out.path("mask.json"))
    out.write_text("config.toml", config.path.read_text(encoding="utf8"))

    print(
        f"Observed {green(len(mask))} of {len(network.physical_links)} physical links "
        f"at {green(obs.points)} times"
    )
    return CommandResult(
        ["network.json", "truth_params.json", "truth_counts.csv", "observations.csv", "mask.json", "config.toml"]
    )


def _parameter_errors(estimate: LinkParams, truth: LinkParams, network: Network) -> dict[str, float]:
    physical = network.physical_links
    errors = {
        kind: float(np.mean(np.abs(estimate.get(kind)[physical] - truth.get(kind)[physical])))
        for kind in ("u", "kappa", "alpha")
    }
    beta = normalize_beta(estimate.beta, network) - normalize_beta(truth.beta, network)
    errors["beta_normalized"] = float(np.mean(np.abs(beta[physical])))
    return errors


def cmd_calibrate(config: RunConfig, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    network, obs, mask = _load_inputs(out)
    initial = _read_params(args.params, network) if args.params else None
    scenario = config.scenario_for(network, config.observation.window_minutes)

    print(f"Calibrating against {green(len(mask))} observed links")
    result = calibrate(scenario, obs, mask, config.optimizer, config.rng, initial=initial)
    outcome = result.outcome

    report: dict[str, Any] = {
        "stop_reason": outcome.stop_reason,
        "iterations": outcome.iterations,
        "best_iteration": outcome.best_iteration,
        "best_loss": outcome.best_loss,
        "resumed": initial is not None,
        "params": result.params.to_dict(),
    }

    if out.exists("truth_counts.csv"):
        truth = CountSeries.read_csv(out.path("truth_counts.csv")).head(obs.points)
        physical = network.physical_links.tolist()
        evaluation = noise_stream(config.rng, 0, False)

        for label, params in (("baseline", LinkParams.midpoint(network)), ("calibrated", result.params)):
            run = simulate(scenario, params, evaluation, checkpointing=False)
            report[label] = metrics(record_counts(run), truth, physical).to_dict()

    if out.exists("truth_params.json"):
        truth_params = LinkParams.from_dict(out.read_json("truth_params.json"))
        report["parameter_errors"] = {
            "baseline": _parameter_errors(LinkParams.midpoint(network), truth_params, network),
            "calibrated": _parameter_errors(result.params, truth_params, network),
        }

    curve = pd.DataFrame(
        {
            "iteration": [record.iteration for record in outcome.history],
            "loss": [record.loss for record in outcome.history],
            "best_loss": [record.best_loss for record in outcome.history],
        }
    )

    out.write_json("calibrated_params.json", result.params.to_dict())
    out.write_json("calibration_report.json", report)
    out.write_csv("loss_curve.csv", curve)

    print(
        f"Best loss {green(f'{outcome.best_loss:.6g}')} at iteration {yellow(outcome.best_iteration)} "
        f"({outcome.stop_reason})"
    )
    if "calibrated" in report:
        print(f"MAE {cyan(report['baseline']['mae'])} (mean parameters) -> {green(report['calibrated']['mae'])}")

    return CommandResult(["calibrated_params.json", "calibration_report.json", "loss_curve.csv"])


def cmd_nowcast(config: RunConfig, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    network, _ = load_network(out.require("network.json"))
    params = _working_params(args, out, network)
    scenario = config.scenario_for(network, config.observation.window_minutes)
    horizons = config.nowcast.horizons_minutes

    forecasts = nowcast(scenario, params, noise_stream(config.rng, 0, False), [h * 60.0 for h in horizons])

    truth = None
    if out.exists("truth_counts.csv"):
        truth = CountSeries.read_csv(out.path("truth_counts.csv"))

    frames, entries, timings = [], [], []
    physical = network.physical_links.tolist()

    for minutes, forecast in zip(horizons, forecasts):
        frame = forecast.series.to_frame()
        frame.insert(0, "horizon_minutes", minutes)
        frames.append(frame)

        entry: dict[str, Any] = {"horizon_minutes": minutes, "steps": forecast.steps, "metrics": None}
        ahead = forecast.ahead
        if truth is not None and ahead.points and truth.points >= forecast.series.points:
            expected = truth.head(forecast.series.points).tail(ahead.points)
            entry["metrics"] = metrics(ahead, expected, physical).to_dict()

        entries.append(entry)
        timings.append({"horizon_minutes": minutes, "steps": forecast.steps, "seconds": forecast.seconds})
        print(f"Horizon {cyan(minutes)} min: {forecast.steps} steps in {yellow(f'{forecast.seconds:.3f}')} s")

    out.write_csv("forecast.csv", pd.concat(frames, ignore_index=True))
    out.write_json("nowcast_report.json", {"horizons": entries})

    return CommandResult(["forecast.csv", "nowcast_report.json"], {"horizons": timings})


def cmd_control(config: RunConfig, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    network, _ = load_network(out.require("network.json"))
    params = _working_params(args, out, network)
    window = config.observation.window_minutes
    scenario = config.scenario_for(network, window + max(config.nowcast.horizons_minutes))
    rng = config.rng.child("control")

    link = config.control.target_link
    if link is not None and link >= network.size:
        raise ConfigInvalid(f"control.target_link {link} is not a link of the network", config.path)

    uncontrolled = simulate(scenario, params, noise_stream(rng, 0, config.optimizer.resample_noise), checkpointing=False)

    if link is None:
        candidates = ObservationMask.load(out.path("mask.json")).observed if out.exists("mask.json") else None
        window_steps = int(round(window * 60.0 / scenario.config.dt))
        link = busiest_link(network, uncontrolled.increments[window_steps:].sum(axis=0), candidates)
        print(f"Targeting the busiest observed link {cyan(link)}")

    target = ControlTarget.reduction(link, float(uncontrolled.cumulative.numpy()[link]), config.control.reduction)
    result = control(scenario, params, target, config.optimizer, rng, floor=config.control.cost_floor)

    report = result.to_dict() | {
        "stop_reason": result.outcome.stop_reason,
        "iterations": result.outcome.iterations,
        "best_loss": result.outcome.best_loss,
    }
    out.write_json("control_report.json", report)
    out.write_json("control_params.json", params.replace(cost=result.costs).to_dict())

    gap = "n/a" if result.gap_percent is None else f"{result.gap_percent:.1f}%"
    print(
        f"Link {cyan(link)}: {result.uncontrolled:.1f} -> {green(f'{result.achieved:.1f}')} "
        f"(desired {target.desired:.1f}, gap {yellow(gap)})"
    )
    if result.stalled:
        print(yellow("Target link did not respond to any cost change"))

    return CommandResult(["control_report.json", "control_params.json"])


def cmd_tg_demo(config: RunConfig | None, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    runs = [run_grafting_demo(True), run_grafting_demo(False)]

    report = {}
    for run in runs:
        u1, u2 = run.final
        report["with_grafting" if run.grafting else "without_grafting"] = {
            "u1": u1,
            "u2": u2,
            "final_loss": float(run.losses[-1]),
        }
        print(f"Grafting {'on ' if run.grafting else 'off'}: u1 = {green(f'{u1:.4f}')}, u2 = {green(f'{u2:.4f}')}")

    out.write_csv("tg_demo.csv", pd.concat([run.to_frame() for run in runs], ignore_index=True))
    out.write_json("tg_demo_report.json", report)
    return CommandResult(["tg_demo.csv", "tg_demo_report.json"])


def cmd_gradcheck(config: RunConfig | None, out: RunDirectory, args: argparse.Namespace) -> CommandResult:
    seed = config.seed if config is not None else (args.seed or 0)
    checks = gradcheck(draws=args.draws, seed=seed)

    draws = [check.to_dict() for check in checks]
    worst = max((check.max_error for check in checks), default=0.0)
    passed = worst < GRADCHECK_TOLERANCE

    out.write_json(
        "gradcheck_report.json",
        {"tolerance": GRADCHECK_TOLERANCE, "max_error": worst, "passed": passed, "draws": draws},
    )

    if passed:
        print(f"Gradients match finite differences, max relative error {green(f'{worst:.3g}')}")
    else:
        print_error(f"Max relative error {worst:.3g} exceeds {GRADCHECK_TOLERANCE}")

    return CommandResult(["gradcheck_report.json"], code=0 if passed else 1)


HANDLERS: dict[str, Callable[[RunConfig | None, RunDirectory, argparse.Namespace], CommandResult]] = {
    "synthesize": cmd_synthesize,
    "calibrate": cmd_calibrate,
    "nowcast": cmd_nowcast,
    "control": cmd_control,
    "tg-demo": cmd_tg_demo,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = parse.parse_args(argv)

    global USE_COLORS
    USE_COLORS = colors_enabled(args.no_color)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = None
        if args.config is not None:
            config = load_config(args.config)
            if args.seed is not None:
                config = config.with_seed(args.seed)
        elif args.command not in STANDALONE:
            print_error(f"{cyan(args.command)} requires {yellow('--config')}")
            return 2

        out = RunDirectory(args.out)
        started = time.perf_counter()
        result = HANDLERS[args.command](config, out, args)

        out.write_timings(args.command, result.timings | {"seconds": time.perf_counter() - started})
        out.write_manifest(
            args.command,
            config.digest if config is not None else None,
            config.seed if config is not None else args.seed,
            result.outputs,
        )
    except ConfigInvalid as e:
        print_error(str(e))
        return 2
    except DivergenceError as e:
        print_error(str(e))
        return 3
    except TrafficTwinException as e:
        print_error(f"{type(e).__name__}: {e}")
        return 1

    if result.code == 0:
        print(f"Finished {green(args.command)}, outputs in {cyan(out.root)}")

    return result.code


if __name__ == "__main__":
    exit(main())
