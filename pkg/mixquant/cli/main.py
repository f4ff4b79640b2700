"""`mixquant` entry point: one handler per subcommand.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error. Reports go
to stdout, log events to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

import structlog

from mixquant import __version__
from mixquant.analysis.intensity import compute_intensity, intensity_gain, precision_sweep
from mixquant.analysis.reports import distribution_report, proxy_eval
from mixquant.analysis.render import render_distribution, render_footprint, render_intensity, render_proxy
from mixquant.calibration.dataset import make_synthetic_dataset
from mixquant.calibration.models import CalibrationSet, ToyModel
from mixquant.calibration.network import GradientMode, compute_gradients, make_toy_model
from mixquant.calibration.storage import load_toy_model, save_toy_model
from mixquant.cli.config import Command, RunConfig, build_run_config
from mixquant.errors import MixQuantError, UsageError
from mixquant.gemm_engine.bench import run_bench
from mixquant.gemm_engine.engine import GemmEngine, tile_for
from mixquant.log import configure_logging
from mixquant.metrics import write_metrics
from mixquant.mixed_layer.footprint import footprint_of_layers, memory_footprint
from mixquant.mixed_layer.partition import quantize_model
from mixquant.mixed_layer.storage import load_quantized_model, save_quantized_model
from mixquant.salience_search.models import PrecisionAssignment, SalienceEstimator, SearchStrategy
from mixquant.salience_search.search import global_search, local_search, random_assignment
from mixquant.salience_search.storage import load_assignment, save_assignment

logger = structlog.get_logger()


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--group-size", type=int, help="quantization group size (default 128)")
    parser.add_argument("--weight-bits", type=int, choices=[4, 8], help="small-bit weight width (default 4)")
    parser.add_argument("--act-bits", type=int, help="activation width (default 8)")
    parser.add_argument("--half-scales", action="store_const", const=True, help="store scales as float16")
    parser.add_argument("--out", type=Path)


def _search_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", type=Path)
    parser.add_argument("--percent", type=float, help="fraction of output channels kept at 8 bits")
    parser.add_argument("--salience-mode", choices=["aggregated", "per-sample"])
    parser.add_argument("--salience", choices=[e.value for e in SalienceEstimator], help="default taylor")
    parser.add_argument("--strategy", choices=[s.value for s in SearchStrategy])
    parser.add_argument("--samples", type=int, help="calibration samples")


def _engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--i2f", choices=["native", "fast"])
    parser.add_argument("--tile-m", type=int)
    parser.add_argument("--tile-n", type=int)


def _shape_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixquant", description="Mixed-precision post-training quantization toolkit")
    parser.add_argument("--version", action="version", version=f"mixquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(Command.GEN_MODEL.value, help="generate a toy float model")
    _common(gen)
    gen.add_argument("--dims", type=_int_list, help="layer widths, e.g. 32,64,64,8")
    gen.add_argument("--sensitive-layer", type=int)
    gen.add_argument("--sensitivity", type=float)

    search = sub.add_parser(Command.SEARCH.value, help="global precision search")
    _common(search)
    _search_flags(search)
    search.add_argument("--report", type=Path, help="distribution report JSON")

    quantize = sub.add_parser(Command.QUANTIZE.value, help="quantize a model with an assignment")
    _common(quantize)
    _search_flags(quantize)
    quantize.add_argument("--assignment", type=Path, help="assignment JSON; searched on the fly when absent")
    quantize.add_argument("--tile-n", type=int)

    evaluate = sub.add_parser(Command.EVAL.value, help="proxy quality of a quantized model")
    _common(evaluate)
    _engine_flags(evaluate)
    evaluate.add_argument("--model", type=Path)
    evaluate.add_argument("--quantized", type=Path)
    evaluate.add_argument("--samples", type=int)

    bench = sub.add_parser(Command.BENCH.value, help="time the GEMM engine")
    _common(bench)
    _engine_flags(bench)
    _shape_flags(bench)
    bench.add_argument("--percent", type=float)
    bench.add_argument("--repeats", type=int)
    bench.add_argument("--metrics-out", type=Path, help="write Prometheus text exposition here")

    analyze = sub.add_parser(Command.ANALYZE.value, help="compute intensity and footprint reports")
    _common(analyze)
    _shape_flags(analyze)
    analyze.add_argument("--model", type=Path)
    analyze.add_argument("--assignment", type=Path)
    return parser


def flags_from(args: argparse.Namespace) -> dict[str, Any]:
    def get(name: str) -> Any:
        return getattr(args, name, None)

    return {
        "command": args.command,
        "model": get("model"),
        "assignment": get("assignment"),
        "quantized": get("quantized"),
        "out": get("out"),
        "report": get("report"),
        "metrics_out": get("metrics_out"),
        "dataset": {"dims": get("dims"), "samples": get("samples"), "seed": get("seed")},
        "schemes": {
            "weight_bits": get("weight_bits"),
            "act_bits": get("act_bits"),
            "group_size": get("group_size"),
            "half_scales": get("half_scales"),
        },
        "bench": {"m": get("m"), "n": get("n"), "k": get("k"), "repeats": get("repeats")},
        "percent": get("percent"),
        "salience_mode": get("salience_mode"),
        "estimator": get("salience"),
        "strategy": get("strategy"),
        "i2f_mode": get("i2f"),
        "tile_m": get("tile_m"),
        "tile_n": get("tile_n"),
        "workers": get("workers"),
        "sensitive_layer": get("sensitive_layer"),
        "sensitivity": get("sensitivity"),
    }


def dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _require(value: Path | None, flag: str, command: Command) -> Path:
    if value is None:
        raise UsageError(f"{command.value} needs {flag}")
    return value


def _calibration(config: RunConfig, model: ToyModel) -> CalibrationSet:
    return make_synthetic_dataset(model.dims, config.dataset.samples, config.dataset.seed)


def _search(config: RunConfig, model: ToyModel) -> PrecisionAssignment:
    if config.strategy == SearchStrategy.RANDOM:
        widths = [shape[0] for shape in model.layer_shapes]
        return random_assignment(model.layer_names, widths, config.percent, config.dataset.seed)
    gradients = compute_gradients(
        model, _calibration(config, model), GradientMode(config.salience_mode.value), workers=config.workers
    )
    search = global_search if config.strategy == SearchStrategy.GLOBAL else local_search
    return search(
        model, gradients, config.schemes.smallbit(), config.percent, config.salience_mode, estimator=config.estimator
    )


def run_gen_model(config: RunConfig) -> int:
    out = _require(config.out, "--out", config.command)
    model = make_toy_model(
        config.dataset.dims,
        config.dataset.seed,
        sensitive_layer=config.sensitive_layer,
        sensitivity=config.sensitivity,
        group_size=config.schemes.group_size,
    )
    save_toy_model(model, out)
    print(dump_json({"dims": model.dims, "layers": model.layer_names, "path": str(out)}), end="")
    return 0


def run_search(config: RunConfig) -> int:
    out = _require(config.out, "--out", config.command)
    model = load_toy_model(_require(config.model, "--model", config.command))
    assignment = _search(config, model)
    report = distribution_report(assignment, model.layer_names)
    save_assignment(assignment, out)
    if config.report is not None:
        config.report.write_text(dump_json(report.model_dump(mode="json")), encoding="utf-8")
    print(render_distribution(report))
    return 0


def run_quantize(config: RunConfig) -> int:
    out = _require(config.out, "--out", config.command)
    model = load_toy_model(_require(config.model, "--model", config.command))
    assignment = load_assignment(config.assignment) if config.assignment is not None else _search(config, model)
    quantized = quantize_model(
        model,
        assignment,
        smallbit=config.schemes.smallbit(),
        largebit=config.schemes.largebit(),
        act_scheme=config.schemes.activation(),
        tile_rows=config.tile_n,
    )
    save_quantized_model(quantized, out)
    print(render_footprint(footprint_of_layers(quantized.layers)))
    return 0


def run_eval(config: RunConfig) -> int:
    model = load_toy_model(_require(config.model, "--model", config.command))
    quantized = load_quantized_model(_require(config.quantized, "--quantized", config.command), tile_rows=config.tile_n)
    engine = GemmEngine(
        tile=tile_for(quantized.act_scheme.group_size, config.tile_m, config.tile_n),
        i2f_mode=config.i2f_mode,
        workers=config.workers,
    )
    report = proxy_eval(model, quantized, _calibration(config, model), engine)
    if config.out is not None:
        config.out.write_text(dump_json(report.model_dump(mode="json")), encoding="utf-8")
    print(render_proxy(report))
    return 0


def run_bench_command(config: RunConfig) -> int:
    result = run_bench(
        config.bench.m,
        config.bench.n,
        config.bench.k,
        percent=config.percent,
        group_size=config.schemes.group_size,
        i2f_mode=config.i2f_mode,
        workers=config.workers,
        seed=config.dataset.seed,
        tile=config.tile,
        repeats=config.bench.repeats,
    )
    text = dump_json(result.report())
    if config.out is not None:
        config.out.write_text(text, encoding="utf-8")
    print(text, end="")
    if config.metrics_out is not None:
        write_metrics(config.metrics_out)
    return 0


def run_analyze(config: RunConfig) -> int:
    queries = precision_sweep(config.bench.m, config.bench.n, config.bench.k)
    base = queries[0][1]
    payload: dict[str, Any] = {
        "intensity": [
            {
                "config": label,
                **q.model_dump(),
                "intensity": compute_intensity(q),
                "gain": intensity_gain(base, q),
            }
            for label, q in queries
        ]
    }
    sections = [render_intensity(queries)]
    if config.model is not None and config.assignment is not None:
        model = load_toy_model(config.model)
        assignment = load_assignment(config.assignment)
        footprint = memory_footprint(
            assignment,
            [shape[1] for shape in model.layer_shapes],
            smallbit=config.schemes.smallbit(),
            largebit=config.schemes.largebit(),
        )
        distribution = distribution_report(assignment, model.layer_names)
        payload["footprint"] = footprint.summary()
        payload["distribution"] = distribution.model_dump(mode="json")
        sections += [render_footprint(footprint), render_distribution(distribution)]
    elif config.model is not None or config.assignment is not None:
        raise UsageError("analyze needs both --model and --assignment for footprint reports")
    if config.out is not None:
        config.out.write_text(dump_json(payload), encoding="utf-8")
    print("\n\n".join(sections))
    return 0


HANDLERS: dict[Command, Callable[[RunConfig], int]] = {
    Command.GEN_MODEL: run_gen_model,
    Command.SEARCH: run_search,
    Command.QUANTIZE: run_quantize,
    Command.EVAL: run_eval,
    Command.BENCH: run_bench_command,
    Command.ANALYZE: run_analyze,
}


def run(config: RunConfig) -> int:
    logger.info("cli.run.start", command=config.command.value, workers=config.workers)
    status = HANDLERS[config.command](config)
    logger.info("cli.run.done", command=config.command.value, status=status)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    try:
        try:
            configure_logging()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        args = build_parser().parse_args(argv)
        return run(build_run_config(flags_from(args), args.config))
    except MixQuantError as exc:
        logger.debug("cli.failed", error=str(exc), exit_code=exc.exit_code)
        print(f"mixquant: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("cli.internal_error")
        print(f"mixquant: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
