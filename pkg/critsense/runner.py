#!/usr/bin/env python3
"""
Run configured sensing experiments from the command line.

Subcommands:
- quadrature: homodyne inverted variance at τ_n over a g grid (optionally ω estimation)
- loschmidt: qubit-readout inverted variance at the working points
- qfi: analytic, generator and fidelity QFI for one model family over a grid
- finite-eta: full Rabi model at finite frequency ratio η and the optimal working point per η
- noise: noisy homodyne readout under the Lindblad model for a list of dephasing rates
- validate: invariant checks across every module

Each run writes the sweep records (CSV or JSON) plus `<output>.summary.json`
with fits, optima and failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar

from .config import ExperimentConfig, build_config, read_config
from .errors import ConfigError, CritSenseError, OutputError, ParameterError
from .hilbert import CutoffSample, Propagator, QuantumState, SpaceDescriptor, converge_cutoff, fock_state
from .models import CriticalModel, build_lmg, build_opo, build_qrm_effective, build_qrm_full, required_cutoff
from .openquantum import NoiseSpec, noisy_inverted_variance
from .output import SweepRecord, emit, write_summary
from .protocols import (
    ProtocolPoint,
    canonical_initial_state,
    finite_eta_bound,
    frequency_inverted_variance,
    homodyne_point,
    homodyne_value,
    inverted_variance_quadrature,
    loschmidt,
    loschmidt_point,
    quadrature_peak_closed_form,
    quadrature_trace_point,
    reduced_gap,
    response_fwhm,
    tau_n,
    working_point,
)
from .qfi import qfi_analytic, qfi_fidelity_exact, qfi_generator_full

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
MIN_FIT_POINTS = 4
OPTIMUM_SCAN = (0.8, 8.0)
OPTIMUM_SAMPLES = 10
POINT_ERRORS = (CritSenseError, ArithmeticError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    points_used: int


def fit_powerlaw(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Least squares of log y against log x; y ≈ e^intercept · x^exponent."""
    pts = list(points)
    if len(pts) < MIN_FIT_POINTS:
        raise ParameterError(f"power-law fit needs >= {MIN_FIT_POINTS} points, got {len(pts)}")
    xs = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts], dtype=float)
    if np.any(~np.isfinite(xs)) or np.any(~np.isfinite(ys)) or np.any(xs <= 0) or np.any(ys <= 0):
        raise ParameterError("power-law fit needs finite positive x and y")
    res = stats.linregress(np.log(xs), np.log(ys))
    return ScalingFit(float(res.slope), float(res.intercept), float(min(res.rvalue**2, 1.0)), len(pts))


@dataclass
class RunResult:
    records: list[SweepRecord] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


Task = tuple[str, Callable[[], tuple[SweepRecord, Any]], Callable[[str], SweepRecord]]


def _record(point: ProtocolPoint) -> SweepRecord:
    """Quadrature points carry the generator QFI in `qfi_exact`; other protocols carry the exact QFI."""
    f = point.inverted_variance
    ratio = f / point.closed_form if math.isfinite(point.closed_form) and point.closed_form > 0 else math.nan
    generator_qfi = point.protocol == "quadrature"
    return SweepRecord(
        protocol=point.protocol,
        model=point.model,
        g_or_lambda=point.parameter,
        delta=point.delta,
        eta=point.eta,
        time=point.time,
        n=point.n,
        mean=point.mean,
        variance=point.variance,
        chi=point.chi,
        inv_var=f,
        qfi_analytic=point.qfi_analytic,
        qfi_generator=point.qfi_exact if generator_qfi else math.nan,
        qfi_exact=math.nan if generator_qfi else point.qfi_exact,
        closed_form=point.closed_form,
        ratio=ratio,
        cutoff=point.cutoff,
        converged=point.converged,
    )


def _failed(protocol: str, model: str, param: float, eta: float = math.inf, n: int = 1) -> Callable[[str], SweepRecord]:
    def make(message: str) -> SweepRecord:
        return SweepRecord(protocol, model, param, math.nan, eta, math.nan, n, converged=False, error=message)

    return make


def _run_task(task: Task) -> tuple[SweepRecord, Any, str | None]:
    label, fn, fallback = task
    try:
        record, extra = fn()
    except POINT_ERRORS as exc:
        message = f"{type(exc).__name__}: {exc}"
        print(f"{label}: FAIL {message}", file=sys.stderr)
        return fallback(message), None, f"{label}: {message}"
    status = "ok" if record.converged else "ok (cutoff not converged)"
    print(f"{label}: {status} F={record.inv_var:.6g} cutoff={record.cutoff}", file=sys.stderr)
    return record, extra, None


def _dispatch(config: ExperimentConfig, tasks: Sequence[Task], result: RunResult) -> list[Any]:
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(_run_task, tasks))
    extras = []
    for record, extra, failure in outcomes:
        result.records.append(record)
        extras.append(extra)
        if failure:
            result.failures.append(failure)
    return extras


def _fit_records(
    records: Sequence[SweepRecord], reduce_by_g2: bool, value: Callable[[SweepRecord], float] | None = None
) -> dict[str, Any] | None:
    pick = value or (lambda r: r.inv_var)
    pts = []
    for r in records:
        if not r.converged or r.error:
            continue
        y = pick(r) / (r.g_or_lambda**2) if reduce_by_g2 else pick(r)
        if math.isfinite(y) and y > 0 and r.delta > 0:
            pts.append((r.delta, y))
    if len(pts) < MIN_FIT_POINTS:
        logger.warning("fit skipped: only %d usable points", len(pts))
        return None
    fit = fit_powerlaw(pts)
    return {
        "exponent": fit.exponent,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "points_used": fit.points_used,
    }


def _run_quadrature(config: ExperimentConfig, result: RunResult) -> None:
    if config.times:
        _run_quadrature_traces(config, result)
        return
    tasks: list[Task] = []
    for g in config.grid():

        def job(g: float = g) -> tuple[SweepRecord, Any]:
            point = inverted_variance_quadrature(
                g, config.omega, config.n, cutoff=config.cutoff_initial, cutoff_max=config.cutoff_max
            )
            return _record(point), None

        tasks.append((f"quadrature g={g:.6g}", job, _failed("quadrature", "qrm_effective", g, n=config.n)))
    _dispatch(config, tasks, result)
    result.summary["fits"] = {
        "quadrature": _fit_records([r for r in result.records if r.protocol == "quadrature"], True)
    }

    if not config.frequency:
        return
    freq_tasks: list[Task] = []
    for g in config.grid():

        def fjob(g: float = g) -> tuple[SweepRecord, Any]:
            point = frequency_inverted_variance(
                g, config.omega, config.n, cutoff=config.cutoff_initial, cutoff_max=config.cutoff_max
            )
            return _record(point), dict(point.extras, g=g)

        freq_tasks.append((f"frequency g={g:.6g}", fjob, _failed("frequency", "qrm_effective", g, n=config.n)))
    extras = _dispatch(config, freq_tasks, result)
    result.summary["frequency"] = [e for e in extras if e is not None]


def _run_quadrature_traces(config: ExperimentConfig, result: RunResult) -> None:
    """⟨X⟩_t, Var[X], χ, F and the generator QFI for every (g, t) pair, in grid-major order."""
    tasks: list[Task] = []
    for g in config.grid():
        for t in config.times:

            def job(g: float = g, t: float = t) -> tuple[SweepRecord, Any]:
                point = quadrature_trace_point(
                    g, t, config.omega, cutoff=config.cutoff_initial, cutoff_max=config.cutoff_max
                )
                return _record(point), None

            tasks.append((f"quadrature g={g:.6g} t={t:.6g}", job, _failed("quadrature", "qrm_effective", g, n=0)))
    _dispatch(config, tasks, result)
    result.summary["times"] = list(config.times)
    result.summary["fits"] = {"quadrature": None}


def _run_loschmidt(config: ExperimentConfig, result: RunResult) -> None:
    tasks: list[Task] = []
    for m in config.branches:
        wp = working_point(m, config.omega)

        def job(wp=wp) -> tuple[SweepRecord, Any]:
            point = loschmidt_point(wp, config.omega, cutoff=config.cutoff_initial, cutoff_max=config.cutoff_max)
            fwhm = _loschmidt_fwhm(config, wp.m, point.cutoff) if config.fwhm else None
            return _record(point), {"m": wp.m, "g_o": wp.g_o, "tau": wp.tau, "fwhm": fwhm}

        tasks.append((f"loschmidt m={m}", job, _failed("loschmidt", "qrm_conditioned", wp.g_o, n=m)))
    extras = _dispatch(config, tasks, result)
    result.summary["working_points"] = [e for e in extras if e is not None]
    result.summary["fits"] = {"loschmidt": _fit_records(result.records, False)}


def _loschmidt_fwhm(config: ExperimentConfig, m: int, cutoff: int) -> float:
    wp = working_point(m, config.omega)
    lower = working_point(m - 1, config.omega).g_o if m > 1 else 0.0
    span = 0.5 * min(wp.g_o - lower, 1.0 - wp.g_o)
    c = 1.0 / math.sqrt(2.0)

    def response(g: float) -> float:
        return loschmidt(g, config.omega, partial(fock_state, n=0), c, c, wp.tau, cutoff).inverted_variance

    return response_fwhm(response, wp.g_o, span)


def build_family(config: ExperimentConfig, value: float, cutoff: int) -> CriticalModel:
    if config.model == "qrm_effective":
        return build_qrm_effective(config.omega, value, cutoff)
    if config.model == "opo":
        return build_opo(value, config.kappa, cutoff)
    return build_lmg(config.gamma, value, cutoff)


def _initial_state(config: ExperimentConfig, space: SpaceDescriptor) -> QuantumState:
    if config.state == "vacuum":
        return fock_state(space, 0)
    return canonical_initial_state(space)


def qfi_record(config: ExperimentConfig, value: float, time: float | None = None) -> SweepRecord:
    """All three pure-state QFI estimates at `time`, or at √Δ·t = 2π·phase_cycles; cutoff certified on 4·Var[h]."""

    def evaluate(cutoff: int) -> CutoffSample:
        model = build_family(config, value, cutoff)
        psi0 = _initial_state(config, model.space)
        t = time if time is not None else 2.0 * math.pi * config.phase_cycles / model.sqrt_gap()
        generator_qfi = qfi_generator_full(model, psi0, t).value
        psi_t = Propagator.from_hamiltonian(model.hamiltonian).evolve(psi0, t)
        return CutoffSample(generator_qfi, (psi_t,), (model, psi0, t))

    conv = converge_cutoff(evaluate, initial=config.cutoff_initial, maximum=config.cutoff_max)
    model, psi0, t = conv.sample.payload
    analytic = qfi_analytic(model, psi0, t)
    exact = qfi_fidelity_exact(model, psi0, t)
    return SweepRecord(
        protocol="qfi",
        model=model.name.value,
        g_or_lambda=value,
        delta=model.reduced_delta,
        eta=math.inf,
        time=t,
        n=config.n,
        qfi_analytic=analytic.value,
        qfi_generator=conv.sample.value,
        qfi_exact=exact.value,
        ratio=analytic.value / conv.sample.value if conv.sample.value > 0 else math.nan,
        cutoff=conv.cutoff,
        converged=conv.converged,
    )


def _run_qfi(config: ExperimentConfig, result: RunResult) -> None:
    tasks: list[Task] = []
    for value in config.grid():
        for t in config.times or (None,):

            def job(value: float = value, t: float | None = t) -> tuple[SweepRecord, Any]:
                return qfi_record(config, value, t), None

            label = f"qfi {config.model} p={value:.6g}" + (f" t={t:.6g}" if t is not None else "")
            tasks.append((label, job, _failed("qfi", config.model, value, n=config.n)))
    _dispatch(config, tasks, result)
    if config.times:
        result.summary["times"] = list(config.times)
        result.summary["fits"] = {"qfi": None}
        return
    result.summary["fits"] = {"qfi": _fit_records(result.records, False, lambda r: r.qfi_generator)}


def _full_builder(omega: float, eta: float) -> Callable[[float, int], CriticalModel]:
    def build(g: float, cutoff: int) -> CriticalModel:
        return build_qrm_full(omega, eta, g, cutoff)

    return build


def finite_eta_point(config: ExperimentConfig, eta: float, g: float) -> ProtocolPoint:
    t = tau_n(g, config.omega, config.n)
    start = max(config.cutoff_initial, required_cutoff(g, eta))
    point = homodyne_point(
        _full_builder(config.omega, eta),
        g,
        t,
        config.n,
        canonical_initial_state,
        cutoff=start,
        cutoff_max=max(config.cutoff_max, start),
        with_qfi=False,
    )
    return replace(point, closed_form=quadrature_peak_closed_form(g, config.n))


def eta_optimum(config: ExperimentConfig, eta: float) -> dict[str, Any]:
    """Coupling that maximizes F at finite η, scanned in Δ_g ∝ η^(−1/3) and refined by bounded Brent."""
    scale = eta ** (-1.0 / 3.0)
    deltas = np.geomspace(OPTIMUM_SCAN[0] * scale, min(OPTIMUM_SCAN[1] * scale, 3.6), OPTIMUM_SAMPLES)
    couplings = np.sqrt(1.0 - deltas / 4.0)[::-1]
    points = [finite_eta_point(config, eta, float(g)) for g in couplings]
    values = [p.inverted_variance for p in points]
    best = int(np.argmax(values))
    lo = float(couplings[max(best - 1, 0)])
    hi = float(couplings[min(best + 1, len(couplings) - 1)])
    cutoff = max(p.cutoff for p in points[max(best - 1, 0) : best + 2])
    build = _full_builder(config.omega, eta)

    def objective(g: float) -> float:
        return -homodyne_value(build, g, tau_n(g, config.omega, config.n), cutoff)

    refined = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    g_o = float(refined.x) if -refined.fun >= values[best] else float(couplings[best])
    return {
        "eta": eta,
        "g_o": g_o,
        "delta_o": reduced_gap(g_o),
        "inv_var": max(-float(refined.fun), values[best]),
        "cutoff": cutoff,
    }


def _run_finite_eta(config: ExperimentConfig, result: RunResult) -> None:
    tasks: list[Task] = []
    for eta in config.etas:
        for g in config.grid():

            def job(eta: float = eta, g: float = g) -> tuple[SweepRecord, Any]:
                return _record(finite_eta_point(config, eta, g)), None

            tasks.append((f"finite_eta eta={eta:.6g} g={g:.6g}", job, _failed("quadrature", "qrm_full", g, eta, config.n)))
    _dispatch(config, tasks, result)

    validity = []
    for eta in config.etas:
        bound = finite_eta_bound(eta)
        inside = [r for r in result.records if r.eta == eta and not r.error and r.delta >= bound]
        validity.append(
            {
                "eta": eta,
                "delta_bound": bound,
                "points": len(inside),
                "min_ratio": min((r.ratio for r in inside), default=math.nan),
            }
        )
    result.summary["validity"] = validity

    optima = []
    for eta in config.etas:
        try:
            optima.append(eta_optimum(config, eta))
        except POINT_ERRORS as exc:
            message = f"optimum eta={eta:.6g}: {type(exc).__name__}: {exc}"
            print(message, file=sys.stderr)
            result.failures.append(message)
    result.summary["optima"] = optima
    fit = None
    if len(optima) >= MIN_FIT_POINTS:
        sf = fit_powerlaw([(o["eta"], o["delta_o"]) for o in optima])
        fit = {"exponent": sf.exponent, "intercept": sf.intercept, "r_squared": sf.r_squared, "points_used": sf.points_used}
    result.summary["fits"] = {"optimum_delta_vs_eta": fit}


def noise_spec(config: ExperimentConfig, dephasing: float) -> NoiseSpec:
    half = dephasing / 2.0
    return NoiseSpec(
        dephasing,
        config.qubit_decay if config.qubit_decay is not None else half,
        config.boson_decay if config.boson_decay is not None else half,
        config.boson_heating if config.boson_heating is not None else half,
    )


def _run_noise(config: ExperimentConfig, result: RunResult) -> None:
    bound = finite_eta_bound(config.eta)
    outside = [g for g in config.grid() if reduced_gap(g) < bound]
    if outside:
        logger.warning(
            "noise grid has %d point(s) with Δ_g below %.3g at eta=%.6g; finite-eta corrections bias the fits",
            len(outside),
            bound,
            config.eta,
        )
    result.summary["delta_bound"] = bound
    tasks: list[Task] = []
    for rate in config.dephasing:
        noise = noise_spec(config, rate)
        for g in config.grid():

            def job(noise: NoiseSpec = noise, g: float = g) -> tuple[SweepRecord, Any]:
                cutoff = max(config.cutoff_initial, required_cutoff(g, config.eta))
                point = noisy_inverted_variance(g, config.omega, config.eta, noise, config.n, cutoff)
                return _record(point), rate

            tasks.append(
                (f"noise dephasing={rate:.6g} g={g:.6g}", job, _failed("noise", "qrm_full", g, config.eta, config.n))
            )
    rates = _dispatch(config, tasks, result)
    fits = {}
    for rate in config.dephasing:
        subset = [r for r, tag in zip(result.records, rates) if tag == rate]
        fits[f"dephasing={rate:.6g}"] = _fit_records(subset, True)
    result.summary["fits"] = fits


def _run_validate(config: ExperimentConfig, result: RunResult) -> None:
    from . import validation

    checks = validation.run_checks(slow=config.slow)
    result.summary["checks"] = [
        {"name": c.name, "passed": c.passed, "detail": c.detail, "slow": c.slow} for c in checks
    ]
    for c in checks:
        print(f"{c.name}: {'ok' if c.passed else 'FAIL'} {c.detail}", file=sys.stderr)
        if not c.passed:
            result.failures.append(f"{c.name}: {c.detail}")


EXPERIMENTS: dict[str, Callable[[ExperimentConfig, RunResult], None]] = {
    "quadrature": _run_quadrature,
    "loschmidt": _run_loschmidt,
    "qfi": _run_qfi,
    "finite_eta": _run_finite_eta,
    "noise": _run_noise,
    "validate": _run_validate,
}


def run(config: ExperimentConfig) -> RunResult:
    result = RunResult()
    result.summary["experiment"] = config.experiment
    result.summary["config"] = config.as_dict()
    EXPERIMENTS[config.experiment](config, result)
    result.summary["failures"] = list(result.failures)
    return result


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with experiment settings.")
    parser.add_argument("--output", help="Output data file, or - for standard output.")
    parser.add_argument("--format", choices=("csv", "json"), help="Output data format.")
    parser.add_argument("--workers", type=int, help="Worker threads for grid points.")
    parser.add_argument("--cutoff-max", type=int, dest="cutoff_max", help="Largest Fock cutoff to try.")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Criticality-enhanced quantum sensing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("quadrature", "Homodyne inverted variance at the refocusing times."),
        ("loschmidt", "Qubit Loschmidt-echo readout at the working points."),
        ("qfi", "Analytic and exact QFI over a parameter grid."),
        ("finite-eta", "Full Rabi model at finite frequency ratio."),
        ("noise", "Noisy homodyne readout under the Lindblad model."),
        ("validate", "Check the invariants of every module."),
    ):
        p = sub.add_parser(name, help=text, description=text)
        _add_common(p)
        if name == "validate":
            p.add_argument("--slow", action="store_true", default=None, help="Also run the long reproductions.")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    experiment = args.command.replace("-", "_")
    try:
        file_values = read_config(args.config) if args.config else {}
        config = build_config(
            experiment,
            file_values,
            {
                "output": args.output,
                "format": args.format,
                "workers": args.workers,
                "cutoff_max": args.cutoff_max,
                "slow": getattr(args, "slow", None),
            },
        )
    except ConfigError as exc:
        print(f"Config error: {exc}", file=sys.stderr)
        return 2

    result = run(config)
    out = config.output_path
    try:
        if config.experiment != "validate" or config.output:
            emit(result.records, config.format, out)
            summary = write_summary(out, result.summary)
        else:
            summary = None
    except OutputError as exc:
        print(f"Output error: {exc}", file=sys.stderr)
        return 1

    failed = len(result.failures)
    print(
        "Done. "
        f"experiment={config.experiment} "
        f"points={len(result.records)} "
        f"failed={failed} "
        f"out={out if config.experiment != 'validate' or config.output else '-'} "
        f"summary={summary or '-'}",
        file=sys.stderr,
    )
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
