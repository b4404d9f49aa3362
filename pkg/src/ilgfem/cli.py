"""Command line runner for the L-shape benchmarks.

Subcommands::

    ilgfem run --experiment smooth --scheme kacanov --out results/
    ilgfem matrix --max-elements 2000 --out results/
    ilgfem selftest

Settings resolve as command-line flags, then an INI file given by
``--config`` (``key = value`` lines, optional ``[run]`` section), then
built-in defaults.
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adapt import AdaptConfig, run_adaptive
from .problems import make_experiment
from .report import emit_convergence_svg, emit_csv
from .schemes import KINDS, DampingControl, SchemeConfig, admissible_delta_interval

log = logging.getLogger("ilgfem")

EXPERIMENT_NAMES = ("smooth", "singular", "singular-increasing")
ESTIMATORS = ("linear", "nonlinear")
DEFAULT_DELTA = {"smooth": 0.85, "singular": 0.5, "singular-increasing": 0.4}
DEFAULTS = dict(
    experiment="smooth", scheme="kacanov", estimator="linear", delta=None,
    epsilon=1e-6, kappa=0.5, vartheta=2.0, theta_doerfler=0.5,
    max_elements=100_000, out="results", seed=0,
)
_TYPES = dict(delta=float, epsilon=float, kappa=float, vartheta=float,
              theta_doerfler=float, max_elements=int, seed=int)


@dataclass(frozen=True)
class RunSpec:
    command: str = "run"
    experiment: str = "smooth"
    scheme: str = "kacanov"
    estimator: str = "linear"
    delta: float = 0.85
    epsilon: float = 1e-6
    kappa: float = 0.5
    vartheta: float = 2.0
    theta_doerfler: float = 0.5
    max_elements: int = 100_000
    out: str = "results"
    seed: int = 0  # reserved; the numerics are deterministic
    quiet: bool = False

    @property
    def stem(self) -> str:
        return f"{self.experiment}_{self.scheme}_{self.estimator}"

    def scheme_config(self) -> SchemeConfig:
        damping = DampingControl(kappa=self.kappa, epsilon=self.epsilon)
        return SchemeConfig(self.scheme, delta=self.delta, damping=damping)

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(self.scheme_config(), estimator=self.estimator, vartheta=self.vartheta,
                           theta_doerfler=self.theta_doerfler, max_elements=self.max_elements)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ilgfem", description="Adaptive iterative linearized P1 FEM on the L-shape.")
    p.add_argument("--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in (("run", "one experiment/scheme/estimator run"),
                      ("matrix", "all 18 combinations"),
                      ("selftest", "quick consistency check")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", help="INI file with key = value settings")
        sp.add_argument("--out", help="output directory")
        if name == "selftest":
            continue
        if name == "run":
            sp.add_argument("--experiment", choices=EXPERIMENT_NAMES)
            sp.add_argument("--scheme", choices=KINDS)
            sp.add_argument("--estimator", choices=ESTIMATORS)
            sp.add_argument("--delta", type=float, help="Zarantonello damping (default per experiment)")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--vartheta", type=float)
        sp.add_argument("--theta-doerfler", dest="theta_doerfler", type=float)
        sp.add_argument("--max-elements", dest="max_elements", type=int)
        sp.add_argument("--seed", type=int)
    return p


def read_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    cp.read_string(text)
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            k = k.replace("-", "_")
            if k not in DEFAULTS:
                raise ValueError(f"unknown config key {k!r}")
            out[k] = _TYPES[k](v) if k in _TYPES else v
    return out


def _validate(spec: RunSpec, error) -> None:
    if spec.experiment not in EXPERIMENT_NAMES:
        error(f"unknown experiment {spec.experiment!r}")
    if spec.scheme not in KINDS:
        error(f"unknown scheme {spec.scheme!r}")
    if spec.estimator not in ESTIMATORS:
        error(f"unknown estimator {spec.estimator!r}")
    checks = (
        (spec.delta > 0, "delta must be positive"),
        (spec.epsilon > 0, "epsilon must be positive"),
        (0 < spec.kappa < 1, "kappa must lie in (0, 1)"),
        (spec.vartheta > 0, "vartheta must be positive"),
        (0 < spec.theta_doerfler <= 1, "theta-doerfler must lie in (0, 1]"),
        (spec.max_elements >= 0, "max-elements must be nonnegative"),
    )
    for ok, msg in checks:
        if not ok:
            error(msg)


def parse_args(argv) -> RunSpec:
    parser = build_parser()
    ns = parser.parse_args(argv)
    values = dict(DEFAULTS)
    if ns.config:
        try:
            values.update(read_config(ns.config))
        except (OSError, ValueError, configparser.Error) as exc:
            parser.error(f"bad config file: {exc}")
    for k in DEFAULTS:
        v = getattr(ns, k, None)
        if v is not None:
            values[k] = v
    values["experiment"] = values["experiment"].replace("_", "-")
    if values["delta"] is None:
        values["delta"] = DEFAULT_DELTA.get(values["experiment"], 1.0)
    spec = RunSpec(command=ns.command, quiet=ns.quiet, **values)
    _validate(spec, parser.error)
    return spec


def warn_if_outside_theory(spec: RunSpec) -> None:
    problem = make_experiment(spec.experiment)
    lo, hi = admissible_delta_interval(spec.scheme, problem)
    if spec.scheme == "zarantonello" and not lo < spec.delta < hi:
        log.warning("delta %.3g lies outside the proven range (%.3g, %.3g)", spec.delta, lo, hi)
    if spec.scheme == "newton":
        d_max = spec.scheme_config().damping.delta_max
        if not d_max < hi:
            log.warning("delta_max %.3g exceeds the proven bound %.3g", d_max, hi)


def execute(spec: RunSpec) -> Path:
    """Run one combination and write its CSV and SVG; returns the CSV path."""
    warn_if_outside_theory(spec)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    record = run_adaptive(make_experiment(spec.experiment), spec.adapt_config())
    csv_path = out / f"{spec.stem}.csv"
    emit_csv(record, csv_path)
    emit_convergence_svg(record, out / f"{spec.stem}.svg")
    lv = record.levels[-1]
    log.info("%s: %d levels, %d elements, %d steps, error %s", spec.stem, len(record),
             lv.elements, lv.total_steps, lv.error_h1)
    return csv_path


def matrix_specs(base: RunSpec):
    for exp, kind, est in itertools.product(EXPERIMENT_NAMES, KINDS, ESTIMATORS):
        yield replace(base, command="run", experiment=exp, scheme=kind, estimator=est,
                      delta=DEFAULT_DELTA[exp])


def worker_count(n_jobs: int) -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("ILG_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer ILG_THREADS=%r", cap)
    return max(1, min(n, n_jobs))


def _execute_quiet(spec: RunSpec):
    logging.getLogger("ilgfem.adapt").setLevel(logging.WARNING)
    return execute(spec)


def run_all(base: RunSpec) -> int:
    specs = list(matrix_specs(base))
    workers = worker_count(len(specs))
    failed = 0
    if workers == 1:
        for s in specs:
            try:
                execute(s)
            except Exception:
                log.exception("run %s failed", s.stem)
                failed += 1
        return 1 if failed else 0
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_execute_quiet, s): s for s in specs}
        for fut, s in futures.items():
            try:
                fut.result()
                log.info("finished %s", s.stem)
            except Exception as exc:
                log.error("run %s failed: %s", s.stem, exc)
                failed += 1
    return 1 if failed else 0


def selftest() -> int:
    """Small end-to-end check of mesh invariants, a Poisson solve and one adaptive run."""
    from .mesh import bisect, make_lshape_initial
    from .problems import constant_mu
    from .schemes import SchemeState, step
    from .space import FeSpace, error_h1

    mesh = make_lshape_initial(2)
    rng = np.random.default_rng(0)
    for _ in range(3):
        mesh = bisect(mesh, rng.choice(mesh.n_elements, size=max(1, mesh.n_elements // 20), replace=False))
        mesh.check(area=3.0)
    problem = constant_mu(1.0)
    space = FeSpace(make_lshape_initial(2))
    cfg = SchemeConfig("kacanov")
    u = step(space, SchemeState.start(space.zero(), problem, cfg), cfg, problem).current
    err = error_h1(u, problem.exact.gradient)
    record = run_adaptive(make_experiment("smooth"), AdaptConfig(cfg, max_elements=2000))
    e = record.column("error_h1")
    ok = err < 1.0 and e[-1] < e[0] and record.levels[-1].elements > 2000
    print(f"selftest {'ok' if ok else 'FAILED'}: poisson error {err:.3e}, "
          f"adaptive error {e[0]:.3e} -> {e[-1]:.3e} in {len(record)} levels")
    return 0 if ok else 1


def main(argv: Optional[list] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    spec = parse_args(argv)
    logging.basicConfig(level=logging.WARNING if spec.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if spec.command == "selftest":
            return selftest()
        if spec.command == "matrix":
            return run_all(spec)
        execute(spec)
        return 0
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        log.debug("details", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
