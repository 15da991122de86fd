"""Experiment configs, runners, and CSV emission.

A config is one JSON document describing one experiment: kernel, mean,
domain, sigma, thresholds, and estimator settings.  Every runner honors the
config seed, derives per-row and per-estimator substreams from it, and
writes CSV with a fixed column set in full-precision scientific notation,
so identical (config, seed) runs produce byte-identical artifacts
regardless of thread count.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import CovarianceKernel, gaussian_aniso, spectral_moments, squared_exponential
from .domain import Domain, Grid, MeanFunction
from .errors import ConfigError, NoInteriorMax, NoRoot, UnsupportedAnisotropy
from .mc_estimators import count_tail_mc, crude_mc, importance_sampling
from .streams import substream
from .tail_approx import (
    RHO_GUIDE,
    TailQuery,
    rho_diagnostic,
    critical_level,
    tail_count_approx,
    tail_integral_approx,
    tail_laplace_approx,
    threshold_function,
)

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "CSV_COLUMNS",
    "load_config",
    "config_from_dict",
    "run_compare",
    "run_figure",
    "run_rho",
    "run_pvalue",
    "FIGURE_PRESETS",
]

CSV_COLUMNS = (
    "b", "u", "rho", "approx", "approx_laplace", "mc_estimate", "mc_se",
    "is_estimate", "is_se", "count_mc_estimate", "count_mc_se", "warnings",
)

_KERNEL_NAMES = ("squared_exponential", "gaussian_aniso")
_MEAN_NAMES = ("constant", "quadratic", "linear_combo")

# Substream tags: one per estimator kind so row-level parallelism cannot
# perturb any draw.
_TAG_CRUDE, _TAG_IS, _TAG_COUNT = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    kernel_spec: tuple
    mean_spec: tuple
    domain: Domain
    sigma: float
    b_values: tuple[float, ...]
    n: int
    seed: int
    grid_resolution: tuple[int, ...] | None = None
    is_n: int | None = None
    count_n: int | None = None
    out_dir: str | None = None
    svg: bool = False

    def to_dict(self) -> dict:
        kernel = dict(self.kernel_spec)
        if "scale_matrix" in kernel:
            kernel["scale_matrix"] = [list(row) for row in kernel["scale_matrix"]]
        mean = dict(self.mean_spec)
        if "beta" in mean:
            mean["beta"] = list(mean["beta"])
        if "terms" in mean:
            mean["terms"] = [dict(t) for t in mean["terms"]]
        doc = {
            "kernel": kernel,
            "mean": mean,
            "domain": [[a, b] for a, b in self.domain.bounds()],
            "sigma": self.sigma,
            "b": list(self.b_values),
            "estimators": {"n": self.n, "seed": self.seed},
        }
        if self.grid_resolution is not None:
            doc["estimators"]["grid_resolution"] = list(self.grid_resolution)
        if self.is_n is not None:
            doc["estimators"]["is_n"] = self.is_n
        if self.count_n is not None:
            doc["estimators"]["count_n"] = self.count_n
        output = {}
        if self.out_dir is not None:
            output["dir"] = self.out_dir
        if self.svg:
            output["svg"] = True
        if output:
            doc["output"] = output
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ResultRow:
    """One CSV row; log-scale columns are derived downstream, never stored."""

    b: float
    u: float | None = None
    rho: float | None = None
    approx: float | None = None
    approx_laplace: float | None = None
    mc_estimate: float | None = None
    mc_se: float | None = None
    is_estimate: float | None = None
    is_se: float | None = None
    count_mc_estimate: float | None = None
    count_mc_se: float | None = None
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _fail(path: str, message: str) -> ConfigError:
    return ConfigError(f"config.{path}: {message}")


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise _fail(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _fail(path, f"expected an integer, got {value!r}")
    return int(value)


def _parse_kernel(doc, dim: int) -> tuple:
    if not isinstance(doc, dict):
        raise _fail("kernel", "expected an object")
    name = _require(doc, "name", "kernel")
    if name == "squared_exponential":
        ls = _as_number(doc.get("length_scale", 1.0), "kernel.length_scale")
        if ls <= 0:
            raise _fail("kernel.length_scale", "must be > 0")
        return (("name", name), ("length_scale", ls))
    if name == "gaussian_aniso":
        mat = _require(doc, "scale_matrix", "kernel")
        arr = np.asarray(mat, dtype=float)
        if arr.shape != (dim, dim):
            raise _fail("kernel.scale_matrix", f"expected a {dim}x{dim} matrix")
        return (("name", name), ("scale_matrix", tuple(map(tuple, arr.tolist()))))
    raise _fail("kernel.name", f"unknown kernel {name!r}; built-ins: {_KERNEL_NAMES}")


def _parse_mean(doc, dim: int) -> tuple:
    if not isinstance(doc, dict):
        raise _fail("mean", "expected an object")
    name = _require(doc, "name", "mean")
    if name == "constant":
        return (("name", name), ("value", _as_number(doc.get("value", 0.0), "mean.value")))
    if name == "quadratic":
        return (("name", name),
                ("coefficient", _as_number(doc.get("coefficient", 0.25), "mean.coefficient")))
    if name == "linear_combo":
        beta = _require(doc, "beta", "mean")
        terms = _require(doc, "terms", "mean")
        if not isinstance(beta, list) or not isinstance(terms, list) or len(beta) != len(terms):
            raise _fail("mean", "beta and terms must be lists of equal length")
        norm_terms = []
        for i, term in enumerate(terms):
            if not isinstance(term, dict) or "type" not in term:
                raise _fail(f"mean.terms[{i}]", "expected an object with a 'type'")
            norm_terms.append(tuple(sorted(term.items())))
        # build once to validate term contents
        try:
            MeanFunction.linear_combo([dict(t) for t in norm_terms], beta, dim)
        except ValueError as exc:
            raise _fail("mean.terms", str(exc)) from exc
        return (("name", name),
                ("beta", tuple(float(x) for x in beta)),
                ("terms", tuple(norm_terms)))
    raise _fail("mean.name", f"unknown mean {name!r}; built-ins: {_MEAN_NAMES}")


def _parse_b(doc) -> tuple[float, ...]:
    if isinstance(doc, list):
        if not doc:
            raise _fail("b", "threshold list must be nonempty")
        return tuple(_as_number(x, f"b[{i}]") for i, x in enumerate(doc))
    if isinstance(doc, dict) and "geometric" in doc:
        g = doc["geometric"]
        start = _as_number(_require(g, "start", "b.geometric"), "b.geometric.start")
        stop = _as_number(_require(g, "stop", "b.geometric"), "b.geometric.stop")
        num = _as_int(_require(g, "num", "b.geometric"), "b.geometric.num")
        if start <= 0 or stop <= start or num < 2:
            raise _fail("b.geometric", "need 0 < start < stop and num >= 2")
        return tuple(float(x) for x in np.geomspace(start, stop, num))
    raise _fail("b", "expected a list of thresholds or {'geometric': {...}}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    domain_doc = _require(doc, "domain", "")
    if not isinstance(domain_doc, list) or not domain_doc:
        raise _fail("domain", "expected a nonempty list of [low, high] pairs")
    try:
        domain = Domain.from_bounds(domain_doc)
    except (TypeError, ValueError) as exc:
        raise _fail("domain", str(exc)) from exc

    kernel_spec = _parse_kernel(_require(doc, "kernel", ""), domain.dim)
    mean_spec = _parse_mean(_require(doc, "mean", ""), domain.dim)
    sigma = _as_number(_require(doc, "sigma", ""), "sigma")
    if sigma <= 0:
        raise _fail("sigma", "must be > 0")
    b_values = _parse_b(_require(doc, "b", ""))

    est = _require(doc, "estimators", "")
    if not isinstance(est, dict):
        raise _fail("estimators", "expected an object")
    n = _as_int(_require(est, "n", "estimators"), "estimators.n")
    if n < 1:
        raise _fail("estimators.n", "must be >= 1")
    seed = _as_int(_require(est, "seed", "estimators"), "estimators.seed")
    grid_resolution = None
    if "grid_resolution" in est:
        res = est["grid_resolution"]
        if isinstance(res, int) and not isinstance(res, bool):
            grid_resolution = (res,) * domain.dim
        elif isinstance(res, list) and len(res) == domain.dim:
            grid_resolution = tuple(_as_int(x, "estimators.grid_resolution") for x in res)
        else:
            raise _fail("estimators.grid_resolution",
                        f"expected an int or a list of {domain.dim} ints")
        if any(r < 1 for r in grid_resolution):
            raise _fail("estimators.grid_resolution", "entries must be >= 1")
    is_n = count_n = None
    if "is_n" in est:
        is_n = _as_int(est["is_n"], "estimators.is_n")
        if is_n < 1:
            raise _fail("estimators.is_n", "must be >= 1")
    if "count_n" in est:
        count_n = _as_int(est["count_n"], "estimators.count_n")
        if count_n < 1:
            raise _fail("estimators.count_n", "must be >= 1")

    out_dir = None
    svg = False
    if "output" in doc:
        output = doc["output"]
        if not isinstance(output, dict):
            raise _fail("output", "expected an object")
        if "dir" in output:
            out_dir = str(output["dir"])
        svg = bool(output.get("svg", False))

    known = {"kernel", "mean", "domain", "sigma", "b", "estimators", "output"}
    for key in doc:
        if key not in known:
            raise _fail(key, "unknown field")

    return ExperimentConfig(
        kernel_spec=kernel_spec, mean_spec=mean_spec, domain=domain, sigma=sigma,
        b_values=b_values, n=n, seed=seed, grid_resolution=grid_resolution,
        is_n=is_n, count_n=count_n, out_dir=out_dir, svg=svg,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_kernel(config: ExperimentConfig) -> CovarianceKernel:
    spec = dict(config.kernel_spec)
    if spec["name"] == "squared_exponential":
        return squared_exponential(config.domain.dim, spec["length_scale"])
    return gaussian_aniso(np.asarray(spec["scale_matrix"], dtype=float))


def build_mean(config: ExperimentConfig) -> MeanFunction:
    spec = dict(config.mean_spec)
    dim = config.domain.dim
    if spec["name"] == "constant":
        return MeanFunction.constant(spec["value"], dim)
    if spec["name"] == "quadratic":
        return MeanFunction.quadratic(spec["coefficient"], dim)
    return MeanFunction.linear_combo([dict(t) for t in spec["terms"]], spec["beta"], dim)


def build_grid(config: ExperimentConfig, kernel: CovarianceKernel) -> Grid:
    if config.grid_resolution is not None:
        return Grid.regular(config.domain, config.grid_resolution)
    return Grid.for_kernel(config.domain, kernel.length_scale)


def _thread_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("GRFTAIL_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ConfigError(f"GRFTAIL_THREADS={env!r} is not an integer") from exc
        else:
            threads = min(8, os.cpu_count() or 1)
    return max(1, threads)


# ---------------------------------------------------------------------------
# Row computation
# ---------------------------------------------------------------------------


def _compute_row(config, kernel, mean, moments, grid, row_index, b,
                 do_approx=True, do_mc=True, do_is=None, do_count=None) -> ResultRow:
    do_is = config.is_n if do_is is None else do_is
    do_count = config.count_n if do_count is None else do_count
    query = TailQuery(kernel, mean, config.domain, config.sigma, b)
    r, rho = rho_diagnostic(kernel, config.domain)
    warnings: list[str] = []
    u = approx = laplace = None
    if do_approx:
        try:
            res = tail_integral_approx(query, moments=moments)
            u, approx = res.u, res.probability
            warnings.extend(w for w in res.warnings if w not in warnings)
            try:
                laplace = tail_laplace_approx(query, moments=moments).probability
            except NoInteriorMax:
                laplace = None
        except NoRoot:
            warnings.append("no_root")
    else:
        # u column reports the approximation's critical level where defined
        try:
            u = critical_level(query)
        except (NoRoot, UnsupportedAnisotropy):
            u = None
    if rho >= RHO_GUIDE and "small_domain" not in warnings:
        warnings.append("small_domain")

    mc_est = mc_se = None
    if do_mc:
        mc = crude_mc(query, grid, config.n, substream(config.seed, row_index, _TAG_CRUDE))
        mc_est, mc_se = mc.estimate, mc.std_error
    is_est = is_se = None
    if do_is:
        try:
            is_res = importance_sampling(
                query, grid, int(do_is), substream(config.seed, row_index, _TAG_IS)
            )
            is_est, is_se = is_res.estimate, is_res.std_error
        except NoRoot:
            if "no_root" not in warnings:
                warnings.append("no_root")
    count_est = count_se = None
    if do_count:
        cm = count_tail_mc(query, grid, int(do_count), substream(config.seed, row_index, _TAG_COUNT))
        count_est, count_se = cm.estimate, cm.std_error

    return ResultRow(
        b=b, u=u, rho=rho, approx=approx, approx_laplace=laplace,
        mc_estimate=mc_est, mc_se=mc_se, is_estimate=is_est, is_se=is_se,
        count_mc_estimate=count_est, count_mc_se=count_se,
        warnings=tuple(warnings),
    )


def compute_rows(config: ExperimentConfig, threads: int | None = None,
                 do_approx=True, do_mc=True, do_is=None, do_count=None) -> list[ResultRow]:
    kernel = build_kernel(config)
    mean = build_mean(config)
    moments = spectral_moments(kernel) if do_approx else None
    grid = build_grid(config, kernel)
    workers = _thread_count(threads)

    def task(item):
        i, b = item
        return _compute_row(config, kernel, mean, moments, grid, i, b,
                            do_approx=do_approx, do_mc=do_mc, do_is=do_is, do_count=do_count)

    items = list(enumerate(config.b_values))
    if workers == 1 or len(items) == 1:
        return [task(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, items))


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.16e}"


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            _fmt(row.b), _fmt(row.u), _fmt(row.rho), _fmt(row.approx),
            _fmt(row.approx_laplace), _fmt(row.mc_estimate), _fmt(row.mc_se),
            _fmt(row.is_estimate), _fmt(row.is_se), _fmt(row.count_mc_estimate),
            _fmt(row.count_mc_se), ";".join(row.warnings),
        ]))
    return "\n".join(lines) + "\n"


def write_csv(rows, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows), newline="\n")
    return path


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _resolve_out(config: ExperimentConfig, out_dir) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if config.out_dir is not None:
        return Path(config.out_dir)
    return Path(".")


def run_compare(config: ExperimentConfig, out_dir=None, threads=None,
                csv_name: str = "compare.csv") -> Path:
    """Approximation vs Monte Carlo (and optional IS / count MC) per b."""
    rows = compute_rows(config, threads=threads)
    return write_csv(rows, _resolve_out(config, out_dir) / csv_name)


def run_single_estimator(config: ExperimentConfig, which: str, out_dir=None,
                         threads=None) -> Path:
    """CSV for one column family: 'approx', 'mc', or 'is'."""
    flags = {
        "approx": dict(do_approx=True, do_mc=False, do_is=0, do_count=0),
        "mc": dict(do_approx=False, do_mc=True, do_is=0, do_count=0),
        "is": dict(do_approx=False, do_mc=False, do_is=config.is_n or config.n, do_count=0),
    }[which]
    rows = compute_rows(config, threads=threads, **flags)
    if which == "is" and all(row.is_estimate is None for row in rows):
        raise NoRoot("no threshold admits a critical level; importance sampling "
                     "has no Monte Carlo fallback")
    return write_csv(rows, _resolve_out(config, out_dir) / f"{which}.csv")


def _figure_b_grid(sigma: float, d: int, u_lo: float, u_hi: float, num: int = 8):
    """Geometric threshold grid spanning the MC-estimable tail range."""
    return tuple(float(x) for x in np.geomspace(
        threshold_function(u_lo, sigma, d), threshold_function(u_hi, sigma, d), num
    ))


FIGURE_PRESETS = {
    # Built-in study presets: C(t) = exp(-|t|^2/2), mu(t) = -|t|^2/4, sigma = 1,
    # n = 5000 crude-MC replications, domains [-A, A]^d for A = 1, 2, 3.
    "fig1": {
        "dim": 1,
        "half_widths": (1.0, 2.0, 3.0),
        "b": _figure_b_grid(1.0, 1, 2.0, 4.4),
        "n": 5000,
        "seed": 61,
    },
    "fig2": {
        "dim": 2,
        "half_widths": (1.0, 2.0, 3.0),
        "b": _figure_b_grid(1.0, 2, 2.0, 4.0),
        "n": 5000,
        "seed": 62,
    },
}


def figure_config(which: str, half_width: float, seed=None, n=None) -> ExperimentConfig:
    preset = FIGURE_PRESETS[which]
    dim = preset["dim"]
    return ExperimentConfig(
        kernel_spec=(("name", "squared_exponential"), ("length_scale", 1.0)),
        mean_spec=(("name", "quadratic"), ("coefficient", 0.25)),
        domain=Domain.symmetric(half_width, dim),
        sigma=1.0,
        b_values=preset["b"],
        n=int(n if n is not None else preset["n"]),
        seed=int(seed if seed is not None else preset["seed"]),
    )


def run_figure(which: str, out_dir=".", seed=None, n=None, svg: bool = False,
               threads=None) -> list[Path]:
    """Run one built-in figure preset family: one CSV per domain, plus an
    optional SVG overlay (approximation dashed, Monte Carlo solid)."""
    if which not in FIGURE_PRESETS:
        raise ConfigError(f"unknown figure {which!r}; choose from {sorted(FIGURE_PRESETS)}")
    preset = FIGURE_PRESETS[which]
    out = Path(out_dir)
    paths = []
    panels = []
    for half_width in preset["half_widths"]:
        config = figure_config(which, half_width, seed=seed, n=n)
        rows = compute_rows(config, threads=threads)
        label = f"A{int(half_width)}"
        paths.append(write_csv(rows, out / f"{which}_{label}.csv"))
        panels.append((f"T = [-{half_width:g}, {half_width:g}]^{preset['dim']}", rows))
    if svg:
        from .plotting import render_overlay

        out.mkdir(parents=True, exist_ok=True)
        fig_path = out / f"{which}.svg"
        render_overlay(panels, fig_path)
        paths.append(fig_path)
    return paths


def run_rho(config: ExperimentConfig) -> str:
    """Inscribed-ball diagnostic report for the configured kernel/domain."""
    kernel = build_kernel(config)
    r, rho = rho_diagnostic(kernel, config.domain)
    verdict = (
        "approximation recommended" if rho < RHO_GUIDE
        else "approximation not recommended (domain small relative to the correlation length)"
    )
    return (
        f"r(T) = {r:.6g}\n"
        f"rho(T) = {rho:.6g}\n"
        f"verdict: {verdict} (guide: rho < {RHO_GUIDE})\n"
    )


def run_pvalue(config: ExperimentConfig) -> str:
    """One-sided p-value P(N(T) > b) for an observed count b.

    Reports the closed-form approximation when the observed count lies in
    the asymptotic regime, a Monte Carlo confirmation when `count_n` is
    configured, and the rho(T) caveat either way.  Raises NoRoot when the
    count is below the asymptotic regime and no MC fallback is configured.
    """
    if len(config.b_values) != 1:
        raise ConfigError("pvalue expects exactly one observed count in 'b'")
    observed = config.b_values[0]
    if observed < 0 or observed != int(observed):
        raise ConfigError(f"observed count must be a nonnegative integer, got {observed}")
    observed = int(observed)

    kernel = build_kernel(config)
    mean = build_mean(config)
    grid = build_grid(config, kernel)
    r, rho = rho_diagnostic(kernel, config.domain)
    caveat = (
        f"rho(T) = {rho:.4g} "
        + ("< " if rho < RHO_GUIDE else ">= ")
        + f"{RHO_GUIDE}: approximation "
        + ("recommended" if rho < RHO_GUIDE else "not recommended")
    )

    lines = [f"observed count b = {observed}"]
    if observed == 0:
        lines.append("p-value = 1 (clamped; any count exceeds 0 with the trivial bound)")
        lines.append("warning: observed count below asymptotic regime")
    else:
        try:
            query = TailQuery(kernel, mean, config.domain, config.sigma, float(observed))
            res = tail_count_approx(query)
            lines.append(f"u = {res.u:.10g}")
            lines.append(f"approximate p-value = {res.clamped:.10g}")
            if res.probability > 1.0:
                lines.append(f"raw asymptotic value = {res.probability:.10g}")
            for w in res.warnings:
                lines.append(f"warning: {w}")
        except NoRoot:
            lines.append("observed count below asymptotic regime; "
                         "closed-form approximation unavailable")
            if not config.count_n:
                raise
    if config.count_n:
        # P(N > 0) needs a strictly positive threshold below 1 for the count
        threshold = float(observed) if observed > 0 else 1e-12
        query = TailQuery(kernel, mean, config.domain, config.sigma, threshold)
        mc = count_tail_mc(query, grid, config.count_n, substream(config.seed, 0, _TAG_COUNT))
        lines.append(
            f"mc p-value = {mc.estimate:.10g} +- {mc.std_error:.3g} (n={mc.n})"
        )
    lines.append(caveat)
    return "\n".join(lines) + "\n"
