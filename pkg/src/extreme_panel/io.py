"""File formats: long-form panel CSV, model and simulation JSON configs,
and JSON fit reports with lossless float round-trips.

Reports serialize floats through repr, which Python guarantees to
round-trip exactly, so rereading a report reconstructs the numbers
bit for bit and rerunning a seeded command rewrites the identical file.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .em import EmFit, EmOptions, EmTrace
from .errors import ConfigError, ParseError
from .links import GroupCoefficients, LinkKind, LinkSpec
from .panel import FitResult, GroupAssignment, OptimOptions, PanelData
from .selection import SweepEntry, SweepResult
from .simulate import (
    CopulaSpec,
    DgpConfig,
    DgpGroupParams,
    StudyReplication,
    StudySummary,
)

MISSING_TOKENS = ("", "NA")
_MODES = ("gev-panel", "gp-panel")
_TRANSFORMS = ("none", "log")


@dataclass
class ModelConfig:
    """Declarative model description read from JSON.

    links maps parameter names (mu, sigma, xi) to link names; terms maps
    parameter names to covariate column names; transforms maps column
    names to "log" or "none".  p0 is the exceedance threshold probability,
    required in gp-panel mode.
    """

    mode: str = "gev-panel"
    links: dict = field(default_factory=lambda: {"mu": "identity", "sigma": "exp", "xi": "identity"})
    terms: dict = field(default_factory=lambda: {"mu": [], "sigma": [], "xi": []})
    transforms: dict = field(default_factory=dict)
    p0: float | None = None
    em: EmOptions = field(default_factory=EmOptions)
    g_max: int = 6

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        for par in ("mu", "sigma", "xi"):
            self.links.setdefault(par, "identity" if par != "sigma" else "exp")
            self.terms.setdefault(par, [])
            if self.links[par] not in ("identity", "exp"):
                raise ConfigError(f"unknown link {self.links[par]!r} for {par}")
        for col, transform in self.transforms.items():
            if transform not in _TRANSFORMS:
                raise ConfigError(
                    f"unknown transform {transform!r} for column {col!r}"
                )
        if self.mode == "gp-panel":
            if self.p0 is None:
                raise ConfigError("gp-panel mode requires p0")
            if not 0.0 < self.p0 < 1.0:
                raise ConfigError(f"p0 must lie strictly inside (0, 1), got {self.p0}")
        if self.g_max < 1:
            raise ConfigError("g_max must be >= 1")

    def link_spec(self, column_names) -> LinkSpec:
        """Resolve column names against a concrete panel's columns."""
        index = {name: j for j, name in enumerate(column_names)}

        def resolve(par):
            cols = []
            for name in self.terms[par]:
                if name not in index:
                    raise ConfigError(
                        f"model references unknown covariate {name!r}; "
                        f"data has {sorted(index)}"
                    )
                cols.append(index[name])
            return tuple(cols)

        if self.mode == "gp-panel" and self.terms["mu"]:
            raise ConfigError("gp-panel mode takes no mu terms")
        return LinkSpec(
            mu_link=LinkKind(self.links["mu"]),
            sigma_link=LinkKind(self.links["sigma"]),
            xi_link=LinkKind(self.links["xi"]),
            mu_terms=resolve("mu"),
            sigma_terms=resolve("sigma"),
            xi_terms=resolve("xi"),
        )

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "links": dict(self.links),
            "terms": {k: list(v) for k, v in self.terms.items()},
            "transforms": dict(self.transforms),
            "em": {
                "max_iterations": self.em.max_em_iterations,
                "restarts": self.em.n_restarts,
                "seed": self.em.seed,
                "tolerance": self.em.loglik_tolerance,
            },
            "g_max": self.g_max,
        }
        if self.p0 is not None:
            out["p0"] = self.p0
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        if not isinstance(raw, dict):
            raise ConfigError("model config must be a JSON object")
        em_raw = raw.get("em", {})
        em = EmOptions(
            max_em_iterations=int(em_raw.get("max_iterations", 100)),
            n_restarts=int(em_raw.get("restarts", 10)),
            seed=int(em_raw.get("seed", 0)),
            loglik_tolerance=float(em_raw.get("tolerance", 1e-6)),
        )
        return cls(
            mode=raw.get("mode", "gev-panel"),
            links=dict(raw.get("links", {})),
            terms={k: list(v) for k, v in raw.get("terms", {}).items()},
            transforms=dict(raw.get("transforms", {})),
            p0=raw.get("p0"),
            em=em,
            g_max=int(raw.get("g_max", 6)),
        )


def read_model_config(path) -> ModelConfig:
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return ModelConfig.from_dict(raw)


def write_model_config(config: ModelConfig, path):
    with open(path, "w") as handle:
        json.dump(config.to_dict(), handle, indent=2)
        handle.write("\n")


def read_panel_csv(path, config: ModelConfig | None = None) -> PanelData:
    """Long-form panel reader: columns id, time, y, then covariates.

    Missing responses are empty or NA cells; a fully absent (id, time)
    combination is also missing.  Individuals and periods are indexed
    densely in order of first appearance, and the original labels are kept
    on the returned panel.  Errors name the offending 1-based row.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:3] != ["id", "time", "y"]:
            raise ParseError(
                f"header must start with id,time,y; got {','.join(header[:3])}",
                row=1,
            )
        columns = header[3:]
        transforms = dict(config.transforms) if config is not None else {}
        for col in transforms:
            if col not in columns:
                raise ConfigError(f"transform references unknown column {col!r}")

        ids, times = {}, {}
        records = {}
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", row=row_number
                )
            id_key, time_key = row[0].strip(), row[1].strip()
            if not id_key or not time_key:
                raise ParseError("empty id or time field", row=row_number)
            i = ids.setdefault(id_key, len(ids))
            t = times.setdefault(time_key, len(times))
            if (i, t) in records:
                raise ParseError(
                    f"duplicate cell for id {id_key!r} at time {time_key!r}",
                    row=row_number,
                )
            y_text = row[2].strip()
            if y_text in MISSING_TOKENS:
                y_value = math.nan
            else:
                try:
                    y_value = float(y_text)
                except ValueError:
                    raise ParseError(
                        f"cannot parse y value {y_text!r}", row=row_number
                    ) from None
                if not math.isfinite(y_value):
                    raise ParseError(f"non-finite y value {y_text!r}", row=row_number)
            x_values = []
            for name, text in zip(columns, row[3:]):
                text = text.strip()
                try:
                    value = float(text)
                except ValueError:
                    raise ParseError(
                        f"cannot parse {name!r} value {text!r}", row=row_number
                    ) from None
                if transforms.get(name) == "log":
                    if value <= 0.0:
                        raise ParseError(
                            f"log transform of nonpositive {name!r} value {value!r}",
                            row=row_number,
                        )
                    value = math.log(value)
                if not math.isfinite(value):
                    raise ParseError(f"non-finite {name!r} value", row=row_number)
                x_values.append(value)
            records[(i, t)] = (y_value, x_values)

    if not records:
        raise ParseError(f"{path} contains a header but no data rows")
    n, t_count, k = len(ids), len(times), len(columns)
    y = np.full((n, t_count), np.nan)
    # Cells never listed in the file stay missing with NaN covariates.
    x = np.full((n, t_count, k), np.nan)
    missing = np.ones((n, t_count), dtype=bool)
    for (i, t), (y_value, x_values) in records.items():
        if math.isnan(y_value):
            missing[i, t] = True
            y[i, t] = np.nan
        else:
            missing[i, t] = False
            y[i, t] = y_value
        x[i, t] = x_values
    return PanelData(
        y=y,
        x=x,
        missing=missing,
        column_names=list(columns),
        individual_ids=list(ids),
        time_labels=list(times),
    )


def write_panel_csv(data: PanelData, path):
    """Inverse of read_panel_csv for fully labeled panels."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "time", "y"] + list(data.column_names))
        for i in range(data.n_individuals):
            for t in range(data.n_periods):
                x_row = data.x[i, t]
                if data.missing[i, t] and not np.all(np.isfinite(x_row)):
                    # A cell that never existed; omit the row entirely.
                    continue
                y_text = "" if data.missing[i, t] else repr(float(data.y[i, t]))
                writer.writerow(
                    [data.individual_ids[i], data.time_labels[t], y_text]
                    + [repr(float(v)) for v in x_row]
                )


def dgp_config_to_dict(config: DgpConfig) -> dict:
    copula = {"kind": config.copula.kind}
    if config.copula.kind == "gaussian":
        copula["rho"] = config.copula.rho
    if config.copula.kind == "gumbel":
        copula["alpha"] = config.copula.alpha
    return {
        "n_individuals": config.n_individuals,
        "n_periods": config.n_periods,
        "n_groups": config.n_groups,
        "seed": config.seed,
        "copula": copula,
        "group_params": [asdict(g) for g in config.groups],
        "covariates": {
            "omega": config.omega,
            "lambda": config.lam,
            "beta": config.beta,
            "nu_f": config.nu_f,
            "nu_i": config.nu_i,
        },
        "u_bounds": list(config.u_bounds),
    }


def dgp_config_from_dict(raw: dict) -> DgpConfig:
    if not isinstance(raw, dict):
        raise ConfigError("simulation config must be a JSON object")
    try:
        groups = tuple(DgpGroupParams(**g) for g in raw["group_params"])
    except KeyError:
        raise ConfigError("simulation config requires group_params") from None
    except TypeError as exc:
        raise ConfigError(f"bad group_params entry: {exc}") from None
    if "n_groups" in raw and int(raw["n_groups"]) != len(groups):
        raise ConfigError(
            f"n_groups is {raw['n_groups']} but {len(groups)} group_params were given"
        )
    cop_raw = raw.get("copula", {"kind": "independence"})
    copula = CopulaSpec(
        kind=cop_raw.get("kind", "independence"),
        rho=float(cop_raw.get("rho", 0.5)),
        alpha=float(cop_raw.get("alpha", 2.0)),
    )
    cov = raw.get("covariates", {})
    return DgpConfig(
        groups=groups,
        omega=float(cov.get("omega", -0.8)),
        lam=float(cov.get("lambda", 0.4)),
        beta=float(cov.get("beta", 0.8)),
        nu_f=float(cov.get("nu_f", 0.5)),
        nu_i=float(cov.get("nu_i", 0.5)),
        u_bounds=tuple(raw.get("u_bounds", (2.0, 6.0))),
        copula=copula,
        n_individuals=int(raw.get("n_individuals", 24)),
        n_periods=int(raw.get("n_periods", 50)),
        seed=int(raw.get("seed", 0)),
    )


def read_dgp_config(path) -> DgpConfig:
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return dgp_config_from_dict(raw)


def write_dgp_config(config: DgpConfig, path):
    with open(path, "w") as handle:
        json.dump(dgp_config_to_dict(config), handle, indent=2)
        handle.write("\n")


class _ReprFloat(float):
    """Float that serializes through repr for an exact round trip."""

    def __repr__(self):
        return float.__repr__(self)


def _jsonable(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _ReprFloat(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _trace_block(trace: EmTrace) -> dict:
    return {
        "loglik": trace.loglik,
        "assignment_changes": trace.assignment_changes,
        "reseeded_groups": [list(e) for e in trace.reseeded_groups],
        "fallback_individuals": [list(e) for e in trace.fallback_individuals],
        "chain_index": trace.chain_index,
        "converged": trace.converged,
    }


def _trace_from(raw: dict) -> EmTrace:
    return EmTrace(
        loglik=list(raw.get("loglik", [])),
        assignment_changes=list(raw.get("assignment_changes", [])),
        reseeded_groups=[tuple(e) for e in raw.get("reseeded_groups", [])],
        fallback_individuals=[tuple(e) for e in raw.get("fallback_individuals", [])],
        chain_index=int(raw.get("chain_index", 0)),
        converged=bool(raw.get("converged", False)),
    )


def _fit_block(result: FitResult, trace: EmTrace | None = None) -> dict:
    block = {
        "n_groups": result.n_groups,
        "loglik": result.loglik,
        "converged": result.converged,
        "n_iterations": result.n_iterations,
        "assignment": result.assignment.labels.tolist(),
        "groups": [
            {
                "kappa": c.kappa.tolist(),
                "gamma": c.gamma.tolist(),
                "delta": c.delta.tolist(),
                "std_errors": result.std_errors[g].tolist(),
                "covariance": result.covariance[g].tolist(),
            }
            for g, c in enumerate(result.coefficients)
        ],
        "diagnostics": list(result.diagnostics),
    }
    if trace is not None:
        block["trace"] = _trace_block(trace)
    return block


def _fit_from(raw: dict) -> tuple:
    groups = raw["groups"]
    coefficients = [
        GroupCoefficients(
            np.asarray(g["kappa"], dtype=float),
            np.asarray(g["gamma"], dtype=float),
            np.asarray(g["delta"], dtype=float),
        )
        for g in groups
    ]
    covariance = [np.asarray(g["covariance"], dtype=float) for g in groups]
    std_errors = [np.asarray(g["std_errors"], dtype=float) for g in groups]
    result = FitResult(
        coefficients=coefficients,
        assignment=GroupAssignment(
            np.asarray(raw["assignment"], dtype=int), int(raw["n_groups"])
        ),
        loglik=float(raw["loglik"]),
        covariance=covariance,
        std_errors=std_errors,
        n_iterations=int(raw["n_iterations"]),
        converged=bool(raw["converged"]),
        diagnostics=list(raw.get("diagnostics", [])),
    )
    trace = _trace_from(raw["trace"]) if "trace" in raw else None
    return result, trace


def _study_block(summary: StudySummary) -> dict:
    return {
        "n_replications": summary.n_replications,
        "n_failed": summary.n_failed,
        "target_groups": summary.config.n_groups,
        "g_max": summary.g_max,
        "select_fraction": summary.select_fraction,
        "g_star_counts": {str(k): v for k, v in summary.g_star_counts.items()},
        "mean_rand": summary.mean_rand,
        "median_mrae_by_g": {str(k): v for k, v in summary.median_mrae_by_g.items()},
        "median_mrae_selected": summary.median_mrae_selected,
        "replications": [
            {
                "g_star": r.g_star,
                "rand": r.rand,
                "mrae_by_g": {str(k): v for k, v in r.mrae_by_g.items()},
                "mrae_selected": r.mrae_selected,
            }
            for r in summary.replications
        ],
        "failures": list(summary.failures),
    }


@dataclass
class Report:
    """A reloaded fit report."""

    kind: str                       # "fit" | "sweep" | "study"
    version: str
    seed: int | None
    config: dict | None
    fit: FitResult | None = None
    trace: EmTrace | None = None
    sweep_entries: list = field(default_factory=list)   # (n_groups, bic, FitResult, trace)
    g_star: int | None = None
    sweep_failures: list = field(default_factory=list)
    study: dict | None = None


def write_fit_report(obj, path, config: ModelConfig | dict | None = None, seed=None):
    """Serialize a fit, sweep, or study outcome to JSON.

    Accepts an EmFit, FitResult, SweepResult, or StudySummary.  The file
    embeds the package version, the seed, and the configuration echo, and
    identical inputs write byte-identical files.
    """
    if isinstance(config, ModelConfig):
        config = config.to_dict()
    payload = {"version": __version__}
    payload["seed"] = seed
    payload["config"] = config
    if isinstance(obj, EmFit):
        payload["format"] = "fit"
        payload["fit"] = _fit_block(obj.result, obj.trace)
    elif isinstance(obj, FitResult):
        payload["format"] = "fit"
        payload["fit"] = _fit_block(obj)
    elif isinstance(obj, SweepResult):
        payload["format"] = "sweep"
        payload["sweep"] = {
            "g_star": obj.g_star,
            "bic_table": [
                {
                    "n_groups": e.n_groups,
                    "realized_groups": e.realized_groups,
                    "bic": e.bic,
                    "loglik": e.fit.result.loglik,
                    "converged": e.fit.result.converged,
                }
                for e in obj.entries
            ],
            "fits": [
                {"n_groups": e.n_groups, **_fit_block(e.fit.result, e.fit.trace)}
                for e in obj.entries
            ],
            "failures": [{"n_groups": g, "error": m} for g, m in obj.failures],
        }
    elif isinstance(obj, StudySummary):
        payload["format"] = "study"
        payload["config"] = dgp_config_to_dict(obj.config)
        payload["study"] = _study_block(obj)
    else:
        raise ConfigError(f"cannot serialize {type(obj).__name__} as a report")
    with open(path, "w") as handle:
        json.dump(_jsonable(payload), handle, indent=2)
        handle.write("\n")


def read_fit_report(path) -> Report:
    """Reload a report; numeric fields round-trip exactly."""
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    kind = raw.get("format")
    report = Report(
        kind=kind,
        version=raw.get("version", ""),
        seed=raw.get("seed"),
        config=raw.get("config"),
    )
    if kind == "fit":
        report.fit, report.trace = _fit_from(raw["fit"])
    elif kind == "sweep":
        sweep = raw["sweep"]
        report.g_star = int(sweep["g_star"])
        table = {e["n_groups"]: e["bic"] for e in sweep["bic_table"]}
        for fit_raw in sweep["fits"]:
            result, trace = _fit_from(fit_raw)
            report.sweep_entries.append(
                (int(fit_raw["n_groups"]), float(table[fit_raw["n_groups"]]), result, trace)
            )
        report.sweep_failures = [
            (int(f["n_groups"]), f["error"]) for f in sweep.get("failures", [])
        ]
    elif kind == "study":
        report.study = raw["study"]
    else:
        raise ParseError(f"unknown report format {kind!r} in {path}")
    return report
