"""Run configuration: JSON file, schema validation and construction of model objects.

Names are 1-based in files and 0-based in code. Scenario labels such as
``"{1,3}"`` are accepted wherever a scenario is keyed.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .contagion import Coefficient, ContagionAssetSpec, StrategyFamily
from .errors import AdmissibilityError, ConfigurationError, MultiDefaultError
from .hazards import HazardCurve
from .law import DefaultLawModel, FactorChain, FiltrationState
from .optimizer import OptimizerSettings, Utility, check_reducible
from .pricing import DecomposedPayoff
from .scenarios import NameSet, ScenarioState

SCHEMA_VERSION = 1
DEFAULT_SEED = 2026
_LABEL = re.compile(r"^\{\s*(\d+(\s*,\s*\d+)*)?\s*\}$")


def load_schema() -> dict:
    return json.loads(resources.files("multidefault").joinpath("schema/config.schema.json").read_text())


def fixture_path(name: str) -> Path:
    """Path of a configuration shipped with the package."""
    return Path(str(resources.files("multidefault").joinpath(f"fixtures/{name}")))


def parse_label(label: str, n: int) -> NameSet:
    m = _LABEL.match(label.strip())
    if not m:
        raise ConfigurationError(f"scenario label {label!r} must look like '{{}}' or '{{1,3}}'")
    names = [int(x) for x in re.findall(r"\d+", label)]
    return names_to_set(names, n, f"scenario {label}")


def names_to_set(names, n: int, where: str) -> NameSet:
    bad = [k for k in names if not 1 <= k <= n]
    if bad:
        raise ConfigurationError(f"{where}: names {bad} are outside 1..{n}")
    return NameSet.of(n, [k - 1 for k in names])


@dataclass(frozen=True)
class Product:
    kind: str
    T: float
    params: dict = field(default_factory=dict)

    def describe(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in sorted(self.params.items()) if k != "table")
        return f"{self.kind}({args}{', ' if args else ''}T={self.T})"


@dataclass(frozen=True)
class VerifySettings:
    paths: int = 1_000_000
    families: int = 20
    family_paths: int = 200_000
    exact_shares: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration plus the objects built from it."""

    raw: dict = field(repr=False)
    sha256: str
    seed: int
    model: DefaultLawModel | None
    products: tuple[Product, ...]
    state: ScenarioState | None
    filtration: FiltrationState | None
    assets: ContagionAssetSpec | None
    s0: np.ndarray | None
    utility: Utility
    optimizer: OptimizerSettings
    opt_T: float
    opt_x0: float
    verify: VerifySettings | None
    sim: dict
    numerics: dict
    validate: dict
    out_dir: str
    path: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        from dataclasses import replace

        return replace(self, seed=int(seed), optimizer=replace(self.optimizer, seed=int(seed)))

    def require(self, *parts: str) -> None:
        for p in parts:
            if getattr(self, p) is None:
                raise ConfigurationError(f"this command needs a '{p}' section")


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _where(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def validate_schema(raw: Any) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = list(validator.iter_errors(raw))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        raise ConfigurationError(f"config invalid at {_where(best)}: {best.message}")


def _hazard(spec, i: int) -> HazardCurve:
    try:
        if isinstance(spec, (int, float)):
            return HazardCurve.constant(float(spec))
        return HazardCurve.from_segments([(e, r) for e, r in spec])
    except ConfigurationError as e:
        raise ConfigurationError(f"model.hazards[{i}]: {e}") from None


def build_model(d: dict) -> DefaultLawModel:
    hazards = [_hazard(h, i) for i, h in enumerate(d["hazards"])]
    n = len(hazards)
    variant = d["variant"]
    cop = d.get("copula", {})
    kind = cop.get("kind", variant if variant != "factor_scaled" else "independent")
    if variant != "factor_scaled" and kind != variant:
        raise ConfigurationError(f"model.copula.kind {kind!r} contradicts model.variant {variant!r}")
    kw = {"horizon": float(d["horizon"])} if "horizon" in d else {}
    if kind == "independent":
        if set(cop) - {"kind"}:
            raise ConfigurationError("model.copula: the independence copula takes no parameters")
        model = DefaultLawModel.independent(hazards, **kw)
    elif kind == "clayton":
        if "theta" not in cop:
            raise ConfigurationError("model.copula.theta is required for the Clayton copula")
        model = DefaultLawModel.clayton(hazards, float(cop["theta"]), **kw)
    else:
        if ("rho" in cop) == ("correlation" in cop):
            raise ConfigurationError("model.copula needs exactly one of 'rho' or 'correlation' for the Gaussian copula")
        if "rho" in cop:
            corr = np.full((n, n), float(cop["rho"]))
            np.fill_diagonal(corr, 1.0)
        else:
            corr = np.asarray(cop["correlation"], dtype=float)
            if corr.shape != (n, n):
                raise ConfigurationError(f"model.copula.correlation must be {n}x{n}")
        model = DefaultLawModel.gaussian(hazards, corr, **kw)
    if variant == "factor_scaled":
        if "factor" not in d:
            raise ConfigurationError("model.factor is required for the factor_scaled variant")
        f = d["factor"]
        model = model.factor_scaled(FactorChain(tuple(f["z"]), tuple(f["p"]), float(f["reveal_time"])))
    elif "factor" in d:
        raise ConfigurationError("model.factor is only allowed with variant 'factor_scaled'")
    return model


def build_product(d: dict, n: int, i: int) -> Product:
    kind = d["type"]
    params = {k: v for k, v in d.items() if k not in ("type", "T")}
    if kind == "kth" and not 1 <= params["k"] <= n:
        raise ConfigurationError(f"products[{i}].k must lie in 1..{n}")
    if kind == "tranche" and params["a"] > params["b"]:
        raise ConfigurationError(f"products[{i}]: tranche attachment a must not exceed detachment b")
    if kind == "custom":
        for label in params["table"]:
            if label != "default":
                parse_label(label, n)
    return Product(kind, float(d["T"]), params)


def custom_payoff(product: Product, n: int) -> DecomposedPayoff:
    table = product.params["table"]
    fill = float(table.get("default", 0.0))
    entries = {b: fill for b in range(1 << n)}
    for label, v in table.items():
        if label != "default":
            entries[parse_label(label, n).bits] = float(v)
    return DecomposedPayoff(n, product.T, entries, cap=max(1.0, max(entries.values())))


def build_state(d: dict, model: DefaultLawModel) -> tuple[ScenarioState, FiltrationState]:
    n = model.n
    t = float(d.get("t", 0.0))
    names = d.get("defaulted", [])
    times = d.get("default_times", [])
    if len(names) != len(times):
        raise ConfigurationError("observation.defaulted and observation.default_times must have equal length")
    I = names_to_set(names, n, "observation.defaulted")
    order = sorted(range(len(names)), key=lambda j: names[j])
    state = ScenarioState(I, tuple(float(times[j]) for j in order), t)
    fac = d.get("factor")
    fs = FiltrationState(t, fac)
    model.check_state(fs)
    return state, fs


def _coefficient(c, shape, where: str, n: int) -> Coefficient:
    if isinstance(c, list):
        c = {"base": c}
    try:
        base = np.asarray(c["base"], dtype=float)
        latest = np.asarray(c["latest"], dtype=float) if "latest" in c else None
        by_name = {}
        for k, v in c.get("by_name", {}).items():
            if not k.isdigit() or not 1 <= int(k) <= n:
                raise ConfigurationError(f"{where}.by_name key {k!r} is not a name in 1..{n}")
            by_name[int(k) - 1] = np.asarray(v, dtype=float)
    except ValueError:
        raise ConfigurationError(f"{where}: coefficients must be rectangular numeric arrays") from None
    if base.shape != shape:
        raise ConfigurationError(f"{where} must have shape {shape}, got {base.shape}")
    try:
        return Coefficient(base, latest, by_name)
    except ConfigurationError as e:
        raise ConfigurationError(f"{where}: {e}") from None


def _coefficient_table(d: dict, shape, where: str, n: int) -> dict[int, Coefficient]:
    default = _coefficient(d["default"], shape, f"{where}.default", n)
    table = {b: default for b in range(1 << n)}
    for label, c in d.get("scenarios", {}).items():
        table[parse_label(label, n).bits] = _coefficient(c, shape, f"{where}.scenarios[{label}]", n)
    return table


def build_assets(d: dict, n: int) -> tuple[ContagionAssetSpec, np.ndarray]:
    drift_default = d["drift"]["default"]
    base = drift_default if isinstance(drift_default, list) else drift_default["base"]
    N = len(base)
    drift = _coefficient_table(d["drift"], (N,), "assets.drift", n)
    vol = _coefficient_table(d["vol"], (N, N), "assets.vol", n)
    g = d.get("gamma", {})
    gd = np.asarray(g.get("default", [0.0] * N), dtype=float)
    rows = gd if gd.ndim == 2 else np.tile(gd, (n, 1))
    if rows.shape != (n, N):
        raise ConfigurationError(f"assets.gamma.default must have {N} entries or shape ({n}, {N})")
    gamma = {(J, k): rows[k].copy() for J in range((1 << n) - 1) for k in range(n) if not J >> k & 1}
    for j, o in enumerate(g.get("overrides", [])):
        J = names_to_set(o["scenario"], n, f"assets.gamma.overrides[{j}].scenario")
        k = o["name"] - 1
        if not 0 <= k < n or k in J:
            raise ConfigurationError(f"assets.gamma.overrides[{j}].name must be a surviving name of the scenario")
        vec = np.asarray(o["gamma"], dtype=float)
        if vec.shape != (N,):
            raise ConfigurationError(f"assets.gamma.overrides[{j}].gamma must have {N} entries")
        gamma[(J.bits, k)] = vec
    try:
        spec = ContagionAssetSpec(n, N, drift, vol, gamma)
    except AdmissibilityError as e:
        raise AdmissibilityError(
            f"assets.gamma: {e}. Admissible strategies need pi.gamma < 1 at every potential default, "
            "which no position satisfies once a jump fraction reaches 1",
            scenario=e.scenario,
            name=e.name,
            value=e.value,
        ) from None
    s0 = np.asarray(d.get("s0", [1.0] * N), dtype=float)
    if s0.shape != (N,):
        raise ConfigurationError(f"assets.s0 must have {N} entries")
    return spec, s0


def build_strategy(d, spec: ContagionAssetSpec, T: float) -> StrategyFamily | str:
    if d is None or d == "zero":
        return StrategyFamily.zero(spec.n, spec.N, T)
    if d == "optimal":
        return "optimal"
    n, N = spec.n, spec.N
    default = np.asarray(d["default"], dtype=float)
    if default.shape != (N,):
        raise ConfigurationError(f"simulation.strategy.default must have {N} entries")
    table = {b: default for b in range(1 << n)}
    for label, v in d.get("scenarios", {}).items():
        vec = np.asarray(v, dtype=float)
        if vec.shape != (N,):
            raise ConfigurationError(f"simulation.strategy.scenarios[{label}] must have {N} entries")
        table[parse_label(label, n).bits] = vec
    return StrategyFamily.constant(n, T, table)


def from_dict(raw: dict, path: str | None = None) -> RunConfig:
    validate_schema(raw)
    seed = int(raw.get("seed", DEFAULT_SEED))
    model = build_model(raw["model"]) if "model" in raw else None
    n = model.n if model is not None else None
    products = ()
    state = fs = None
    if raw.get("products"):
        if model is None:
            raise ConfigurationError("products need a model section")
        products = tuple(build_product(p, n, i) for i, p in enumerate(raw["products"]))
    if model is not None:
        state, fs = build_state(raw.get("observation", {}), model)
        for i, p in enumerate(products):
            if p.T < state.t:
                raise ConfigurationError(f"products[{i}] matures before the observation time")
    assets = s0 = None
    if "assets" in raw:
        if model is None:
            raise ConfigurationError("assets need a model section for the number of names")
        assets, s0 = build_assets(raw["assets"], n)
    utility = Utility(float(raw.get("utility", {}).get("risk_aversion", 2.0)))
    o = dict(raw.get("optimizer", {}))
    verify = o.pop("verify", {})
    opt_T = float(o.pop("T", 1.0))
    opt_x0 = float(o.pop("x0", 1.0))
    settings = OptimizerSettings(seed=seed, **o)
    if "optimizer" in raw:
        if assets is None:
            raise ConfigurationError("optimizer needs an assets section")
        check_reducible(model, assets)
        if opt_T > model.horizon:
            raise ConfigurationError("optimizer.T exceeds the model horizon")
    sim = {"T": 1.0, "x0": 1.0, "paths": 10, "dt": 0.01, "strategy": "zero"}
    sim.update(raw.get("simulation", {}))
    if "simulation" in raw and assets is not None and sim["strategy"] != "optimal":
        build_strategy(sim["strategy"], assets, float(sim["T"]))
    numerics = {"quad_nodes": 32, "mc_paths": 0, "bins": 8}
    numerics.update(raw.get("numerics", {}))
    if 0 < numerics["mc_paths"] < 1000:
        raise ConfigurationError("numerics.mc_paths must be 0 or at least 1000")
    validate = {"scale": "full", "criteria": list(range(1, 9))}
    validate.update(raw.get("validate", {}))
    return RunConfig(
        raw=raw,
        sha256=config_hash(raw),
        seed=seed,
        model=model,
        products=products,
        state=state,
        filtration=fs,
        assets=assets,
        s0=s0,
        utility=utility,
        optimizer=settings,
        opt_T=opt_T,
        opt_x0=opt_x0,
        verify=None if verify is None else VerifySettings(**verify),
        sim=sim,
        numerics=numerics,
        validate=validate,
        out_dir=raw.get("output", {}).get("dir", "out"),
        path=path,
    )


def load_config(path) -> RunConfig:
    """Read, parse and validate a configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {p}: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{p}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        return from_dict(raw, str(p))
    except MultiDefaultError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigurationError(f"{p}: {e}") from None
