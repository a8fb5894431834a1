"""Run configuration: TOML parsing, validation and canonical serialization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np
import tomli
import tomli_w

from .bias import FIELD, NN, PAIRWISE, VARIANTS, EnergySpec, random_field, staggered_field, uniform_field
from .collision import ModelParams

P_GENERATORS = ("uniform", "staggered", "random")
FORMATS = ("csv", "json", "trajir")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    omega: float = 1.0
    kappa: float = 1.0
    psi0: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 0.0]])

    def params(self) -> ModelParams:
        return ModelParams(self.omega, self.kappa)

    def state(self) -> np.ndarray:
        return np.array([complex(re, im) for re, im in self.psi0])


@dataclass
class BiasConfig:
    name: str
    variant: str
    s: list
    p: object = "uniform"
    p_seed: int = 0
    q: list = field(default_factory=list)

    def field_vector(self, n: int) -> np.ndarray:
        if isinstance(self.p, str):
            if self.p == "uniform":
                return uniform_field(n)
            if self.p == "staggered":
                return staggered_field(n)
            return random_field(n, self.p_seed)
        return np.asarray(self.p, dtype=float)

    def coupling_matrix(self, n: int) -> np.ndarray:
        q = np.zeros((n, n))
        for i, j, value in self.q:
            q[int(i) - 1, int(j) - 1] = value
        return q

    def spec(self, n: int, s: float) -> EnergySpec:
        if self.variant == NN:
            return EnergySpec.nearest_neighbor(s)
        if self.variant == FIELD:
            return EnergySpec.field(self.field_vector(n), s)
        return EnergySpec.pairwise(self.field_vector(n), self.coupling_matrix(n), s)


@dataclass
class SamplingConfig:
    shots: int = 20000
    seed: int = 2023


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json", "trajir"])


@dataclass
class RunConfig:
    model: ModelConfig
    n: int
    biases: list
    sampling: SamplingConfig
    outputs: OutputConfig

    def to_dict(self) -> dict:
        return {
            "model": asdict(self.model),
            "trajectory": {"N": self.n},
            "bias": [_bias_dict(b) for b in self.biases],
            "sampling": asdict(self.sampling),
            "outputs": asdict(self.outputs),
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _bias_dict(b: BiasConfig) -> dict:
    d = asdict(b)
    if b.variant == NN:
        for key in ("p", "p_seed", "q"):
            del d[key]
    return d


def _get(table: dict, key: str, where: str, kind, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: missing required field")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _check_keys(table: dict, allowed: set, where: str) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def _floats(values, where: str) -> list:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{where}: expected a nonempty list of numbers")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: {v!r} is not a number")
        out.append(float(v))
    return out


def _parse_model(t: dict) -> ModelConfig:
    _check_keys(t, {"omega", "kappa", "psi0"}, "model")
    m = ModelConfig(
        _get(t, "omega", "model", float, 1.0),
        _get(t, "kappa", "model", float, 1.0),
    )
    if "psi0" in t:
        psi = t["psi0"]
        if not isinstance(psi, list) or len(psi) != 2:
            raise ConfigError("model.psi0: expected two [re, im] amplitudes")
        m.psi0 = [_floats(a, "model.psi0") for a in psi]
        if any(len(a) != 2 for a in m.psi0):
            raise ConfigError("model.psi0: each amplitude must be [re, im]")
    norm = np.linalg.norm(m.state())
    if abs(norm - 1.0) > 1e-12:
        raise ConfigError(f"model.psi0: state has norm {norm:.12g}, expected 1")
    if not (np.isfinite(m.omega) and np.isfinite(m.kappa)):
        raise ConfigError("model: omega and kappa must be finite")
    return m


def _parse_bias(t: dict, i: int, n: int) -> BiasConfig:
    where = f"bias[{i}]"
    _check_keys(t, {"name", "variant", "s", "p", "p_seed", "q"}, where)
    variant = _get(t, "variant", where, str, required=True)
    if variant not in VARIANTS:
        raise ConfigError(f"{where}.variant: must be one of {', '.join(VARIANTS)}")
    name = _get(t, "name", where, str, variant)
    if not name or any(c in name for c in "/\\ "):
        raise ConfigError(f"{where}.name: {name!r} is not a valid file-name fragment")
    s = _floats(t.get("s"), f"{where}.s")
    b = BiasConfig(name=name, variant=variant, s=s)
    if variant == NN:
        if n < 2:
            raise ConfigError(f"{where}: nearest-neighbour energy needs trajectory.N >= 2")
        b.p, b.q = "uniform", []
        if "p" in t or "q" in t:
            raise ConfigError(f"{where}: nn variant takes no p or q")
        return b
    p = t.get("p", "uniform")
    if isinstance(p, str):
        if p not in P_GENERATORS:
            raise ConfigError(f"{where}.p: generator must be one of {', '.join(P_GENERATORS)}")
        b.p = p
    else:
        b.p = _floats(p, f"{where}.p")
        if len(b.p) != n:
            raise ConfigError(f"{where}.p: has {len(b.p)} entries, trajectory.N is {n}")
    b.p_seed = _get(t, "p_seed", where, int, 0)
    q = t.get("q", [])
    if q and variant != PAIRWISE:
        raise ConfigError(f"{where}.q: only the pairwise variant takes couplings")
    entries = []
    for j, entry in enumerate(q):
        if not isinstance(entry, list) or len(entry) != 3:
            raise ConfigError(f"{where}.q[{j}]: expected [n, m, value]")
        nn_, mm, val = entry
        if not (isinstance(nn_, int) and isinstance(mm, int) and n >= nn_ > mm >= 1):
            raise ConfigError(f"{where}.q[{j}]: indices must satisfy N >= n > m >= 1")
        entries.append([nn_, mm, _floats([val], f"{where}.q[{j}]")[0]])
    b.q = entries
    return b


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    _check_keys(raw, {"model", "trajectory", "bias", "sampling", "outputs"}, "config")
    model = _parse_model(raw.get("model", {}))
    traj = raw.get("trajectory", {})
    _check_keys(traj, {"N"}, "trajectory")
    n = _get(traj, "N", "trajectory", int, 6)
    if not 1 <= n <= 20:
        raise ConfigError("trajectory.N: must be between 1 and 20")
    bias_tables = raw.get("bias")
    if bias_tables is None:
        raise ConfigError("bias: at least one [[bias]] table is required")
    if isinstance(bias_tables, dict):
        bias_tables = [bias_tables]
    biases = [_parse_bias(t, i, n) for i, t in enumerate(bias_tables)]
    names = [b.name for b in biases]
    if len(set(names)) != len(names):
        raise ConfigError("bias: names must be unique")
    samp = raw.get("sampling", {})
    _check_keys(samp, {"shots", "seed"}, "sampling")
    sampling = SamplingConfig(_get(samp, "shots", "sampling", int, 20000), _get(samp, "seed", "sampling", int, 2023))
    if sampling.shots < 1:
        raise ConfigError("sampling.shots: must be >= 1")
    out = raw.get("outputs", {})
    _check_keys(out, {"directory", "formats"}, "outputs")
    outputs = OutputConfig(_get(out, "directory", "outputs", str, "results"), list(out.get("formats", FORMATS)))
    bad = [f for f in outputs.formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"outputs.formats: unknown format(s) {', '.join(map(str, bad))}")
    return RunConfig(model, n, biases, sampling, outputs)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config_text() -> str:
    return resources.files("traj_thermo").joinpath("default_config.toml").read_text(encoding="utf-8")


def default_config() -> RunConfig:
    return parse_config(default_config_text())
