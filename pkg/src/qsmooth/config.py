"""Scenario configuration: one JSON document with system/unravelling/run/outputs sections.

Complex matrices are written either as nested real lists or as
``{"re": [[...]], "im": [[...]]}``.  An unravelling can be given explicitly
(``{"M_o": ..., "M_u": ...}``) or through the homodyne shorthand
``{"homodyne": {"o": {"eta": [...], "theta": [...]}, "u": {...}}}``.

Parsing fills every default, so ``from_dict(cfg.to_dict()) == cfg``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidDimensionError, RejectedModelError
from .gaussian_linalg import check_uncertainty
from .model_builder import (
    LgqSystemSpec,
    UnravellingSpec,
    build_derived_model,
    fig1_bottom,
    fig1_top,
    homodyne_unravelling,
    preset_initial_state,
    validate_unravelling,
)

ESTIMATORS = ("quantum_rts", "quantum_mfp", "classical_rts")

PRESETS = {
    "fig1-top": {
        "builder": fig1_top,
        "g": 1.0,
        "description": "g=1; observed damping channel (eta=1, theta=pi/8), hidden position channel (eta=1, theta=0)",
    },
    "fig1-bottom": {
        "builder": fig1_bottom,
        "g": 0.1,
        "description": "g=0.1; observed position channel (eta=1, theta=0), hidden damping channel (eta=1, theta=pi/8)",
    },
}

_RUN_DEFAULTS = {"dt": 1e-4, "T": 2.0, "seed": 0}
_OUTPUT_DEFAULTS = {"csv": True, "report": True, "estimators": ["quantum_rts", "classical_rts"]}


def _matrix(value, path: str, complex_ok: bool = False) -> np.ndarray:
    try:
        if isinstance(value, dict):
            if not complex_ok:
                raise ConfigError(path, "expected a real matrix")
            unknown = set(value) - {"re", "im"}
            if unknown or "re" not in value:
                raise ConfigError(path, "complex matrix needs keys 're' and optionally 'im'")
            re = np.asarray(value["re"], dtype=float)
            im = np.asarray(value.get("im", np.zeros_like(re)), dtype=float)
            if re.shape != im.shape:
                raise ConfigError(path, f"'re' {re.shape} and 'im' {im.shape} shapes differ")
            out = re + 1j * im
        else:
            out = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, f"not a numeric matrix ({exc})") from None
    if out.ndim != 2:
        raise ConfigError(path, f"expected a 2-D matrix, got {out.ndim} dimension(s)")
    return out


def _encode(mat: np.ndarray):
    mat = np.asarray(mat)
    if np.iscomplexobj(mat):
        return {"re": mat.real.tolist(), "im": mat.imag.tolist()}
    return mat.tolist()


def _section(data: dict, key: str, required: bool = True) -> dict:
    if key not in data:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    sec = data[key]
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be an object")
    return sec


def _unknown(sec: dict, allowed, path: str):
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown field")


def _parse_system(sec: dict):
    if "preset" in sec:
        _unknown(sec, ("preset", "g"), "system")
        name = sec["preset"]
        if name not in PRESETS:
            raise ConfigError("system.preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        g = sec.get("g", PRESETS[name]["g"])
        if not isinstance(g, (int, float)) or isinstance(g, bool) or g <= 0:
            raise ConfigError("system.g", "must be a positive number")
        return {"preset": name, "g": float(g)}
    _unknown(sec, ("n_modes", "hbar", "G", "B"), "system")
    for key in ("n_modes", "G", "B"):
        if key not in sec:
            raise ConfigError(f"system.{key}", "missing field")
    n_modes = sec["n_modes"]
    if not isinstance(n_modes, int) or isinstance(n_modes, bool) or n_modes < 1:
        raise ConfigError("system.n_modes", "must be a positive integer")
    hbar = sec.get("hbar", 2.0)
    if not isinstance(hbar, (int, float)) or hbar <= 0:
        raise ConfigError("system.hbar", "must be a positive number")
    G = _matrix(sec["G"], "system.G")
    B = _matrix(sec["B"], "system.B", complex_ok=True)
    try:
        LgqSystemSpec(n_modes, float(hbar), G, B)
    except InvalidDimensionError as exc:
        raise ConfigError("system", str(exc)) from None
    return {"n_modes": n_modes, "hbar": float(hbar), "G": _encode(G), "B": _encode(B.astype(complex))}


def _parse_unravelling(sec: dict):
    if not sec:
        return {}
    if "homodyne" in sec:
        _unknown(sec, ("homodyne",), "unravelling")
        hom = sec["homodyne"]
        if not isinstance(hom, dict):
            raise ConfigError("unravelling.homodyne", "must be an object")
        _unknown(hom, ("o", "u"), "unravelling.homodyne")
        out = {}
        for r in ("o", "u"):
            path = f"unravelling.homodyne.{r}"
            if r not in hom or not isinstance(hom[r], dict):
                raise ConfigError(path, "missing observer entry")
            _unknown(hom[r], ("eta", "theta"), path)
            try:
                eta = [float(v) for v in hom[r]["eta"]]
                theta = [float(v) for v in hom[r].get("theta", [0.0] * len(eta))]
            except (KeyError, TypeError, ValueError):
                raise ConfigError(f"{path}.eta", "needs numeric lists 'eta' and optional 'theta'") from None
            if len(theta) != len(eta):
                raise ConfigError(f"{path}.theta", "must have one phase per channel")
            if any(e < 0 for e in eta):
                raise ConfigError(f"{path}.eta", "efficiencies must be non-negative")
            out[r] = {"eta": eta, "theta": theta}
        return {"homodyne": out}
    _unknown(sec, ("M_o", "M_u"), "unravelling")
    out = {}
    for key in ("M_o", "M_u"):
        if key not in sec:
            raise ConfigError(f"unravelling.{key}", "missing field")
        out[key] = _encode(_matrix(sec[key], f"unravelling.{key}", complex_ok=True).astype(complex))
    return out


def _vector(value, path):
    try:
        out = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "not numeric") from None
    if out.ndim != 1:
        raise ConfigError(path, "expected a vector")
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    system: dict
    unravelling: dict
    run: dict
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        _unknown(data, ("name", "system", "unravelling", "run", "outputs"), "<root>")
        system = _parse_system(_section(data, "system"))
        unravelling = _parse_unravelling(_section(data, "unravelling", required=False))
        if "preset" not in system and not unravelling:
            raise ConfigError("unravelling", "required for an explicit system")
        name = data.get("name", system.get("preset", "scenario"))
        if not isinstance(name, str) or not name or "/" in name:
            raise ConfigError("name", "must be a non-empty string without '/'")
        run = cls._parse_run(_section(data, "run", required=False), system)
        outputs = cls._parse_outputs(_section(data, "outputs", required=False), name)
        cfg = cls(name, system, unravelling, run, outputs)
        cfg.derived_model()  # every validator runs before anything is simulated
        return cfg

    @staticmethod
    def _parse_run(sec: dict, system: dict) -> dict:
        _unknown(sec, ("dt", "T", "seed", "x0", "V0"), "run")
        run = dict(_RUN_DEFAULTS)
        run.update({k: sec[k] for k in ("dt", "T", "seed") if k in sec})
        for key in ("dt", "T"):
            if not isinstance(run[key], (int, float)) or isinstance(run[key], bool) or run[key] <= 0:
                raise ConfigError(f"run.{key}", "must be a positive number")
            run[key] = float(run[key])
        if not isinstance(run["seed"], int) or isinstance(run["seed"], bool) or run["seed"] < 0:
            raise ConfigError("run.seed", "must be a non-negative integer")
        if run["T"] / run["dt"] < 1 or abs(run["T"] / run["dt"] - round(run["T"] / run["dt"])) > 1e-6:
            raise ConfigError("run.dt", "T must be a positive integer multiple of dt")
        if "preset" in system:
            x0, V0 = preset_initial_state(system["g"])
        else:
            dim = 2 * system["n_modes"]
            x0, V0 = np.zeros(dim), 0.5 * system["hbar"] * np.eye(dim)
        if "x0" in sec:
            x0 = _vector(sec["x0"], "run.x0")
        if "V0" in sec:
            V0 = _matrix(sec["V0"], "run.V0")
        run["x0"] = [float(v) for v in x0]
        run["V0"] = np.asarray(V0, dtype=float).tolist()
        return run

    @staticmethod
    def _parse_outputs(sec: dict, name: str) -> dict:
        _unknown(sec, ("directory", "csv", "report", "estimators"), "outputs")
        out = {"directory": sec.get("directory", f"runs/{name}")}
        for key in ("csv", "report"):
            val = sec.get(key, _OUTPUT_DEFAULTS[key])
            if not isinstance(val, bool):
                raise ConfigError(f"outputs.{key}", "must be true or false")
            out[key] = val
        est = sec.get("estimators", _OUTPUT_DEFAULTS["estimators"])
        if not isinstance(est, list) or any(e not in ESTIMATORS for e in est):
            raise ConfigError("outputs.estimators", f"must be a list drawn from {list(ESTIMATORS)}")
        out["estimators"] = [e for e in ESTIMATORS if e in est]
        if not isinstance(out["directory"], str) or not out["directory"]:
            raise ConfigError("outputs.directory", "must be a non-empty path")
        return out

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def preset(cls, name: str, **run) -> "ScenarioConfig":
        return cls.from_dict({"system": {"preset": name}, "run": run})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system,
            "unravelling": self.unravelling,
            "run": self.run,
            "outputs": self.outputs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_g(self, g: float) -> "ScenarioConfig":
        """Same preset scenario at a different squeezing parameter, with its matching initial state."""
        if "preset" not in self.system:
            raise ConfigError("system.preset", "a g-sweep needs a preset system")
        data = self.to_dict()
        data["system"] = {"preset": self.system["preset"], "g": float(g)}
        data["run"] = {k: self.run[k] for k in ("dt", "T", "seed")}
        return ScenarioConfig.from_dict(data)

    def specs(self):
        """``(LgqSystemSpec, UnravellingSpec)`` after expanding presets and shorthand."""
        sys_sec = self.system
        if "preset" in sys_sec:
            sys, unr = PRESETS[sys_sec["preset"]]["builder"](sys_sec["g"])
        else:
            sys = LgqSystemSpec(sys_sec["n_modes"], sys_sec["hbar"], _matrix(sys_sec["G"], "system.G"),
                                _matrix(sys_sec["B"], "system.B", complex_ok=True))
            unr = None
        if self.unravelling:
            if "homodyne" in self.unravelling:
                h = self.unravelling["homodyne"]
                unr = UnravellingSpec(homodyne_unravelling(h["o"]["eta"], h["o"]["theta"]),
                                      homodyne_unravelling(h["u"]["eta"], h["u"]["theta"]))
            else:
                unr = UnravellingSpec(_matrix(self.unravelling["M_o"], "unravelling.M_o", True),
                                      _matrix(self.unravelling["M_u"], "unravelling.M_u", True))
        K = sys.n_channels
        if unr.M_o.shape != (K, K) or unr.M_u.shape != (K, K):
            raise ConfigError("unravelling", f"need {K}x{K} unravelling matrices for {K} channels")
        return sys, unr

    def derived_model(self):
        sys, unr = self.specs()
        report = validate_unravelling(unr)
        if not report.ok:
            raise ConfigError("unravelling", str(RejectedModelError(report)))
        model = build_derived_model(sys, unr)
        x0, V0 = self.initial_state()
        if x0.size != model.dim:
            raise ConfigError("run.x0", f"expected length {model.dim}")
        if V0.shape != (model.dim, model.dim):
            raise ConfigError("run.V0", f"expected shape ({model.dim}, {model.dim})")
        if not check_uncertainty(V0, model.hbar):
            raise ConfigError("run.V0", "violates the uncertainty relation")
        return model

    def initial_state(self):
        return np.asarray(self.run["x0"], dtype=float), np.asarray(self.run["V0"], dtype=float)
