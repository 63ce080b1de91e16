"""
Run configuration: flat ``dotted.key = value`` text with ``#`` comments.

Unknown keys are rejected, values are converted to the type of the default
and range-checked.  Lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError

PRESETS = ("equilibrium", "breathing", "uniform_rest", "shear")
GRAVITY_CHOICES = ("paper", "attractive", "off")


@dataclass
class SimConfig:
    """All scalar parameters of a run; attribute names are the dotted keys with '_'."""

    grid_n_r: int = 24
    grid_l_max: int = 8
    grid_chart: int = 96
    basis_l_max: int = 8
    basis_n_max: int = 10
    eos_K: float = 20.0
    eos_rho_bar: float = 1.0
    smoothing_eps: float = 0.1
    smoothing_radial_filter: float = 0.3
    smoothing_eps_sweep: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    gravity_sign: str = "paper"
    gravity_method: str = "auto"
    run_T_window: float = 0.1
    run_dt: float = 0.005
    run_T_total: float = 0.1
    picard_tol: float = 1e-9
    picard_max_iter: int = 12
    picard_adaptive: bool = False
    preset_name: str = "uniform_rest"
    preset_amplitude: float = 0.02
    output_dir: str = "out"
    output_checkpoints: bool = True
    seed: int = 0

    @classmethod
    def keys(cls) -> dict:
        return {_dotted(f.name): f.name for f in fields(cls)}

    def validate(self) -> "SimConfig":
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(f"{key}: {msg}")

        need(self.grid_n_r >= 8, "grid.n_r", "must be >= 8")
        need(self.grid_l_max >= 2, "grid.l_max", "must be >= 2")
        need(self.grid_chart >= 8, "grid.chart", "must be >= 8")
        need(self.basis_l_max >= 0, "basis.l_max", "must be >= 0")
        need(self.basis_n_max >= 1, "basis.n_max", "must be >= 1")
        need(self.eos_K > 0, "eos.K", "must be positive")
        need(self.eos_rho_bar > 0, "eos.rho_bar", "must be positive")
        need(0 < self.smoothing_eps < 1, "smoothing.eps", "must lie in (0, 1)")
        need(0 <= self.smoothing_radial_filter < 1, "smoothing.radial_filter", "must lie in [0, 1)")
        need(len(self.smoothing_eps_sweep) > 0 and all(0 < e < 1 for e in self.smoothing_eps_sweep),
             "smoothing.eps_sweep", "entries must lie in (0, 1)")
        need(self.gravity_sign in GRAVITY_CHOICES, "gravity.sign", f"one of {GRAVITY_CHOICES}")
        need(self.gravity_method in ("auto", "series", "pairsum"), "gravity.method",
             "one of auto, series, pairsum")
        need(self.run_T_window > 0, "run.T_window", "must be positive")
        need(self.run_dt > 0, "run.dt", "must be positive")
        need(self.run_T_total >= 0, "run.T_total", "must be nonnegative")
        n = self.run_T_window / self.run_dt
        need(abs(n - round(n)) < 1e-9 * n, "run.dt", "must divide run.T_window")
        m = self.run_T_total / self.run_T_window
        need(abs(m - round(m)) < 1e-9 * max(m, 1.0), "run.T_total",
             "must be a multiple of run.T_window")
        need(self.picard_tol > 0, "picard.tol", "must be positive")
        need(self.picard_max_iter >= 1, "picard.max_iter", "must be >= 1")
        need(self.preset_name in PRESETS, "preset.name", f"one of {PRESETS}")
        need(self.preset_amplitude >= 0, "preset.amplitude", "must be nonnegative")
        if self.preset_name in ("equilibrium", "breathing"):
            need(self.gravity_sign == "attractive", "gravity.sign",
                 f"preset {self.preset_name!r} needs the attractive sign (no bound equilibrium "
                 "exists otherwise)")
        return self

    def to_dict(self) -> dict:
        return {_dotted(f.name): getattr(self, f.name) for f in fields(self)}


def _dotted(name: str) -> str:
    head, _, tail = name.partition("_")
    return f"{head}.{tail}" if tail and head != "seed" else name


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(v) for v in raw.replace("{", "").replace("}", "").split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, overrides: dict | None = None) -> SimConfig:
    """Parse configuration text; ``overrides`` maps dotted keys to raw strings."""
    cfg = SimConfig()
    names = SimConfig.keys()
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        items.append((key.strip(), raw.strip()))
    items += list((overrides or {}).items())
    for key, raw in items:
        if key not in names:
            raise ConfigError(f"{key}: unknown key")
        attr = names[key]
        setattr(cfg, attr, _convert(key, str(raw), getattr(SimConfig(), attr)))
    return cfg.validate()


def parse_config(path=None, overrides: dict | None = None) -> SimConfig:
    """Read a configuration file (None gives the defaults)."""
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides)
