"""JSON run configuration with validation at load time.

Layout (every section and key is optional; defaults are the desk run)::

    {
      "fom": {"n_u": 128, "n_t": 200, "x_min": -3.0, "x_max": 3.0,
              "t_max": 1.0, "viscosity": 0.02},
      "parameters": {"names": ["amplitude", "width"],
                     "lows": [0.7, 0.9], "highs": [0.9, 1.1], "counts": [11, 11]},
      "trainer": {... TrainerConfig fields ...},
      "initial_params": null,
      "output_dir": "run",
      "seed": 0
    }

``seed`` overrides ``trainer.seed``; ``initial_params`` null means the
corners of the parameter grid.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, StorageError
from .fom import ParameterGrid, SpaceTimeGrid, stable_dt
from .trainer import TrainerConfig

_FOM_KEYS = {"n_u", "n_t", "x_min", "x_max", "t_max", "viscosity"}
_PARAM_KEYS = {"names", "lows", "highs", "counts"}
_TOP_KEYS = {"fom", "parameters", "trainer", "initial_params", "output_dir", "seed"}


@dataclass
class RunConfig:
    grid: SpaceTimeGrid = field(default_factory=SpaceTimeGrid)
    viscosity: float = 0.02
    param_names: tuple = ("amplitude", "width")
    param_lows: tuple = (0.7, 0.9)
    param_highs: tuple = (0.9, 1.1)
    param_counts: tuple = (11, 11)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    initial_params: list = None
    output_dir: str = "run"

    def __post_init__(self):
        self.validate()

    @property
    def seed(self):
        return self.trainer.seed

    def param_grid(self):
        return ParameterGrid.uniform(self.param_lows, self.param_highs, self.param_counts,
                                     names=self.param_names)

    def starting_params(self):
        if self.initial_params is None:
            return self.param_grid().corners()
        return np.asarray(self.initial_params, dtype=np.float64)

    def validate(self):
        g = self.grid
        if g.n_u < 3:
            raise ConfigError("fom.n_u must be >= 3")
        if g.n_t < 3:
            raise ConfigError("fom.n_t must be >= 3")
        if not g.x_max > g.x_min:
            raise ConfigError("fom.x_max must exceed fom.x_min")
        if not g.t_max > 0:
            raise ConfigError("fom.t_max must be positive")
        if not self.viscosity > 0:
            raise ConfigError("fom.viscosity must be positive")
        dims = {len(self.param_names), len(self.param_lows), len(self.param_highs), len(self.param_counts)}
        if dims != {2}:
            raise ConfigError("parameters.names/lows/highs/counts must each have 2 entries (amplitude, width)")
        for lo, hi, n in zip(self.param_lows, self.param_highs, self.param_counts):
            if not hi >= lo:
                raise ConfigError("parameters.highs must be >= parameters.lows")
            if int(n) < 1:
                raise ConfigError("parameters.counts must be >= 1")
        if min(self.param_lows[1], self.param_highs[1]) <= 0:
            raise ConfigError("parameters.lows: width must be positive")
        # The largest |u0| over the box is the largest |amplitude|.
        a_max = max(abs(self.param_lows[0]), abs(self.param_highs[0]))
        if self.initial_params is not None:
            init = np.asarray(self.initial_params, dtype=np.float64)
            if init.ndim != 2 or init.shape[1] != 2 or init.shape[0] == 0:
                raise ConfigError("initial_params must be a non-empty list of [amplitude, width] pairs")
            if np.any(init[:, 1] <= 0):
                raise ConfigError("initial_params: width must be positive")
            a_max = max(a_max, float(np.max(np.abs(init[:, 0]))))
        limit = stable_dt(np.array([a_max]), g, self.viscosity)
        if g.dt > limit:
            raise ConfigError(f"fom.n_t: time step {g.dt:.3g} violates the CFL bound {limit:.3g}; "
                              f"increase n_t to at least {int(np.ceil(g.t_max / limit))}")

    def to_dict(self):
        trainer = asdict(self.trainer)
        trainer["hidden"] = list(trainer["hidden"])
        return {
            "fom": {"n_u": self.grid.n_u, "n_t": self.grid.n_t, "x_min": self.grid.x_min,
                    "x_max": self.grid.x_max, "t_max": self.grid.t_max, "viscosity": self.viscosity},
            "parameters": {"names": list(self.param_names), "lows": list(self.param_lows),
                           "highs": list(self.param_highs), "counts": list(self.param_counts)},
            "trainer": trainer,
            "initial_params": None if self.initial_params is None else np.asarray(self.initial_params).tolist(),
            "output_dir": self.output_dir,
            "seed": self.trainer.seed,
        }


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key {where}.{sorted(extra)[0]}" if where else f"unknown key {sorted(extra)[0]}")


def from_dict(raw):
    _check_keys(raw, _TOP_KEYS, "")
    fom_raw = raw.get("fom", {})
    _check_keys(fom_raw, _FOM_KEYS, "fom")
    par_raw = raw.get("parameters", {})
    _check_keys(par_raw, _PARAM_KEYS, "parameters")
    tr_raw = dict(raw.get("trainer", {}))
    _check_keys(tr_raw, {f.name for f in fields(TrainerConfig)}, "trainer")
    if "seed" in raw:
        tr_raw["seed"] = raw["seed"]
    try:
        fom_raw = dict(fom_raw)
        viscosity = float(fom_raw.pop("viscosity", 0.02))
        grid = SpaceTimeGrid(**fom_raw)
        trainer = TrainerConfig(**tr_raw)
    except ConfigError as exc:
        raise ConfigError(f"trainer.{exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fom: {exc}") from exc
    defaults = RunConfig.__dataclass_fields__
    return RunConfig(
        grid=grid,
        viscosity=viscosity,
        param_names=tuple(par_raw.get("names", defaults["param_names"].default)),
        param_lows=tuple(float(v) for v in par_raw.get("lows", defaults["param_lows"].default)),
        param_highs=tuple(float(v) for v in par_raw.get("highs", defaults["param_highs"].default)),
        param_counts=tuple(int(v) for v in par_raw.get("counts", defaults["param_counts"].default)),
        trainer=trainer,
        initial_params=raw.get("initial_params"),
        output_dir=str(raw.get("output_dir", "run")),
    )


def load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return from_dict(raw)
