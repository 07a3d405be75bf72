"""Pipeline configuration read from a plain ``key = value`` file."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .classifier import PersonalConfig
from .signal_prep import SegmentationConfig
from .swarm import MopsoConfig
from .wfdb_io import DEFAULT_AAMI_MAP

DEFAULT_CONFIG_PATH = Path(__file__).with_name("default.cfg")
TRANSFORM_MODES = ("none", "deterministic-linear", "deterministic-logit", "mopso")


class ConfigError(ValueError):
    pass


def _records(text: str) -> tuple[str, ...]:
    return tuple(r.strip() for r in text.replace("\n", ",").split(",") if r.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in _records(text))


@dataclass(frozen=True)
class PipelineConfig:
    data_dir: Path = Path("data/mitdb")
    out_dir: Path = Path("out")
    ds1: tuple[str, ...] = ()
    ds2: tuple[str, ...] = ()
    channel: str = "MLII"
    annotation_ext: str = "atr"
    s_w: int = 3
    n_s: int = 3
    pca_dim: int = 8
    k: int = 10
    alpha: float = 1.25
    init_window_s: float = 300.0
    window_s: float = 300.0
    alpha_sweep: tuple[float, ...] = (1.0, 1.25, 1.5, 2.0)
    transform_mode: str = "deterministic-logit"
    alpha_g: float = 1.0
    transform_candidates: int = 1024
    mopso_swarm: int = 50
    mopso_iterations: int = 100
    mopso_inertia: float = 0.7
    mopso_cognitive: float = 1.5
    mopso_social: float = 1.5
    mopso_archive: int = 100
    mopso_degree: int = 2
    mopso_beta: float | None = None
    window: int = 10
    seed: int = 0
    jobs: int = 1
    aami_map: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        overlap = set(self.ds1) & set(self.ds2)
        if overlap:
            raise ConfigError(f"records in both DS1 and DS2: {', '.join(sorted(overlap))}")
        if self.transform_mode not in TRANSFORM_MODES:
            raise ConfigError(f"transform_mode must be one of {', '.join(TRANSFORM_MODES)}")
        if self.alpha <= 0 or self.alpha_g <= 0:
            raise ConfigError("alpha and alpha_g must be positive")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not 1 <= self.n_s <= self.s_w:
            raise ConfigError("segmentation requires 1 <= n_s <= s_w")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(self.s_w, self.n_s)

    @property
    def personal(self) -> PersonalConfig:
        return PersonalConfig(self.alpha, self.init_window_s, self.window_s)

    @property
    def mopso(self) -> MopsoConfig:
        return MopsoConfig(self.mopso_swarm, self.mopso_iterations, self.mopso_inertia,
                           self.mopso_cognitive, self.mopso_social, self.mopso_archive, self.seed)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def fingerprint(self) -> dict:
        """Settings that change cached ingest output."""
        return {"channel": self.channel, "annotation_ext": self.annotation_ext,
                "s_w": self.s_w, "n_s": self.n_s, "aami_map": dict(sorted(self.aami_map.items()))}


_CONVERTERS = {
    "data_dir": Path, "out_dir": Path, "ds1": _records, "ds2": _records, "alpha_sweep": _floats,
    "mopso_beta": lambda v: float(v) if v.strip() else None,
}


def parse_config(text: str, base_dir: Path | None = None) -> PipelineConfig:
    """Parse ``key = value`` lines; unknown keys are an error.

    ``aami.<symbol> = <class>`` lines edit the beat-symbol grouping.
    Relative paths are resolved against ``base_dir`` when given.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[pipeline]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {f.name: f for f in fields(PipelineConfig)}
    values: dict = {}
    aami: dict[str, str] = {}
    for key, raw in parser.items("pipeline"):
        if key.startswith("aami."):
            aami[key[5:]] = raw.strip()
            continue
        if key not in known or key == "aami_map":
            raise ConfigError(f"unknown configuration key {key!r}")
        default = known[key].default
        try:
            if key in _CONVERTERS:
                values[key] = _CONVERTERS[key](raw)
            elif isinstance(default, bool):
                values[key] = raw.strip().lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                values[key] = int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            else:
                values[key] = raw.strip()
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if base_dir is not None:
        for key in ("data_dir", "out_dir"):
            if key in values and not values[key].is_absolute():
                values[key] = base_dir / values[key]
    values["aami_map"] = {**DEFAULT_AAMI_MAP, **aami}
    return PipelineConfig(**values)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    if path is None:
        return parse_config(DEFAULT_CONFIG_PATH.read_text())
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} not found")
    return parse_config(path.read_text(), base_dir=path.parent)
