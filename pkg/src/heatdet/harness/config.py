"""Run configuration: defaults, key-value files, CLI overrides and digests."""
import dataclasses
import hashlib
from dataclasses import dataclass, fields

TOGGLES = ("lsconv", "mohfe", "hqr")


class ConfigFileError(ValueError):
    pass


@dataclass
class RunConfig:
    lam: float = 0.75
    tau: float = 0.5
    decoder_depth: int = 3
    encoder_depth: int = 1
    query_budget: int = 20
    lsconv_enabled: bool = True
    mohfe_enabled: bool = True
    hqr_enabled: bool = True
    huber_delta: float = 1.0
    class_head: str = "balanced"
    box_head: str = "mlp"
    bounded_features: bool = True
    continuity_weight: float = 0.1
    seed: int = 0
    epochs: int = 12
    learning_rate: float = 2e-3
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    image_size: int = 64
    classes: int = 3
    width: int = 32
    heads: int = 4
    points: int = 4
    batch_size: int = 8
    train_size: int = 500
    test_size: int = 100
    difficulty: str = "normal"
    max_steps: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.decoder_depth < 0 or self.encoder_depth < 1:
            raise ValueError("decoder depth must be >= 0 and encoder depth >= 1")
        if self.image_size % 4:
            raise ValueError(f"image size must be a multiple of 4, got {self.image_size}")
        if self.query_budget < 1:
            raise ValueError("query budget must be positive")
        if self.class_head not in ("balanced", "quadratic", "mlp"):
            raise ValueError(f"class head must be balanced, quadratic or mlp, got {self.class_head!r}")
        if self.box_head not in ("quadratic", "mlp"):
            raise ValueError(f"box head must be quadratic or mlp, got {self.box_head!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr schedule must be constant or cosine, got {self.lr_schedule!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def canonical_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in sorted(fields(self), key=lambda f: f.name))

    def digest(self):
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def toggles(self):
        return {name: getattr(self, f"{name}_enabled") for name in TOGGLES}


ALIASES = {"lambda": "lam", "depth": "decoder_depth", "queries": "query_budget", "lr": "learning_rate"}
for _t in TOGGLES:
    ALIASES[_t] = f"{_t}_enabled"


def _format(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types():
    return {f.name: f.type for f in fields(RunConfig)}


def parse_value(key, text):
    kind = _field_types()[key]
    text = text.strip()
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ConfigFileError(f"{key}: expected on/off, got {text!r}")
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError as exc:
        raise ConfigFileError(f"{key}: {exc}") from None
    return text


def canonical_key(key):
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _field_types():
        raise ConfigFileError(f"unknown config key {key!r}")
    return key


def parse_config_text(text, source="<text>"):
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        try:
            key = canonical_key(key)
        except ConfigFileError as exc:
            raise ConfigFileError(f"{source}:{n}: {exc}") from None
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update(overrides or {})
    return RunConfig(**values)


def write_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# digest {cfg.digest()}\n")
        fh.write(cfg.canonical_text())
