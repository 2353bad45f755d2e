"""Run configurations stored as canonical JSON."""
import hashlib
import json
from dataclasses import asdict, dataclass, field

FAMILIES = ("shuffle", "federated", "adaptive", "diana", "sdm", "splitting")


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class RunConfig:
    """Everything needed to reproduce one solver run.

    Attributes
    ----------
    family : str
        Solver family, one of :data:`FAMILIES`.
    problem : dict
        ``kind`` plus generator parameters (see the README for the schema).
    solver : dict
        ``method`` plus hyperparameters.
    seed : int or None
        ``None`` defers to the CLI flag or the ``OPTLAB_SEED`` variable.
    budget : int
        Epochs or steps, depending on the family.
    ref_tol : float
        Tolerance of the reference solver.
    output : str or None
        Default CSV path.
    """

    family: str
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seed: int = None
    budget: int = 10
    ref_tol: float = 1e-12
    output: str = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        if not isinstance(self.problem, dict) or "kind" not in self.problem:
            raise ConfigError("config.problem must be an object with a 'kind' field")
        if not isinstance(self.solver, dict):
            raise ConfigError("config.solver must be an object")
        if not isinstance(self.budget, int) or isinstance(self.budget, bool) or self.budget < 0:
            raise ConfigError("config.budget must be a non-negative integer")
        if self.seed is not None and (not isinstance(self.seed, int) or not 0 <= self.seed < 2**64):
            raise ConfigError("config.seed must be an integer in [0, 2^64)")
        if not self.ref_tol > 0:
            raise ConfigError("config.ref_tol must be positive")

    def to_json(self):
        """Canonical JSON: sorted keys, no insignificant whitespace."""
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(extra))}")
        if "family" not in data:
            raise ConfigError("config is missing 'family'")
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]
