import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

from src.errors import InvalidShape, ShapeMismatch

# Set up logging
logger = logging.getLogger(__name__)


def setup_logging(settings: Dict) -> None:
    """Configure the root logger from the 'logging' settings section"""
    log_cfg = settings.get('logging', {})
    level = getattr(logging, str(log_cfg.get('level', 'INFO')).upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format=log_cfg.get('format', '%(asctime)s - %(name)s - %(levelname)s - %(message)s'),
        force=True,
    )


def _name_key(name: str) -> int:
    # Stable across interpreter runs (unlike hash()).
    return int.from_bytes(hashlib.sha256(name.encode('utf-8')).digest()[:4], 'little')


@dataclass(frozen=True)
class SeedStream:
    """Counter-based, name-splittable random stream.

    A stream is a 64-bit root seed plus the path of child names that led to it.
    Identical (seed, path) pairs always produce bit-identical generators.
    """

    seed: int
    path: Tuple[str, ...] = field(default_factory=tuple)

    def child(self, name: Union[str, int]) -> 'SeedStream':
        return SeedStream(self.seed, self.path + (str(name),))

    def children(self, prefix: str, count: int) -> List['SeedStream']:
        return [self.child(f"{prefix}{i}") for i in range(count)]

    def seed_sequence(self) -> np.random.SeedSequence:
        key = tuple(_name_key(p) for p in self.path)
        return np.random.SeedSequence(entropy=self.seed & ((1 << 64) - 1), spawn_key=key)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def integer_seed(self) -> int:
        """32-bit seed for libraries that only accept `random_state` integers"""
        return int(self.seed_sequence().generate_state(1, dtype=np.uint32)[0])


class MatrixValidator:
    """Shape and value checks used at module boundaries"""

    @staticmethod
    def as_matrix(a, name: str = 'matrix') -> np.ndarray:
        m = np.asarray(a, dtype=float)
        if m.ndim == 1:
            m = m.reshape(1, -1)
        if m.ndim != 2:
            raise InvalidShape(f"{name} must be 2-dimensional, got ndim={m.ndim}")
        if not np.all(np.isfinite(m)):
            raise InvalidShape(f"{name} has non-finite entries")
        return m

    @staticmethod
    def as_vector(v, name: str = 'vector') -> np.ndarray:
        vec = np.asarray(v, dtype=float).ravel()
        if not np.all(np.isfinite(vec)):
            raise InvalidShape(f"{name} has non-finite entries")
        return vec

    @staticmethod
    def require_same_columns(a: np.ndarray, b: np.ndarray, what: str = 'A and X') -> None:
        if a.shape[1] != b.shape[1]:
            raise ShapeMismatch(f"{what} must have the same number of columns "
                                f"({a.shape[1]} != {b.shape[1]})")

    @staticmethod
    def require_positive(value: float, name: str) -> float:
        if not value > 0:
            raise InvalidShape(f"{name} must be positive, got {value}")
        return float(value)


def normalize_rows(v: np.ndarray) -> np.ndarray:
    """Scale every nonzero row to unit euclidean norm"""
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """Safely divide two numbers"""
    try:
        if denominator == 0:
            return default
        return float(numerator) / float(denominator)
    except (ValueError, TypeError, ZeroDivisionError):
        return default


def format_metric(value: Union[int, float, bool, None]) -> str:
    """Bit-stable text form for report files"""
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    return f"{value:.17g}"


def format_seconds(seconds: float) -> str:
    if seconds >= 60:
        return f"{seconds / 60:.1f}m"
    return f"{seconds:.2f}s"


def chunked(total: int, block: int) -> Iterable[slice]:
    """Fixed-order column blocks for reproducible sample-sum accumulation"""
    for start in range(0, total, block):
        yield slice(start, min(start + block, total))
