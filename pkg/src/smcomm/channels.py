"""Discrete memoryless channels and channels for real-valued SR vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RejectedInputError

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteChannel:
    """Row-stochastic confusion matrix; entry [i, j] = P(receive j | send i)."""

    matrix: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ConfigurationError(f"confusion matrix must be square, got {m.shape}")
        if np.any(m < 0) or np.any(m > 1) or not np.all(np.isfinite(m)):
            raise ConfigurationError("confusion matrix entries must lie in [0, 1]")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > ROW_TOL):
            raise ConfigurationError("confusion matrix rows must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        cdf = np.cumsum(m, axis=1)
        cdf[:, -1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(self.size)))

    @classmethod
    def identity(cls, n: int) -> "DiscreteChannel":
        return cls(np.eye(n))

    @classmethod
    def uniform(cls, n: int) -> "DiscreteChannel":
        return cls(np.full((n, n), 1.0 / n))

    @classmethod
    def bsc(cls, p: float) -> "DiscreteChannel":
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"crossover probability {p} outside [0, 1]")
        return cls(np.array([[1 - p, p], [p, 1 - p]]))

    @classmethod
    def symmetric(cls, n: int, p: float) -> "DiscreteChannel":
        """n-ary symmetric channel: correct w.p. 1-p, otherwise uniform over the rest.

        Reduces to ``bsc(p)`` for n = 2.
        """
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"error probability {p} outside [0, 1]")
        if n == 1:
            return cls.identity(1)
        m = np.full((n, n), p / (n - 1))
        np.fill_diagonal(m, 1.0 - p)
        return cls(m)

    def to_spec(self):
        if self.is_identity:
            return {"preset": "identity", "n": self.size}
        return {"matrix": self.matrix.tolist()}

    def transmit(self, symbols, rng: np.random.Generator) -> np.ndarray:
        """Vectorized transmission of an integer array of symbols."""
        s = np.asarray(symbols)
        if s.size and (not np.issubdtype(s.dtype, np.integer)
                       or s.min() < 0 or s.max() >= self.size):
            raise RejectedInputError(f"symbols must be integers in [0, {self.size})")
        u = rng.random(s.shape)
        rows = self._cdf[s]
        out = np.sum(rows <= u[..., None], axis=-1)
        return np.minimum(out, self.size - 1)


def transmit_symbol(ch: DiscreteChannel, symbol: int, rng: np.random.Generator) -> int:
    if not isinstance(symbol, (int, np.integer)) or not 0 <= symbol < ch.size:
        raise RejectedInputError(f"symbol {symbol!r} outside alphabet of size {ch.size}")
    return int(ch.transmit(np.array([symbol]), rng)[0])


def quantize(v, levels: int) -> np.ndarray:
    """Cell index of each coordinate after clipping to [-1, 1]."""
    width = 2.0 / levels
    x = np.clip(np.asarray(v, dtype=np.float64), -1.0, 1.0)
    return np.minimum(np.floor((x + 1.0) / width), levels - 1).astype(np.int64)


def dequantize(cells, levels: int) -> np.ndarray:
    """Midpoint of each cell."""
    width = 2.0 / levels
    return -1.0 + (np.asarray(cells, dtype=np.float64) + 0.5) * width


@dataclass(frozen=True, eq=False)
class VectorChannel:
    """Channel for real vectors: clean, additive Gaussian, or quantize-then-DMC."""

    kind: str = "clean"
    sigma: float = 0.0
    levels: int = 16
    per_symbol: DiscreteChannel | None = None

    def __post_init__(self):
        if self.kind not in ("clean", "additive_gaussian", "quantize_then_dmc"):
            raise ConfigurationError(f"unknown vector channel kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be non-negative")
        if self.kind == "quantize_then_dmc":
            if self.levels < 2:
                raise ConfigurationError("need at least 2 quantization levels")
            if self.per_symbol is None:
                object.__setattr__(self, "per_symbol", DiscreteChannel.identity(self.levels))
            if self.per_symbol.size != self.levels:
                raise ConfigurationError(
                    f"per-symbol channel has {self.per_symbol.size} symbols, "
                    f"expected {self.levels}")

    @classmethod
    def clean(cls) -> "VectorChannel":
        return cls("clean")

    @classmethod
    def gaussian(cls, sigma: float) -> "VectorChannel":
        return cls("additive_gaussian", sigma=sigma)

    @classmethod
    def quantized(cls, levels: int = 16, per_symbol: DiscreteChannel | None = None):
        return cls("quantize_then_dmc", levels=levels, per_symbol=per_symbol)

    def to_spec(self) -> dict:
        if self.kind == "clean":
            return {"kind": "clean"}
        if self.kind == "additive_gaussian":
            return {"kind": "additive_gaussian", "sigma": self.sigma}
        return {"kind": "quantize_then_dmc", "levels": self.levels,
                "per_symbol": self.per_symbol.to_spec()}

    def transmit(self, v, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise RejectedInputError("vector contains non-finite entries")
        if self.kind == "clean":
            return x.copy()
        if self.kind == "additive_gaussian":
            if self.sigma == 0:
                return x.copy()
            return x + rng.normal(0.0, self.sigma, size=x.shape)
        cells = quantize(x, self.levels)
        if not self.per_symbol.is_identity:
            cells = self.per_symbol.transmit(cells, rng)
        return dequantize(cells, self.levels)


def transmit_vector(ch: VectorChannel, v, rng: np.random.Generator | None = None) -> np.ndarray:
    return ch.transmit(v, rng)


def discrete_from_spec(spec) -> DiscreteChannel:
    """Build a DiscreteChannel from a config entry.

    Accepts ``{"preset": "bsc", "p": 0.1}``, ``{"preset": "identity", "n": 4}``,
    ``{"preset": "uniform", "n": 4}``, ``{"preset": "symmetric", "n": 16, "p": 0.05}``
    or ``{"matrix": [[...], ...]}``.
    """
    if "matrix" in spec:
        return DiscreteChannel(np.asarray(spec["matrix"], dtype=np.float64))
    preset = spec.get("preset")
    if preset == "bsc":
        return DiscreteChannel.bsc(spec["p"])
    if preset == "identity":
        return DiscreteChannel.identity(spec["n"])
    if preset == "uniform":
        return DiscreteChannel.uniform(spec["n"])
    if preset == "symmetric":
        return DiscreteChannel.symmetric(spec["n"], spec["p"])
    raise ConfigurationError(f"unknown discrete channel spec {spec!r}")


def vector_from_spec(spec) -> VectorChannel:
    kind = spec.get("kind", "clean")
    if kind == "clean":
        return VectorChannel.clean()
    if kind == "additive_gaussian":
        return VectorChannel.gaussian(spec.get("sigma", 0.0))
    if kind == "quantize_then_dmc":
        levels = spec.get("levels", 16)
        per = spec.get("per_symbol")
        return VectorChannel.quantized(levels, discrete_from_spec(per) if per else None)
    raise ConfigurationError(f"unknown vector channel kind {kind!r}")
