"""Quantization, rate models and the 16-bit frequency tables shared by coder and estimator."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from compressai.entropy_models import EntropyBottleneck, GaussianConditional

SIGMA_MIN = 0.11
SIGMA_MAX = 256.0
NUM_SCALES = 64
LIKELIHOOD_BOUND = 1e-9
TAIL_MASS = 1e-9
PRECISION = 16
TOTAL_FREQ = 1 << PRECISION
ESCAPE_LENGTH_BITS = 5
LITERAL_CHUNK_BITS = 16


@dataclass
class EntropyParameters:
    mu: torch.Tensor
    sigma: torch.Tensor


@dataclass
class LatentPair:
    """Integer symbols: ``y_hat`` holds round(y - mu), ``z_hat`` holds round(z)."""

    y_hat: torch.Tensor
    z_hat: torch.Tensor

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatentPair):
            return NotImplemented
        return torch.equal(self.y_hat, other.y_hat) and torch.equal(self.z_hat, other.z_hat)


def quantize(
    values: torch.Tensor,
    mode: str,
    means: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """``noise`` adds U[-0.5, 0.5); ``round`` snaps ``values - means`` half-to-even."""

    if mode == "noise":
        noise = torch.rand(
            values.shape, generator=generator, dtype=values.dtype, device=values.device
        )
        return values + (noise - 0.5)
    if mode == "round":
        if means is None:
            return torch.round(values)
        return torch.round(values - means) + means
    raise ValueError(f"unknown quantization mode '{mode}'")


def gaussian_scale_table() -> np.ndarray:
    return np.exp(np.linspace(math.log(SIGMA_MIN), math.log(SIGMA_MAX), NUM_SCALES))


def build_gaussian_conditional() -> GaussianConditional:
    """Parameter-free Gaussian conditional on the 64-scale grid with the sigma floor."""

    return GaussianConditional(
        gaussian_scale_table().tolist(),
        scale_bound=SIGMA_MIN,
        tail_mass=TAIL_MASS,
        likelihood_bound=LIKELIHOOD_BOUND,
    )


@functools.lru_cache(maxsize=1)
def gaussian_conditional() -> GaussianConditional:
    return build_gaussian_conditional()


def gaussian_likelihood(
    residual: torch.Tensor,
    sigma: torch.Tensor,
    conditional: Optional[GaussianConditional] = None,
) -> torch.Tensor:
    """Unit-bin mass of N(0, sigma) around ``residual``, evaluated on the lower tail."""

    conditional = conditional if conditional is not None else gaussian_conditional()
    likelihood = conditional._likelihood(residual, sigma)
    return conditional.likelihood_lower_bound(likelihood)


class FactorizedDensity(EntropyBottleneck):
    """Per-channel learned cumulative density for the hyper-latent.

    Quantization stays with :func:`quantize` so training noise can come from a seeded
    generator; the density, its quantiles and the auxiliary loss are the bottleneck's.
    """

    def __init__(
        self,
        channels: int,
        filters: Sequence[int] = (3, 3, 3),
        init_scale: float = 10.0,
        tail_mass: float = TAIL_MASS,
    ) -> None:
        super().__init__(
            int(channels),
            tail_mass=float(tail_mass),
            init_scale=float(init_scale),
            filters=tuple(int(f) for f in filters),
            likelihood_bound=LIKELIHOOD_BOUND,
        )

    def _to_channel_rows(self, values: torch.Tensor) -> torch.Tensor:
        return values.transpose(0, 1).reshape(self.channels, 1, -1)

    def _from_channel_rows(self, rows: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        transposed_shape = (like.shape[1], like.shape[0]) + tuple(like.shape[2:])
        return rows.reshape(transposed_shape).transpose(0, 1)

    def likelihood(self, values: torch.Tensor) -> torch.Tensor:
        likelihood, _, _ = self._likelihood(self._to_channel_rows(values))
        likelihood = self.likelihood_lower_bound(likelihood)
        return self._from_channel_rows(likelihood, values)

    def cdf(self, points: torch.Tensor) -> torch.Tensor:
        """Cumulative of each channel at ``points`` shaped (channels, 1, n)."""

        return torch.sigmoid(self._logits_cumulative(points, stop_gradient=True))

    def aux_loss(self) -> torch.Tensor:
        return self.loss()

    def support(self) -> List[Tuple[int, int]]:
        quantiles = self.quantiles.detach().double().cpu().numpy()[:, 0, :]
        bounds = []
        for low, _, high in quantiles:
            lo = int(math.floor(min(low, 0.0)))
            hi = int(math.ceil(max(high, 0.0)))
            bounds.append((lo, hi))
        return bounds


def estimate_rate_y(
    y_hat: torch.Tensor,
    params: EntropyParameters,
    tables: Optional["GaussianTables"] = None,
) -> torch.Tensor:
    """Bits for residual symbols ``y_hat`` (relative to ``params.mu``)."""

    if tables is not None:
        return torch.tensor(tables.bits(y_hat, params.sigma), dtype=torch.float64)
    return -torch.log2(gaussian_likelihood(y_hat, params.sigma)).sum()


def estimate_rate_z(
    z_hat: torch.Tensor,
    density: FactorizedDensity,
    tables: Optional["FactorizedTables"] = None,
) -> torch.Tensor:
    if tables is not None:
        return torch.tensor(tables.bits(z_hat), dtype=torch.float64)
    return -torch.log2(density.likelihood(z_hat)).sum()


def escape_bits(value: int) -> int:
    """Bypass cost: sign, magnitude bit length, then the magnitude bits."""

    return 1 + ESCAPE_LENGTH_BITS + abs(int(value)).bit_length()


@dataclass(frozen=True)
class SymbolTable:
    """Symbols ``offset .. offset + len(freqs) - 2`` plus a trailing escape."""

    offset: int
    freqs: np.ndarray
    cdf: np.ndarray

    @property
    def escape(self) -> int:
        return len(self.freqs) - 1

    def index(self, value: int) -> int:
        position = int(value) - self.offset
        if 0 <= position < self.escape:
            return position
        return self.escape

    def bits(self, values: np.ndarray) -> float:
        positions = np.asarray(values, dtype=np.int64).reshape(-1) - self.offset
        inside = (positions >= 0) & (positions < self.escape)
        total = float(-np.log2(self.freqs[positions[inside]] / TOTAL_FREQ).sum())
        outside = np.asarray(values).reshape(-1)[~inside]
        if outside.size:
            escape_cost = -math.log2(self.freqs[self.escape] / TOTAL_FREQ)
            total += sum(escape_cost + escape_bits(v) for v in outside)
        return total


def quantize_pmf(pmf: np.ndarray, offset: int) -> SymbolTable:
    """Frequencies 1 + floor(p * (2^16 - n)) with the remainder on the most probable symbols."""

    pmf = np.append(np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None), 0.0)
    count = pmf.size
    if count > TOTAL_FREQ // 2:
        raise ValueError(f"table with {count} symbols exceeds the coder precision")
    pmf = pmf / pmf.sum()
    freqs = 1 + np.floor(pmf * (TOTAL_FREQ - count)).astype(np.int64)
    remainder = TOTAL_FREQ - int(freqs.sum())
    order = np.argsort(-pmf, kind="stable")
    freqs[order[:remainder]] += 1
    cdf = np.concatenate([[0], np.cumsum(freqs)]).astype(np.int64)
    return SymbolTable(offset=offset, freqs=freqs, cdf=cdf)


def _edge_folded_pmf(lower_cdf: np.ndarray, upper_cdf: np.ndarray) -> np.ndarray:
    pmf = upper_cdf - lower_cdf
    pmf[0] = upper_cdf[0]
    pmf[-1] = 1.0 - lower_cdf[-1]
    return pmf


class GaussianTables:
    """Zero-mean Gaussian tables for a log-spaced scale grid."""

    def __init__(self, scales: Optional[np.ndarray] = None, tail_mass: float = TAIL_MASS) -> None:
        self.scales = gaussian_scale_table() if scales is None else np.asarray(scales, dtype=np.float64)
        self.tail_mass = tail_mass
        conditional = gaussian_conditional()
        multiplier = -conditional._standardized_quantile(tail_mass / 2.0)
        self.tables: List[SymbolTable] = []
        for scale in self.scales:
            half = int(math.ceil(scale * multiplier))
            symbols = torch.arange(-half, half + 1, dtype=torch.float64)
            lower = conditional._standardized_cumulative((symbols - 0.5) / scale)
            upper = conditional._standardized_cumulative((symbols + 0.5) / scale)
            pmf = _edge_folded_pmf(lower.numpy(), upper.numpy())
            self.tables.append(quantize_pmf(pmf, -half))

    def scale_indexes(self, sigma: torch.Tensor) -> np.ndarray:
        """Smallest tabulated scale >= sigma (the last one beyond the grid)."""

        values = sigma.detach().double().cpu().numpy()
        indexes = np.searchsorted(self.scales, values, side="left")
        return np.minimum(indexes, len(self.scales) - 1).astype(np.int64)

    def bits(self, symbols: torch.Tensor, sigma: torch.Tensor) -> float:
        values = symbols.detach().cpu().numpy().astype(np.int64).reshape(-1)
        indexes = self.scale_indexes(sigma).reshape(-1)
        total = 0.0
        for index in np.unique(indexes):
            total += self.tables[int(index)].bits(values[indexes == index])
        return total


class FactorizedTables:
    """One table per hyper-latent channel over the learned quantile support."""

    def __init__(self, density: FactorizedDensity) -> None:
        self.tables: List[SymbolTable] = []
        with torch.no_grad():
            for channel, (lo, hi) in enumerate(density.support()):
                symbols = torch.arange(lo, hi + 1, dtype=torch.float32)
                points = torch.zeros(density.channels, 1, symbols.numel())
                points[channel, 0] = symbols
                lower = density.cdf(points - 0.5)[channel, 0].double().cpu().numpy()
                upper = density.cdf(points + 0.5)[channel, 0].double().cpu().numpy()
                self.tables.append(quantize_pmf(_edge_folded_pmf(lower, upper), lo))

    def bits(self, z_hat: torch.Tensor) -> float:
        values = z_hat.detach().cpu().numpy().astype(np.int64)
        return sum(
            table.bits(values[:, channel]) for channel, table in enumerate(self.tables)
        )


@functools.lru_cache(maxsize=4)
def shared_gaussian_tables() -> GaussianTables:
    return GaussianTables()


__all__ = [
    "EntropyParameters",
    "FactorizedDensity",
    "FactorizedTables",
    "GaussianTables",
    "LatentPair",
    "SIGMA_MIN",
    "SymbolTable",
    "TOTAL_FREQ",
    "build_gaussian_conditional",
    "escape_bits",
    "estimate_rate_y",
    "estimate_rate_z",
    "gaussian_conditional",
    "gaussian_likelihood",
    "gaussian_scale_table",
    "quantize",
    "quantize_pmf",
    "shared_gaussian_tables",
]
