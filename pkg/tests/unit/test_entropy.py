"""Quantization, rate estimates and the 16-bit symbol tables."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from compressai.entropy_models import EntropyBottleneck, GaussianConditional
from scipy import special

from models.entropy import (
    SIGMA_MIN,
    TOTAL_FREQ,
    EntropyParameters,
    FactorizedDensity,
    FactorizedTables,
    GaussianTables,
    escape_bits,
    estimate_rate_y,
    estimate_rate_z,
    gaussian_likelihood,
    gaussian_scale_table,
    quantize,
    quantize_pmf,
)


def test_round_mode_uses_half_to_even():
    values = torch.tensor([0.4, 2.5, -2.5, 3.5, -0.6])

    torch.testing.assert_close(quantize(values, "round"), torch.tensor([0.0, 2.0, -2.0, 4.0, -1.0]))


def test_round_mode_snaps_relative_to_means():
    values = torch.tensor([1.2, 0.9])
    means = torch.tensor([0.25, -0.5])

    out = quantize(values, "round", means)

    torch.testing.assert_close(out, torch.tensor([1.25, 0.5]))


def test_noise_mode_statistics():
    values = torch.zeros(1_000_000, dtype=torch.float64)
    generator = torch.Generator().manual_seed(0)

    noisy = quantize(values, "noise", generator=generator)

    assert torch.all(noisy >= -0.5) and torch.all(noisy < 0.5)
    bound = 3 * math.sqrt(1 / 12) / math.sqrt(values.numel())
    assert abs(noisy.mean().item()) < bound


def test_unknown_quantization_mode():
    with pytest.raises(ValueError, match="unknown quantization mode"):
        quantize(torch.zeros(1), "floor")


def test_wide_gaussian_costs_log_of_its_spread():
    bits = estimate_rate_y(
        torch.zeros(1, dtype=torch.float64),
        EntropyParameters(mu=torch.zeros(1), sigma=torch.full((1,), 1000.0, dtype=torch.float64)),
    )

    assert bits.item() == pytest.approx(math.log2(1000.0 * math.sqrt(2 * math.pi)), abs=1e-3)
    assert bits.item() == pytest.approx(11.29, abs=0.01)


def test_narrowest_gaussian_matches_cdf_reference():
    sigma = torch.full((1,), SIGMA_MIN, dtype=torch.float64)

    bits = -torch.log2(gaussian_likelihood(torch.zeros(1, dtype=torch.float64), sigma)).item()

    tail = special.ndtr(-0.5 / SIGMA_MIN)
    reference = -math.log1p(-2.0 * tail) / math.log(2.0)
    assert bits == pytest.approx(reference, rel=1e-6)


def test_sigma_below_floor_is_clamped():
    residual = torch.tensor([0.0, 1.0, -2.0])

    low = gaussian_likelihood(residual, torch.full((3,), 1e-4))
    floor = gaussian_likelihood(residual, torch.full((3,), SIGMA_MIN))

    torch.testing.assert_close(low, floor)


def test_rates_are_finite_and_non_negative():
    generator = torch.Generator().manual_seed(1)
    residual = torch.round(torch.randn(2, 4, 6, 6, generator=generator) * 20)
    sigma = torch.rand(2, 4, 6, 6, generator=generator) * 30 + SIGMA_MIN
    density = FactorizedDensity(4)
    z_hat = torch.round(torch.randn(2, 4, 2, 2, generator=generator) * 3)

    rate_y = estimate_rate_y(residual, EntropyParameters(torch.zeros_like(sigma), sigma))
    rate_z = estimate_rate_z(z_hat, density)

    for rate in (rate_y, rate_z):
        assert torch.isfinite(rate)
        assert rate.item() >= 0


def test_factorized_density_mass_sums_to_one():
    torch.manual_seed(2)
    density = FactorizedDensity(3)
    symbols = torch.arange(-300, 301, dtype=torch.float32)
    values = symbols.reshape(1, 1, -1, 1).expand(1, 3, -1, 1).contiguous()

    mass = density.likelihood(values).sum(dim=2).squeeze()

    torch.testing.assert_close(mass, torch.ones(3), atol=1e-4, rtol=0)


def test_aux_loss_moves_quantiles_towards_tails():
    torch.manual_seed(3)
    density = FactorizedDensity(2)
    optimizer = torch.optim.Adam([density.quantiles], lr=0.1)
    before = density.aux_loss().item()

    for _ in range(50):
        optimizer.zero_grad()
        density.aux_loss().backward()
        optimizer.step()

    assert density.aux_loss().item() < before
    lo, hi = density.support()[0]
    assert lo <= 0 <= hi


def test_quantize_pmf_fills_precision_and_appends_escape():
    table = quantize_pmf(np.array([0.7, 0.2, 0.1, 0.0]), offset=-1)

    assert int(table.freqs.sum()) == TOTAL_FREQ
    assert table.cdf[0] == 0 and table.cdf[-1] == TOTAL_FREQ
    assert np.all(table.freqs >= 1)
    assert table.escape == 4
    assert table.index(-1) == 0 and table.index(2) == 3
    assert table.index(3) == table.escape and table.index(-2) == table.escape
    assert table.freqs[0] > table.freqs[1] > table.freqs[2]


def test_quantize_pmf_rejects_oversized_tables():
    with pytest.raises(ValueError, match="exceeds the coder precision"):
        quantize_pmf(np.ones(TOTAL_FREQ // 2 + 1), offset=0)


def test_escape_cost():
    assert escape_bits(0) == 6
    assert escape_bits(-5) == 9
    assert escape_bits(70_000) == 6 + 17


def test_symbol_table_bits_charges_escapes():
    table = quantize_pmf(np.array([0.5, 0.5]), offset=0)

    inside = table.bits(np.array([0, 1, 1]))
    with_escape = table.bits(np.array([0, 9]))

    expected_inside = -sum(math.log2(table.freqs[i] / TOTAL_FREQ) for i in (0, 1, 1))
    assert inside == pytest.approx(expected_inside)
    escape = -math.log2(table.freqs[table.escape] / TOTAL_FREQ) + escape_bits(9)
    assert with_escape == pytest.approx(-math.log2(table.freqs[0] / TOTAL_FREQ) + escape)


def test_gaussian_scale_grid_and_lookup():
    scales = gaussian_scale_table()
    tables = GaussianTables()

    assert scales[0] == pytest.approx(SIGMA_MIN)
    assert scales[-1] == pytest.approx(256.0)
    assert np.all(np.diff(scales) > 0)

    sigma = torch.tensor([scales[0], scales[10] * 1.0001, 1000.0], dtype=torch.float64)
    indexes = tables.scale_indexes(sigma)
    assert indexes.tolist() == [0, 11, len(scales) - 1]


def test_gaussian_tables_track_continuous_estimate():
    generator = torch.Generator().manual_seed(4)
    sigma = torch.rand(4000, generator=generator, dtype=torch.float64) * 20 + 0.5
    residual = torch.round(torch.randn(4000, generator=generator, dtype=torch.float64) * sigma)
    tables = GaussianTables()

    table_bits = estimate_rate_y(residual, EntropyParameters(torch.zeros_like(sigma), sigma), tables)
    continuous = estimate_rate_y(residual, EntropyParameters(torch.zeros_like(sigma), sigma))

    # tables use the next scale up on a 64-step grid
    assert abs(table_bits.item() - continuous.item()) < 0.05 * continuous.item()


def test_factorized_tables_cover_quantile_support():
    torch.manual_seed(5)
    density = FactorizedDensity(2)
    tables = FactorizedTables(density)

    for (lo, hi), table in zip(density.support(), tables.tables):
        assert table.offset == lo
        assert table.escape == hi - lo + 1
        assert int(table.freqs.sum()) == TOTAL_FREQ

    z_hat = torch.zeros(1, 2, 3, 3)
    assert tables.bits(z_hat) == pytest.approx(estimate_rate_z(z_hat, density, tables).item())


def test_gaussian_likelihood_matches_library_conditional():
    generator = torch.Generator().manual_seed(6)
    residual = torch.round(torch.randn(1, 4, 5, 5, generator=generator) * 6)
    sigma = torch.rand(1, 4, 5, 5, generator=generator) * 20

    _, expected = GaussianConditional(None, scale_bound=SIGMA_MIN)(residual, sigma, training=False)

    torch.testing.assert_close(gaussian_likelihood(residual, sigma), expected)


def test_factorized_density_is_the_library_bottleneck():
    torch.manual_seed(7)
    density = FactorizedDensity(3)
    values = torch.round(torch.randn(2, 3, 4, 4) * 2)

    assert isinstance(density, EntropyBottleneck)
    torch.testing.assert_close(density.aux_loss(), density.loss())
    rows = values.transpose(0, 1).reshape(3, 1, -1)
    upper = torch.sigmoid(density._logits_cumulative(rows + 0.5, stop_gradient=True))
    lower = torch.sigmoid(density._logits_cumulative(rows - 0.5, stop_gradient=True))
    expected = (upper - lower).clamp_min(1e-9).reshape(3, 2, 4, 4).transpose(0, 1)
    torch.testing.assert_close(density.likelihood(values), expected, rtol=1e-5, atol=1e-7)


def test_gaussian_tables_follow_the_normal_cdf():
    tables = GaussianTables(scales=np.array([1.0]))
    table = tables.tables[0]
    half = -table.offset

    assert half == math.ceil(special.ndtri(1.0 - 0.5e-9))
    centre = table.freqs[half] / TOTAL_FREQ
    assert centre == pytest.approx(special.ndtr(0.5) - special.ndtr(-0.5), abs=1e-3)
