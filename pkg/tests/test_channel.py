from dataclasses import replace

import numpy as np
import pytest

from ambized.channel import (
    ChannelCoeffs,
    GridParams,
    NoiseModel,
    ResourceGrid,
    ZedConfig,
    bits_fit_grid,
    paper_scenario_params,
    rs_time,
    snap_fsk,
    synthesize,
)
from ambized.sequences import FskParams, npc25

T_OFDM = 71.35e-6


def test_grid_params_defaults():
    g = GridParams()
    assert g.n_subcarriers == 24
    assert g.tti == pytest.approx(14 * T_OFDM)
    assert g.rs_per_tti == 2
    assert GridParams(n_rb=25).n_subcarriers == 100


def test_grid_requires_two_rs_symbols():
    with pytest.raises(ValueError):
        GridParams(rs_symbol_indices=(0, 4, 7))
    with pytest.raises(ValueError):
        GridParams(rs_symbol_indices=(0, 14))


def test_rs_time_examples():
    g = GridParams(t_ofdm=T_OFDM)
    assert rs_time(g, 0) == 0.0
    assert rs_time(g, 1) == pytest.approx(499.45e-6, abs=1e-12)
    assert rs_time(g, 2) == pytest.approx(998.9e-6, abs=1e-12)
    with pytest.raises(ValueError):
        rs_time(g, -1)
    assert np.allclose(g.rs_times(5), rs_time(g, np.arange(5)))


def test_reference_constants(ref):
    assert ref.t_a == 1.4 and ref.t_b == 2.2
    assert ref.t_wait_a == pytest.approx(0.6)
    assert ref.f1 / ref.f0 == 4
    assert ref.bandwidth == 2.5e6 and ref.fft_size == 128 and ref.cp_len == 8
    assert ref.g_psl_db == 21.93 and ref.margin_db == 6.0
    assert ref.t_obs == 1.4


def test_snapped_fsk_fits_grid(ref):
    fsk = ref.fsk
    assert bits_fit_grid(fsk, ref.grid)
    assert fsk.bit_duration == pytest.approx(32 * ref.grid.tti)
    assert fsk.f1 / fsk.f0 == pytest.approx(4.0)
    assert fsk.f0 * fsk.bit_duration == pytest.approx(4.0)
    # cycles keep the nominal values
    assert ref.tag_a.cycle == pytest.approx(1.4)
    assert ref.tag_b.cycle == pytest.approx(2.2)
    assert snap_fsk(ref.grid, 125.0, 500.0, 0.032) == fsk


def test_zed_activity_window(ref):
    tag = replace(ref.tag_a, start_offset=0.25)
    t = np.linspace(0, 5, 20001)
    tau = np.mod(t - 0.25, tag.cycle)
    x = tag.modulation(t)
    assert np.all(x[tau < tag.wait - 1e-9] == 0)
    assert np.all(np.abs(x[tau >= tag.wait + 1e-9]) == 1)
    starts = tag.sequence_starts(0.0, 5.0)
    assert np.allclose(np.diff(starts), tag.cycle)
    assert starts[0] == pytest.approx(0.25 + tag.wait)


def test_synthesize_no_tags_no_noise(ref):
    g = ref.grid
    y = synthesize(g, [], ChannelCoeffs(gamma=0.7 - 0.2j), NoiseModel(0.0), 0.1)
    assert y.samples.shape == (24, g.n_rs(0.1))
    assert np.allclose(y.samples, 0.7 - 0.2j)


def test_synthesize_pilot_power_and_reflection(ref):
    g = replace(ref.grid, pilot_power=4.0)
    tag = replace(ref.tag_a, wait=0.0)
    y = synthesize(g, [tag], ChannelCoeffs(1.0, (0.1j,)), NoiseModel(0.0), tag.cycle)
    x = tag.modulation(y.times)
    assert np.allclose(y.samples, 2.0 * (1.0 + 0.1j * x)[None, :])
    # at t=0 the tag starts its first bit in the reflective state
    assert np.allclose(y.samples[:, 0], 2.0 * (1.0 + 0.1j))


def test_synthesize_per_subcarrier_channel(ref):
    g = ref.grid
    gamma = np.linspace(0.5, 1.5, 24)
    y = synthesize(g, [], ChannelCoeffs(gamma=gamma), NoiseModel(0.0), 0.01)
    assert np.allclose(y.samples, gamma[:, None])
    with pytest.raises(ValueError):
        synthesize(g, [], ChannelCoeffs(gamma=np.ones(5)), NoiseModel(0.0), 0.01)


def test_synthesize_is_deterministic(ref):
    args = (ref.grid, [ref.tag_a], ChannelCoeffs(1.0, (0.1,)),
            NoiseModel(1.0, "walk", 0.1, seed=99), 1.5)
    a, b = synthesize(*args), synthesize(*args)
    assert np.array_equal(a.samples, b.samples)
    c = synthesize(*args[:3], NoiseModel(1.0, "walk", 0.1, seed=100), 1.5)
    assert not np.array_equal(a.samples, c.samples)


def test_noise_statistics(ref):
    y = synthesize(ref.grid, [], ChannelCoeffs(0.0), NoiseModel(2.5, seed=1), 3.0)
    p = np.mean(np.abs(y.samples) ** 2) / 2.5
    assert y.samples.size >= 1e5
    assert 0.99 <= p <= 1.01
    assert abs(np.mean(y.samples.real ** 2) / 1.25 - 1) < 0.02
    assert abs(np.mean(y.samples)) < 0.01


@pytest.mark.parametrize("mode", ["iid", "walk"])
def test_phase_constant_within_tti(ref, mode):
    y = synthesize(ref.grid, [], ChannelCoeffs(1.0), NoiseModel(0.0, mode, 0.2, seed=3), 0.5)
    ph = y.phases.reshape(-1, 2)
    assert np.allclose(ph[:, 0], ph[:, 1])
    assert np.allclose(y.samples, np.exp(1j * y.phases)[None, :])
    assert np.ptp(ph[:, 0]) > 0


def test_superposition_in_tags(ref):
    noise = NoiseModel(1.0, "walk", 0.05, seed=7)
    dur = ref.tag_b.cycle
    a = synthesize(ref.grid, [ref.tag_a], ChannelCoeffs(1.0, (0.2,)), noise, dur)
    ab = synthesize(ref.grid, [ref.tag_a, ref.tag_b], ChannelCoeffs(1.0, (0.2, 0.1j)), noise, dur)
    x_b = ref.tag_b.modulation(a.times)
    expect = 0.1j * np.exp(1j * a.phases) * x_b
    assert np.allclose(ab.samples - a.samples, expect[None, :], atol=1e-12)


def test_inactive_second_tag_reduces_to_single(ref):
    noise = NoiseModel(1.0, seed=5)
    dur = ref.tag_b.cycle
    a = synthesize(ref.grid, [ref.tag_a], ChannelCoeffs(1.0, (0.2,)), noise, dur)
    ab = synthesize(ref.grid, [ref.tag_a, ref.tag_b], ChannelCoeffs(1.0, (0.2, 0.0)), noise, dur)
    assert np.array_equal(a.samples, ab.samples)


def test_synthesize_validation(ref):
    g = ref.grid
    with pytest.raises(ValueError, match="shorter than tag"):
        synthesize(g, [ref.tag_a], ChannelCoeffs(1.0, (0.1,)), NoiseModel(0.0), 1.0)
    with pytest.raises(ValueError, match="reflected path"):
        synthesize(g, [ref.tag_a], ChannelCoeffs(1.0), NoiseModel(0.0), 2.0)
    bad = ZedConfig(npc25(), FskParams(125.0, 500.0, 0.032), wait=0.6)
    with pytest.raises(ValueError, match="integer"):
        synthesize(g, [bad], ChannelCoeffs(1.0, (0.1,)), NoiseModel(0.0), 2.0)
    with pytest.raises(ValueError):
        NoiseModel(-1.0)
    with pytest.raises(ValueError):
        NoiseModel(1.0, phase_jitter="gauss")


def test_resource_grid_time_map_and_csv(tmp_path, ref):
    y = synthesize(ref.grid, [], ChannelCoeffs(1.0), NoiseModel(0.5, seed=2), 0.003)
    assert y.time_map(3, 1) == pytest.approx(499.45e-6)
    with pytest.raises(IndexError):
        y.time_map(24, 0)
    path = tmp_path / "grid.csv"
    y.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,l,t_seconds,re,im"
    assert len(lines) == 1 + y.samples.size
    k, l, t, re, im = lines[2].split(",")
    assert (int(k), int(l)) == (0, 1)
    assert complex(float(re), float(im)) == y.samples[0, 1]
    with pytest.raises(ValueError):
        ResourceGrid(np.ones((2, 3)), np.array([0.0, 1.0, 1.0]))
