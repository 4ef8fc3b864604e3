import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlshape.constellation import Pmf, make_square_qam, mb_pmf, normalize_energy, uniform_pmf
from nlshape.egn import LinkConfig, ase_variance, dbm2w
from nlshape.metrics import SNR_CEILING_DB, effective_snr, per_point_stats
from nlshape.ssfm import (
    SignalConfig,
    SimulationError,
    WaveformGrid,
    back_to_back,
    config_hash,
    propagate,
    read_records,
    rrc_response,
    rx_detect,
    tx_generate,
    write_records,
)

C64 = make_square_qam(6)
U64 = uniform_pmf(64)


def _rms(a, b=0.0):
    return float(np.sqrt(np.mean(np.abs(np.asarray(a) - b) ** 2)))


def _ideal(c, p, idx):
    return normalize_energy(c, p).points[idx]


# -- signal config ------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(rolloff=0.0), dict(rolloff=1.5),
    dict(n_wdm=3, spacing_ghz=12.0),           # spacing below R_s (1 + rho)
    dict(n_wdm=9, spacing_ghz=25.0, f_os=8),   # 80 GHz sampling < 215 GHz occupied
    dict(n_sym=16),
])
def test_signal_config_rejects(kw):
    with pytest.raises(ValueError):
        SignalConfig(**kw)


def test_signal_config_grid():
    cfg = SignalConfig(n_wdm=9, spacing_ghz=25.0, f_os=24)
    assert cfg.sample_rate_ghz == 240.0
    assert cfg.center_channel == 4
    assert np.allclose(cfg.channel_offsets_ghz(), 25.0 * np.arange(-4, 5))
    assert cfg.replace(seed=7).seed == 7 and cfg.replace(seed=7) != cfg


def test_config_hash_stable():
    a = config_hash(LinkConfig(), SignalConfig())
    assert a == config_hash(LinkConfig(), SignalConfig())
    assert a != config_hash(LinkConfig(), SignalConfig(seed=1))


def test_rrc_energy_and_nyquist():
    sps, n = 8, 512
    H = rrc_response(n * sps, sps, 0.5)
    h = np.fft.ifft(H)
    assert np.sum(np.abs(h) ** 2) == pytest.approx(sps, rel=1e-12)
    # raised-cosine pulse sampled at symbol instants is a unit impulse
    g = np.fft.ifft(H**2)[::sps] / sps
    assert g[0].real == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(g[1:])) < 1e-12


def test_waveform_rejects_nonfinite():
    with pytest.raises(SimulationError):
        WaveformGrid(np.array([1.0, np.nan]), 10.0)


# -- transmitter --------------------------------------------------------------


def test_matched_filter_loopback():
    cfg = SignalConfig(n_wdm=1, n_sym=4096, f_os=4, seed=2)
    wave, idx = tx_generate(cfg, C64, U64, 1e-3)
    assert len(wave) == cfg.n_sym * cfg.f_os
    recs = rx_detect(wave, cfg, None, 0, idx, C64, U64)
    assert _rms(recs.rx, _ideal(C64, U64, recs.tx_index)) < 1e-6


def test_loopback_each_wdm_channel():
    cfg = SignalConfig(n_wdm=3, n_sym=2048, f_os=8, seed=4)
    p = mb_pmf(C64, 0.5)
    wave, idx = tx_generate(cfg, C64, p, 1e-3)
    for ch in range(3):
        recs = rx_detect(wave, cfg, None, ch, idx, C64, p)
        assert _rms(recs.rx, _ideal(C64, p, recs.tx_index)) < 1e-6


def test_per_channel_power():
    cfg = SignalConfig(n_wdm=5, n_sym=2048, f_os=12, spacing_ghz=25.0, seed=5)
    p_ch = 2e-3
    wave, _ = tx_generate(cfg, C64, mb_pmf(C64, 0.7), p_ch)
    assert 10 * math.log10(wave.power / (cfg.n_wdm * p_ch)) == pytest.approx(0.0, abs=0.05)
    # isolate each channel in the spectrum
    n = cfg.n_sym
    U = np.fft.fft(wave.samples)
    for off in cfg.channel_offsets_ghz():
        shift = int(round(off * n / cfg.symbol_rate_gbd))
        band = np.roll(U, -shift)
        f = np.abs(np.fft.fftfreq(U.size, d=1.0 / cfg.f_os))
        pw = np.sum(np.abs(band[f < 0.75 + 1e-9]) ** 2) / U.size**2
        assert abs(10 * math.log10(pw / p_ch)) < 0.05


def test_point_mass_gives_constant_stream():
    probs = np.zeros(64)
    probs[9] = 1.0
    cfg = SignalConfig(n_wdm=1, n_sym=512, f_os=2, seed=1)
    _, idx = tx_generate(cfg, C64, Pmf(probs), 1e-3)
    assert np.all(idx == 9)


@settings(max_examples=10)
@given(seed=st.integers(0, 2**31), nu=st.floats(0.0, 1.0))
def test_symbol_histogram_matches_pmf(seed, nu):
    # E[TV] ~ 0.4 sqrt(M / n), so the 3/sqrt(n) bound is meaningful up to 16 points
    c16 = make_square_qam(4)
    cfg = SignalConfig(n_wdm=1, n_sym=4096, f_os=2, seed=seed)
    p = mb_pmf(c16, nu)
    _, idx = tx_generate(cfg, c16, p, 1e-3)
    hist = np.bincount(idx[0], minlength=16) / cfg.n_sym
    assert 0.5 * np.sum(np.abs(hist - p.probs)) < 3 / math.sqrt(cfg.n_sym)


def test_common_random_numbers_across_powers():
    cfg = SignalConfig(n_wdm=3, n_sym=1024, f_os=8, seed=11)
    _, a = tx_generate(cfg, C64, U64, 1e-3)
    _, b = tx_generate(cfg, C64, U64, 5e-3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])  # channels draw independently


# -- propagation --------------------------------------------------------------


def test_linear_round_trip():
    cfg = SignalConfig(n_wdm=3, n_sym=1024, f_os=8, seed=3)
    wave, idx = tx_generate(cfg, C64, U64, 1e-3)
    link = LinkConfig(gamma=0.0, nf=-math.inf)
    out = propagate(wave, link, 3e-3)
    # undo gain-restored CD only
    w = 2 * np.pi * np.fft.fftfreq(len(out), d=1.0 / (out.sample_rate_ghz * 1e9))
    back = np.fft.ifft(np.fft.fft(out.samples) * np.exp(-1j * link.beta2 * w**2 / 2 * link.length))
    assert _rms(back, wave.samples) / _rms(wave.samples) < 1e-9
    recs = rx_detect(out, cfg, link, 1, idx, C64, U64)
    assert _rms(recs.rx, _ideal(C64, U64, recs.tx_index)) < 1e-6


def test_spm_closed_form():
    p, n = 4e-3, 256
    link = LinkConfig(dispersion=0.0, alpha=0.0, nf=-math.inf, span_length=50.0, step=0.5)
    wave = WaveformGrid(np.full(n, 0.7 + 0.0j), 80.0)
    out = propagate(wave, link, p)
    expect = math.sqrt(p) * np.exp(1j * link.gamma * p * link.length)
    assert _rms(out.samples, expect) / math.sqrt(p) < 1e-9
    assert np.allclose(np.abs(np.fft.fft(out.samples)), np.abs(np.fft.fft(np.full(n, math.sqrt(p)))), atol=1e-9)


@settings(max_examples=5)
@given(p_dbm=st.floats(-5.0, 15.0), seed=st.integers(0, 1000))
def test_energy_conservation_lossless(p_dbm, seed):
    cfg = SignalConfig(n_wdm=3, n_sym=512, f_os=8, seed=seed)
    wave, _ = tx_generate(cfg, C64, mb_pmf(C64, 0.3), 1e-3)
    link = LinkConfig(alpha=0.0, nf=-math.inf, span_length=20.0, step=0.5)
    p = float(dbm2w(p_dbm))
    out = propagate(wave, link, p)
    assert out.power == pytest.approx(p, rel=1e-9)


def test_step_halving_convergence():
    cfg = SignalConfig(n_wdm=3, n_sym=1024, f_os=8, seed=3)
    p = 3 * float(dbm2w(2.0))
    wave, _ = tx_generate(cfg, C64, U64, p / 3)
    link = LinkConfig(nf=-math.inf)  # reference step h = 0.1 km
    a = propagate(wave, link, p).samples
    b = propagate(wave, link, p, step=0.05).samples
    assert _rms(a, b) / _rms(a) < 1e-4


def test_step_must_divide_span():
    wave = WaveformGrid(np.ones(64, dtype=complex), 80.0)
    with pytest.raises(ValueError):
        propagate(wave, LinkConfig(step=0.3), 1e-3)


def test_overflow_raises():
    wave = WaveformGrid(np.ones(64, dtype=complex), 80.0)
    with pytest.raises(SimulationError):
        propagate(wave, LinkConfig(nf=-math.inf, span_length=1.0, step=0.5, precision="single"), 1e60)


def test_low_power_matches_ase_only_snr():
    cfg = SignalConfig(n_wdm=1, n_sym=2**14, f_os=4, seed=6)
    link = LinkConfig(step=0.5)
    p = float(dbm2w(-10.0))
    wave, idx = tx_generate(cfg, C64, U64, p)
    recs = rx_detect(propagate(wave, link, p, seed=6), cfg, link, 0, idx, C64, U64)
    snr = effective_snr(per_point_stats(recs, C64, U64), U64)
    expect = 10 * math.log10(p / ase_variance(link, cfg.symbol_rate))
    assert abs(snr - expect) < 0.3


def test_records_count_and_determinism():
    cfg = SignalConfig(n_wdm=9, n_sym=512, f_os=24, spacing_ghz=25.0, seed=8)
    link = LinkConfig(step=5.0, precision="single")
    p = mb_pmf(C64, 0.4)

    def run():
        wave, idx = tx_generate(cfg, C64, p, 1e-3)
        return rx_detect(propagate(wave, link, 9e-3, seed=8), cfg, link, cfg.center_channel, idx, C64, p)

    a, b = run(), run()
    assert len(a) == cfg.n_sym - 2 * cfg.rrc_span
    assert np.array_equal(a.tx_index, b.tx_index)
    assert np.array_equal(a.rx, b.rx)


def test_rx_rejects_bad_channel_and_length():
    cfg = SignalConfig(n_wdm=1, n_sym=256, f_os=2)
    wave, idx = tx_generate(cfg, C64, U64, 1e-3)
    with pytest.raises(ValueError):
        rx_detect(wave, cfg, None, 1, idx, C64, U64)
    with pytest.raises(ValueError):
        rx_detect(wave, cfg.replace(n_sym=300), None, 0, idx, C64, U64)


# -- back to back -------------------------------------------------------------


def test_b2b_noiseless_hits_ceiling():
    cfg = SignalConfig(n_wdm=1, n_sym=2**12, f_os=2)
    recs = back_to_back(cfg, C64, U64, math.inf)
    assert effective_snr(per_point_stats(recs, C64, U64), U64) == SNR_CEILING_DB


@pytest.mark.parametrize("load", [10.0, 20.0])
def test_b2b_injected_snr(load):
    cfg = SignalConfig(n_wdm=1, n_sym=2**16, f_os=2, seed=3)
    recs = back_to_back(cfg, C64, U64, load)
    assert abs(effective_snr(per_point_stats(recs, C64, U64), U64) - load) < 0.1


def test_b2b_saturates_at_transceiver_ceiling():
    cfg = SignalConfig(n_wdm=1, n_sym=2**16, f_os=2, seed=3)
    recs = back_to_back(cfg, C64, U64, 60.0, snr_trx_db=18.0)
    assert abs(effective_snr(per_point_stats(recs, C64, U64), U64) - 18.0) < 0.1
    both = back_to_back(cfg, C64, U64, 18.0, snr_trx_db=18.0)
    assert abs(effective_snr(per_point_stats(both, C64, U64), U64) - (18.0 - 10 * math.log10(2))) < 0.1


@pytest.mark.parametrize("nu", [0.4, 0.8])
def test_b2b_shaped_equals_uniform(nu):
    cfg = SignalConfig(n_wdm=1, n_sym=2**16, f_os=2, seed=9)
    p = mb_pmf(C64, nu)
    for load in (15.0, 22.0):
        s_u = effective_snr(per_point_stats(back_to_back(cfg, C64, U64, load, 25.0), C64, U64), U64)
        s_p = effective_snr(per_point_stats(back_to_back(cfg, C64, p, load, 25.0), C64, p), p)
        assert abs(s_u - s_p) < 0.1


# -- record dumps -------------------------------------------------------------


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_record_dump_roundtrip(tmp_path, fmt):
    cfg = SignalConfig(n_wdm=1, n_sym=1024, f_os=2, seed=4)
    recs = back_to_back(cfg, C64, U64, 18.0)
    path = tmp_path / f"r.{fmt}"
    write_records(path, recs, config_hash="abc", seed=4, fmt=fmt)
    back, meta = read_records(path)
    assert meta["config_hash"] == "abc" and meta["seed"] == "4"
    assert np.array_equal(back.tx_index, recs.tx_index)
    assert np.array_equal(back.rx, recs.rx)


def test_record_dump_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"# other\n")
    with pytest.raises(ValueError):
        read_records(tmp_path / "x")
    with pytest.raises(ValueError):
        write_records(tmp_path / "y", back_to_back(SignalConfig(n_sym=256), C64, U64, 10.0), fmt="xml")
