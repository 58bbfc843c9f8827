import numpy as np
import pytest
import torch
from scipy.io import wavfile

from cpcl.audio import (
    MfccConfig,
    compute_mfcc,
    frame_count,
    hz_to_mel,
    lift_audio,
    log_mel_energies,
    mel_filter_centers,
    mel_to_hz,
    read_wav,
)
from cpcl.features import InvariantError

CFG = MfccConfig()  # 16 kHz, 25 ms / 10 ms, 40 mels, 40 coeffs


def test_config_invariants():
    with pytest.raises(InvariantError):
        MfccConfig(frame_len=600, n_fft=512)
    with pytest.raises(InvariantError):
        MfccConfig(hop=0)
    with pytest.raises(InvariantError):
        MfccConfig(n_mfcc=41, n_mels=40)
    with pytest.raises(InvariantError):
        MfccConfig(fmin=9000.0, fmax=8000.0)


def test_mel_scale_round_trip():
    freqs = np.array([0.0, 440.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-9)
    # HTK anchor: 1000 Hz -> ~1000 mel
    assert abs(hz_to_mel(1000.0) - 999.99) < 0.1


def test_zero_signal_gives_constant_log_floor_frames():
    signal = np.zeros(800)
    mfcc = compute_mfcc(signal, CFG)
    # constant log(log_floor) rows: after orthonormal DCT-II only coeff 0 remains
    expected_c0 = np.log(CFG.log_floor) * np.sqrt(CFG.n_mels)
    np.testing.assert_allclose(mfcc[:, 0], expected_c0, rtol=1e-12)
    np.testing.assert_allclose(mfcc[:, 1:], 0.0, atol=1e-9)


def test_frame_count_arithmetic():
    signal = np.zeros(720)
    mfcc = compute_mfcc(signal, CFG)
    assert mfcc.shape == (3, CFG.n_mfcc)
    assert frame_count(720, CFG) == 3


def test_too_short_signal_and_nan():
    with pytest.raises(InvariantError):
        compute_mfcc(np.zeros(100), CFG)
    bad = np.zeros(800)
    bad[13] = np.nan
    with pytest.raises(InvariantError):
        compute_mfcc(bad, CFG)


def test_sine_energy_lands_in_bracketing_filter():
    # independent oracle: rebuild center frequencies from the HTK formulas
    # and check the argmax filter's support contains 440 Hz
    t = np.arange(16000) / 16000.0
    signal = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    energies = log_mel_energies(signal, CFG)  # pre-DCT

    edges_mel = np.linspace(hz_to_mel(CFG.fmin), hz_to_mel(CFG.fmax), CFG.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    centers = mel_filter_centers(CFG)
    np.testing.assert_allclose(centers, edges_hz[1:-1])

    for frame in energies:
        m = int(np.argmax(frame))
        lo, hi = edges_hz[m], edges_hz[m + 2]  # filter m's support
        assert lo <= 440.0 <= hi


def test_time_shift_by_hop_shifts_frames():
    rng = np.random.default_rng(3)
    base = rng.uniform(-0.5, 0.5, size=4000)
    shifted = np.concatenate([rng.uniform(-0.5, 0.5, size=CFG.hop), base])
    a = compute_mfcc(base, CFG)
    b = compute_mfcc(shifted, CFG)
    # frame j of the shifted signal sees the same samples as frame j-1 of base
    np.testing.assert_allclose(b[1 : len(a) + 1 - 1], a[: len(a) - 1], atol=1e-9)


def test_energy_monotonicity_in_gain():
    rng = np.random.default_rng(5)
    signal = rng.uniform(-0.4, 0.4, size=2000)
    quiet = compute_mfcc(signal, CFG)
    loud = compute_mfcc(2.0 * signal, CFG)
    assert np.all(loud[:, 0] > quiet[:, 0])


# --- lift ------------------------------------------------------------------


def test_lift_zero_projection_gives_bias():
    mfcc = np.ones((4, 3))
    proj = torch.zeros(3, 5, dtype=torch.float64)
    bias = torch.arange(5, dtype=torch.float64)
    out = lift_audio(mfcc, proj, bias)
    assert out.shape == (4, 5)
    for row in out:
        np.testing.assert_array_equal(row.numpy(), bias.numpy())


def test_lift_identity():
    mfcc = np.random.default_rng(0).standard_normal((3, 4))
    out = lift_audio(mfcc, torch.eye(4, dtype=torch.float64),
                     torch.zeros(4, dtype=torch.float64))
    np.testing.assert_allclose(out.numpy(), mfcc, atol=0)


def test_lift_matches_triple_loop_oracle():
    rng = np.random.default_rng(11)
    mfcc = rng.standard_normal((5, 3))
    proj_np = rng.standard_normal((3, 6))
    bias_np = rng.standard_normal(6)
    out = lift_audio(mfcc, torch.from_numpy(proj_np), torch.from_numpy(bias_np))

    oracle = np.zeros((5, 6))
    for i in range(5):
        for j in range(6):
            acc = bias_np[j]
            for k in range(3):
                acc += mfcc[i, k] * proj_np[k, j]
            oracle[i, j] = acc
    np.testing.assert_allclose(out.numpy(), oracle, atol=1e-12)


def test_lift_dimension_mismatch():
    with pytest.raises(InvariantError):
        lift_audio(np.ones((2, 3)), torch.zeros(4, 5, dtype=torch.float64),
                   torch.zeros(5, dtype=torch.float64))


def test_lift_gradient_matches_finite_differences():
    from cpcl.gradcheck import grad_check

    report = grad_check("lift_audio", seed=0)
    assert report.max_rel_err <= 1e-4


# --- wav reading -----------------------------------------------------------


def test_read_wav_mono_and_stereo(tmp_path):
    rate = 16000
    samples = (np.sin(2 * np.pi * 440 * np.arange(1600) / rate) * 20000).astype(np.int16)
    mono = tmp_path / "mono.wav"
    wavfile.write(mono, rate, samples)
    r, s = read_wav(mono)
    assert r == rate
    assert s.shape == (1600,)
    assert np.all(np.abs(s) <= 1.0)

    stereo = tmp_path / "stereo.wav"
    wavfile.write(stereo, rate, np.stack([samples, np.zeros_like(samples)], axis=1))
    r2, s2 = read_wav(stereo)
    np.testing.assert_allclose(s2, s / 2.0, atol=1e-12)
