import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from termspot.features import (
    FeatureConfig,
    FeatureError,
    FeatureMatrix,
    _levinson,
    _lpc_to_cepstrum,
    apply_mvn,
    extract_features,
    extract_span,
    load_external_features,
    save_features,
)

RATE = 16000


def sweep(seconds=1.0, f0=300.0, slope=400.0):
    t = np.arange(int(seconds * RATE)) / RATE
    return np.sin(2 * np.pi * (f0 + slope * t) * t)


class TestExtraction:
    def test_frame_count(self):
        m = extract_features(sweep(1.0), RATE, FeatureConfig(kind="mfcc"))
        assert m.data.shape == (98, 13)
        assert m.kind == "mfcc"
        assert not m.normalized

    def test_deltas_triple_dims(self):
        m = extract_features(sweep(1.0), RATE, FeatureConfig(kind="mfcc", add_deltas=True))
        assert m.data.shape == (98, 39)

    def test_silence_finite_and_constant(self):
        for kind in ("mfcc", "plp"):
            m = extract_features(np.zeros(RATE), RATE, FeatureConfig(kind=kind))
            assert np.isfinite(m.data).all()
            assert np.allclose(m.data, m.data[0], atol=1e-5), kind

    def test_too_short(self):
        with pytest.raises(FeatureError, match="shorter than one"):
            extract_features(np.zeros(100), RATE, FeatureConfig(kind="mfcc"))

    def test_deterministic(self):
        a = extract_features(sweep(), RATE, FeatureConfig(kind="plp"))
        b = extract_features(sweep(), RATE, FeatureConfig(kind="plp"))
        assert np.array_equal(a.data, b.data)

    def test_int16_and_float_agree(self):
        f = sweep(0.5) * 0.5
        i = (f * 32768.0).astype(np.int16)
        mf = extract_features(f, RATE, FeatureConfig(kind="mfcc"))
        mi = extract_features(i, RATE, FeatureConfig(kind="mfcc"))
        # int16 quantization noise only
        assert np.allclose(mf.data, mi.data, atol=0.2)

    def test_shift_sensitivity(self):
        # shifting the input by one hop shifts the matrix by one row
        sig = np.random.default_rng(5).uniform(-0.5, 0.5, RATE)
        a = extract_features(sig, RATE, FeatureConfig(kind="mfcc"))
        b = extract_features(sig[160:], RATE, FeatureConfig(kind="mfcc"))
        assert np.allclose(b.data[1:], a.data[2 : 1 + b.frames], atol=1e-6)

    def test_external_kind_not_computable(self):
        with pytest.raises(FeatureError, match="imported"):
            extract_features(sweep(), RATE, FeatureConfig(kind="external"))

    def test_plp_needs_enough_bands(self):
        with pytest.raises(FeatureError, match="Bark bands"):
            extract_features(sweep(), RATE, FeatureConfig(kind="plp", num_filters=8, num_coefficients=8))

    def test_config_validation(self):
        with pytest.raises(FeatureError):
            FeatureConfig(kind="mfcc", num_coefficients=30, num_filters=26)
        with pytest.raises(FeatureError):
            FeatureConfig(kind="mfcc", pre_emphasis=1.0)
        with pytest.raises(FeatureError):
            FeatureConfig(kind="gabor")


class TestGolden:
    """Lock the exact DSP chain (filterbanks, equal loudness, AR fit)."""

    def test_mfcc_golden(self):
        m = extract_features(sweep(0.5), RATE, FeatureConfig(kind="mfcc"))
        assert m.data.shape == (48, 13)
        np.testing.assert_allclose(
            m.data[0, :5],
            [-57.61333465576172, 12.48902702331543, 5.574305534362793,
             1.8723950386047363, -1.0615736246109009],
            rtol=1e-5,
        )
        np.testing.assert_allclose(
            m.data[20, :5],
            [-53.79439163208008, 11.442994117736816, 2.6152381896972656,
             -2.378404378890991, -5.309756755828857],
            rtol=1e-5,
        )

    def test_plp_golden(self):
        p = extract_features(sweep(0.5), RATE, FeatureConfig(kind="plp"))
        assert p.data.shape == (48, 13)
        np.testing.assert_allclose(
            p.data[0, :5],
            [-2.3114073276519775, 0.4575601816177368, 0.10604805499315262,
             -0.20496439933776855, -0.31987616419792175],
            rtol=1e-5,
        )
        np.testing.assert_allclose(
            p.data[20, :5],
            [-2.3384287357330322, 0.3041563034057617, -0.2364330142736435,
             -0.5517764687538147, -0.48985379934310913],
            rtol=1e-5,
        )

    def test_ar_chain_against_spectral_oracle(self):
        # Levinson + cepstral recursion must reproduce the model cepstrum
        # computed independently from the log spectrum.
        rng = np.random.default_rng(3)
        for _ in range(5):
            ks = rng.uniform(-0.8, 0.8, 4)
            a = np.array([1.0])
            for k in ks:
                a = np.concatenate([a, [0.0]]) + k * np.concatenate([[0.0], a[::-1]])
            g2 = rng.uniform(0.5, 2.0)
            ngrid = 4096
            w = np.arange(ngrid // 2 + 1) * 2 * np.pi / ngrid
            spec = g2 / np.abs(np.polyval(a[::-1], np.exp(1j * w))) ** 2
            r = np.fft.irfft(spec)
            a_hat, e_hat = _levinson(r[None, :5], 4)
            cep = _lpc_to_cepstrum(a_hat, e_hat, 8)[0]
            c_oracle = np.fft.irfft(np.log(spec))
            np.testing.assert_allclose(a_hat[0], a, atol=1e-8)
            np.testing.assert_allclose(e_hat[0], g2, atol=1e-8)
            np.testing.assert_allclose(cep[1:8], c_oracle[1:8], atol=1e-6)
            assert cep[0] == pytest.approx(c_oracle[0], abs=1e-6)


class TestMVN:
    @given(
        frames=st.integers(2, 40),
        dims=st.integers(1, 8),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=50, deadline=None)
    def test_postconditions(self, frames, dims, seed):
        rng = np.random.default_rng(seed)
        data = rng.uniform(-5, 5, (frames, dims)).astype(np.float32)
        data[0] += 1.0  # keep dims non-constant
        fm = FeatureMatrix(data, 0.01, 0.025, kind="mfcc")
        out = apply_mvn(fm)
        assert np.abs(out.data.mean(axis=0)).max() < 1e-6
        assert np.abs(out.data.std(axis=0) - 1).max() < 1e-6
        assert out.normalized
        assert np.array_equal(fm.data, data)  # input unchanged

    def test_constant_dim_zeroed(self):
        data = np.ones((10, 3), dtype=np.float32)
        data[:, 1] = np.arange(10)
        out = apply_mvn(FeatureMatrix(data, 0.01, 0.025))
        assert np.all(out.data[:, 0] == 0)
        assert np.all(out.data[:, 2] == 0)

    def test_single_frame_all_zero(self):
        out = apply_mvn(FeatureMatrix(np.array([[3.0, -1.0]], dtype=np.float32), 0.01, 0.025))
        assert np.all(out.data == 0)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        fm = FeatureMatrix(rng.uniform(-2, 2, (30, 5)).astype(np.float32), 0.01, 0.025)
        once = apply_mvn(fm)
        twice = apply_mvn(once)
        assert np.allclose(once.data, twice.data, atol=1e-6)


class TestExtractSpan:
    def _fm(self, frames=98):
        data = np.arange(frames * 3, dtype=np.float32).reshape(frames, 3)
        return FeatureMatrix(data, 0.01, 0.025, kind="mfcc", normalized=True)

    def test_clamped(self):
        out = extract_span(self._fm(), 0.50, 1.00)
        assert out.frames == 48
        assert np.array_equal(out.data, self._fm().data[50:98])

    def test_identity(self):
        fm = self._fm()
        out = extract_span(fm, 0.0, 98 * 0.01)
        assert np.array_equal(out.data, fm.data)

    def test_subframe_span(self):
        out = extract_span(self._fm(), 0.001, 0.002)
        assert out.frames == 1
        assert np.array_equal(out.data, self._fm().data[0:1])

    def test_metadata_retained(self):
        out = extract_span(self._fm(), 0.1, 0.3)
        assert out.kind == "mfcc"
        assert out.normalized
        assert out.frame_shift == self._fm().frame_shift

    def test_zero_frames(self):
        with pytest.raises(FeatureError, match="zero frames"):
            extract_span(self._fm(10), 5.0, 6.0)

    def test_float_slop_guard(self):
        # 0.5/0.01 rounds below 50.0 in bare float arithmetic
        out = extract_span(self._fm(), 0.5, 0.6)
        assert np.array_equal(out.data, self._fm().data[50:60])


class TestSptf:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        fm = FeatureMatrix(rng.normal(size=(98, 13)).astype(np.float32), 0.01, 0.025, kind="mfcc")
        save_features(fm, tmp_path / "x.sptf")
        back = load_external_features(tmp_path / "x.sptf")
        assert np.array_equal(back.data, fm.data)
        assert back.frame_shift == fm.frame_shift
        assert back.frame_length == fm.frame_length
        assert back.kind == "external"

    def test_header_fidelity(self, tmp_path):
        fm = FeatureMatrix(np.zeros((2, 2), np.float32) + 1, 0.01, 0.025)
        save_features(fm, tmp_path / "x.sptf")
        back = load_external_features(tmp_path / "x.sptf")
        assert back.frame_shift == float(np.float32(0.01))

    def test_truncated_payload(self, tmp_path):
        fm = FeatureMatrix(np.ones((100, 4), np.float32), 0.01, 0.025)
        save_features(fm, tmp_path / "x.sptf")
        blob = (tmp_path / "x.sptf").read_bytes()
        (tmp_path / "cut.sptf").write_bytes(blob[: len(blob) - 80 * 4 * 4])
        with pytest.raises(FeatureError, match="truncated payload"):
            load_external_features(tmp_path / "cut.sptf")

    def test_oversized_payload(self, tmp_path):
        fm = FeatureMatrix(np.ones((10, 4), np.float32), 0.01, 0.025)
        save_features(fm, tmp_path / "x.sptf")
        blob = (tmp_path / "x.sptf").read_bytes()
        (tmp_path / "big.sptf").write_bytes(blob + b"\x00\x00\x00\x00")
        with pytest.raises(FeatureError, match="oversized payload"):
            load_external_features(tmp_path / "big.sptf")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.sptf").write_bytes(b"WAVE1" + b"\x00" * 40)
        with pytest.raises(FeatureError, match="bad magic"):
            load_external_features(tmp_path / "x.sptf")

    def test_non_finite_rejected(self, tmp_path):
        fm = FeatureMatrix(np.ones((2, 2), np.float32), 0.01, 0.025)
        save_features(fm, tmp_path / "x.sptf")
        blob = bytearray((tmp_path / "x.sptf").read_bytes())
        blob[-4:] = np.array([np.inf], dtype="<f4").tobytes()
        (tmp_path / "x.sptf").write_bytes(bytes(blob))
        with pytest.raises(FeatureError, match="non-finite"):
            load_external_features(tmp_path / "x.sptf")

    def test_unwritable_path(self, tmp_path):
        fm = FeatureMatrix(np.ones((2, 2), np.float32), 0.01, 0.025)
        with pytest.raises(OSError):
            save_features(fm, tmp_path / "no_such_dir" / "x.sptf")


class TestFeatureMatrix:
    def test_invariants(self):
        with pytest.raises(FeatureError):
            FeatureMatrix(np.zeros((0, 3), np.float32), 0.01, 0.025)
        with pytest.raises(FeatureError):
            FeatureMatrix(np.full((2, 2), np.nan, np.float32), 0.01, 0.025)
        with pytest.raises(FeatureError):
            FeatureMatrix(np.ones((2, 2), np.float32), 0.0, 0.025)
        with pytest.raises(FeatureError):
            FeatureMatrix(np.ones((2, 2), np.float32), 0.02, 0.01)

    def test_equality(self):
        a = FeatureMatrix(np.ones((2, 2), np.float32), 0.01, 0.025, kind="mfcc")
        b = FeatureMatrix(np.ones((2, 2), np.float32), 0.01, 0.025, kind="mfcc")
        c = FeatureMatrix(np.ones((2, 2), np.float32), 0.01, 0.025, kind="plp")
        assert a == b
        assert a != c
