"""File formats and the synthetic generator: round trips, byte-level
layout, error taxonomy, determinism."""

from pathlib import Path

import numpy as np
import pytest

from spdhash.dataio import (
    FeatureArchive,
    Record,
    SynthConfig,
    archive_bytes,
    checkpoint_bytes,
    read_archive,
    read_checkpoint,
    synth_generate,
    write_archive,
    write_checkpoint,
)
from spdhash.errors import (
    CorruptHeaderError,
    DatasetError,
    DomainError,
    FileFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from spdhash.hashnet import Model, init_model
from spdhash.objective import IMAGE, VIDEO

DATA_DIR = Path(__file__).parent / "data"


def golden_archive() -> FeatureArchive:
    """Hand-built archive mirrored byte for byte by tests/data/golden.spdh."""
    return FeatureArchive(
        d0=3,
        records=(
            Record(label=1, modality=VIDEO,
                   features=np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])),
            Record(label=2, modality=IMAGE,
                   features=np.array([[-1.0, 0.5, 7.0]])),
        ),
    )


def golden_model() -> Model:
    """Hand-built model mirrored byte for byte by tests/data/golden.spdm."""
    return Model(
        W_enc=np.array([[1.0, 2.0], [3.0, 4.0]]),
        b_enc=np.array([0.5, -0.5]),
        W_e=np.array([[1.0, 0.0], [0.0, 1.0]]),
        b_e=np.array([0.0, 0.0]),
        W_r=np.arange(1.0, 9.0).reshape(2, 4),
        b_r=np.array([0.25, -0.25]),
        epsilon=1e-3,
        encoder_activation="tanh",
    )


class TestSynth:
    def test_record_count_accounting(self):
        archive = synth_generate(SynthConfig())
        videos = archive.by_modality(VIDEO)
        images = archive.by_modality(IMAGE)
        assert len(videos) == 200 and len(images) == 200
        assert archive.d0 == 32
        assert all(r.features.shape == (15, 32) for _, r in videos)
        assert all(r.features.shape == (1, 32) for _, r in images)

    def test_images_are_frames_of_videos(self):
        archive = synth_generate(SynthConfig(classes=3, videos_per_class=2))
        video_frames = {
            r.label: [f for _, rec in archive.by_modality(VIDEO)
                      if rec.label == r.label for f in rec.features]
            for _, r in archive.by_modality(IMAGE)
        }
        for _, img in archive.by_modality(IMAGE):
            assert any(
                np.array_equal(img.features[0], f) for f in video_frames[img.label]
            )

    def test_same_seed_byte_identical(self):
        cfg = SynthConfig(classes=3, videos_per_class=4, frames_per_video=6, d0=8)
        assert archive_bytes(synth_generate(cfg)) == archive_bytes(synth_generate(cfg))

    def test_tiny_noise_collapses_to_centers(self):
        cfg = SynthConfig(
            classes=4, videos_per_class=5, frames_per_video=6, d0=8,
            noise_scale=1e-9, drift_scale=1e-9, seed=3,
        )
        archive = synth_generate(cfg)
        means = {}
        for _, rec in archive.by_modality(VIDEO):
            means.setdefault(rec.label, []).append(rec.features.mean(axis=0))
        centers = {lab: np.mean(v, axis=0) for lab, v in means.items()}
        for _, rec in archive.by_modality(VIDEO):
            own = np.linalg.norm(rec.features.mean(axis=0) - centers[rec.label])
            other = min(
                np.linalg.norm(rec.features.mean(axis=0) - c)
                for lab, c in centers.items()
                if lab != rec.label
            )
            assert own < 1e-6 and other > 0.1

    def test_sample_streams_share_centers_hold_disjoint_data(self):
        base = dict(classes=3, videos_per_class=12, frames_per_video=8, d0=6,
                    noise_scale=0.05, drift_scale=0.01, seed=9)
        a0 = synth_generate(SynthConfig(**base, sample_stream=0))
        a1 = synth_generate(SynthConfig(**base, sample_stream=1))
        assert archive_bytes(a0) != archive_bytes(a1)

        def class_means(archive):
            sums = {}
            for _, rec in archive.by_modality(VIDEO):
                sums.setdefault(rec.label, []).append(rec.features.mean(axis=0))
            return {lab: np.mean(v, axis=0) for lab, v in sums.items()}

        m0, m1 = class_means(a0), class_means(a1)
        for lab in m0:
            assert np.linalg.norm(m0[lab] - m1[lab]) < 0.15

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SynthConfig(classes=1)
        with pytest.raises(DomainError):
            SynthConfig(frames_per_video=31)
        with pytest.raises(DomainError):
            SynthConfig(noise_scale=0.0)


class TestRecordValidation:
    def test_image_must_be_single_row(self):
        with pytest.raises(DatasetError):
            Record(label=0, modality=IMAGE, features=np.zeros((2, 3)))

    def test_video_frame_limit(self):
        with pytest.raises(DatasetError):
            Record(label=0, modality=VIDEO, features=np.zeros((31, 3)))

    def test_unknown_modality(self):
        with pytest.raises(DatasetError):
            Record(label=0, modality="audio", features=np.zeros((1, 3)))

    def test_archive_width_consistency(self):
        rec = Record(label=0, modality=IMAGE, features=np.zeros((1, 3)))
        with pytest.raises(DatasetError):
            FeatureArchive(d0=4, records=(rec,))


class TestArchiveFormat:
    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(classes=3, videos_per_class=4, frames_per_video=5, d0=6)
        archive = synth_generate(cfg)
        path = tmp_path / "a.spdh"
        write_archive(archive, path)
        back = read_archive(path)
        assert back.d0 == archive.d0
        assert len(back.records) == len(archive.records)
        for orig, got in zip(archive.records, back.records):
            assert got.label == orig.label and got.modality == orig.modality
            # storage narrows to f32; the read value is that f32 exactly
            assert np.array_equal(
                got.features, orig.features.astype(np.float32).astype(np.float64)
            )

    def test_reserialization_byte_identical(self, tmp_path):
        archive = synth_generate(SynthConfig(classes=2, videos_per_class=3,
                                             frames_per_video=4, d0=5))
        path = tmp_path / "a.spdh"
        write_archive(archive, path)
        assert archive_bytes(read_archive(path)) == path.read_bytes()

    def test_header_layout_little_endian(self):
        data = archive_bytes(golden_archive())
        assert data[:4] == b"SPDH"
        assert data[4:8] == b"\x01\x00\x00\x00"  # version 1
        assert data[8:12] == b"\x03\x00\x00\x00"  # d0 = 3
        assert data[12:16] == b"\x02\x00\x00\x00"  # 2 records
        # first record: label 1, video flag, 2 frames
        assert data[16:20] == b"\x01\x00\x00\x00"
        assert data[20:21] == b"\x01"
        assert data[21:25] == b"\x02\x00\x00\x00"
        assert data[25:29] == np.float32(0.0).tobytes()
        assert data[29:33] == np.float32(1.0).tobytes()

    def test_golden_fixture(self, tmp_path):
        golden = DATA_DIR / "golden.spdh"
        assert archive_bytes(golden_archive()) == golden.read_bytes()
        back = read_archive(golden)
        assert back.records[0].features[1, 2] == 5.0
        assert back.records[1].features[0, 0] == -1.0

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.spdh"
        path.write_bytes(b"JUNK" + archive_bytes(golden_archive())[4:])
        with pytest.raises(CorruptHeaderError):
            read_archive(path)

    def test_version_mismatch(self, tmp_path):
        data = bytearray(archive_bytes(golden_archive()))
        data[4] = 9
        path = tmp_path / "bad.spdh"
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            read_archive(path)

    @pytest.mark.parametrize("cut", [2, 10, 20, 30])
    def test_truncation(self, tmp_path, cut):
        data = archive_bytes(golden_archive())
        path = tmp_path / "cut.spdh"
        path.write_bytes(data[:-cut])
        with pytest.raises(TruncatedFileError):
            read_archive(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "long.spdh"
        path.write_bytes(archive_bytes(golden_archive()) + b"\x00\x01")
        with pytest.raises(CorruptHeaderError):
            read_archive(path)

    def test_invalid_modality_flag(self, tmp_path):
        data = bytearray(archive_bytes(golden_archive()))
        data[20] = 7  # first record's modality byte
        path = tmp_path / "bad.spdh"
        path.write_bytes(bytes(data))
        with pytest.raises(FileFormatError):
            read_archive(path)


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        model = init_model(d0=7, d=5, K=6, epsilon=1e-3, seed=13)
        path = tmp_path / "m.spdm"
        write_checkpoint(model, path)
        back = read_checkpoint(path)
        for (_, a, _), (_, b, _) in zip(model.parameters(), back.parameters()):
            assert np.array_equal(a, b)
        assert back.epsilon == model.epsilon
        assert back.encoder_activation == model.encoder_activation

    def test_tanh_variant_round_trip(self, tmp_path):
        model = init_model(d0=4, d=3, K=2, epsilon=2e-3, seed=1,
                           encoder_activation="tanh")
        path = tmp_path / "m.spdm"
        write_checkpoint(model, path)
        back = read_checkpoint(path)
        assert back.encoder_activation == "tanh"
        assert back.epsilon == 2e-3
        assert np.array_equal(back.W_r, model.W_r)

    def test_header_layout_little_endian(self):
        data = checkpoint_bytes(golden_model())
        assert data[:4] == b"SPDM"
        assert data[4:8] == b"\x01\x00\x00\x00"
        assert data[8:12] == b"\x02\x00\x00\x00"  # d0
        assert data[12:16] == b"\x02\x00\x00\x00"  # d
        assert data[16:20] == b"\x02\x00\x00\x00"  # K
        assert data[20:28] == np.float64(1e-3).tobytes()
        assert data[28:29] == b"\x01"  # tanh flag
        assert data[29:37] == np.float64(1.0).tobytes()  # W_enc[0, 0]

    def test_golden_fixture(self):
        golden = DATA_DIR / "golden.spdm"
        assert checkpoint_bytes(golden_model()) == golden.read_bytes()
        back = read_checkpoint(golden)
        assert back.W_r[1, 3] == 8.0

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.spdm"
        path.write_bytes(b"NOPE" + checkpoint_bytes(golden_model())[4:])
        with pytest.raises(CorruptHeaderError):
            read_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        data = bytearray(checkpoint_bytes(golden_model()))
        data[4] = 2
        path = tmp_path / "bad.spdm"
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            read_checkpoint(path)

    @pytest.mark.parametrize("cut", [1, 8, 40])
    def test_truncation(self, tmp_path, cut):
        data = checkpoint_bytes(golden_model())
        path = tmp_path / "cut.spdm"
        path.write_bytes(data[:-cut])
        with pytest.raises(TruncatedFileError):
            read_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "long.spdm"
        path.write_bytes(checkpoint_bytes(golden_model()) + b"\xff")
        with pytest.raises(CorruptHeaderError):
            read_checkpoint(path)

    def test_invalid_activation_flag(self, tmp_path):
        data = bytearray(checkpoint_bytes(golden_model()))
        data[28] = 9
        path = tmp_path / "bad.spdm"
        path.write_bytes(bytes(data))
        with pytest.raises(FileFormatError):
            read_checkpoint(path)
