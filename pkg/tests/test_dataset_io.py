import numpy as np
import pytest

from pressnet.core import (
    DatasetManifest,
    DegenerateInputError,
    InvalidConfigError,
    InvalidInputError,
    Modality,
    PhysicalVector,
    Posture,
    PressureMap,
    SampleRecord,
    VisionImage,
)
from pressnet.data.io import (
    NormalizationRanges,
    load_dataset,
    load_image_png,
    load_map_csv,
    normalize_sample,
    save_dataset,
    save_image_png,
    save_map_csv,
    split_by_subject,
)


def record_with_beta(subject, beta):
    return SampleRecord(
        subject_id=subject,
        pose_id="p00",
        posture=Posture.SUPINE,
        vision=VisionImage(np.full((4, 4, 3), 0.5), Modality.RGB),
        pressure=PressureMap(np.full((2, 2), 0.25)),
        physique=PhysicalVector(beta),
    )


class TestNormalizationRanges:
    def test_from_samples(self):
        samples = [record_with_beta("a", (60.0, 160.0, 0.0)), record_with_beta("b", (90.0, 190.0, 1.0))]
        r = NormalizationRanges.from_samples(samples)
        assert r.lo == (60.0, 160.0, 0.0) and r.hi == (90.0, 190.0, 1.0)

    def test_training_extremes_map_to_unit_interval(self):
        r = NormalizationRanges(lo=(60.0, 160.0, 0.0), hi=(90.0, 190.0, 1.0))
        top = r.normalize_beta(PhysicalVector((90.0, 175.0, 1.0)))
        assert top.normalized
        assert top.entries[0] == 1.0
        assert top.entries[1] == pytest.approx(0.5)
        bottom = r.normalize_beta(PhysicalVector((60.0, 160.0, 0.0)))
        assert bottom.entries[0] == 0.0 and bottom.entries[1] == 0.0

    def test_gender_slot_passes_through(self):
        r = NormalizationRanges(lo=(60.0, 160.0, 0.0), hi=(90.0, 190.0, 1.0))
        assert r.normalize_beta(PhysicalVector((75.0, 175.0, 1.0))).entries[2] == 1.0
        assert r.normalize_beta(PhysicalVector((75.0, 175.0, 0.0))).entries[2] == 0.0

    def test_out_of_range_clips(self):
        r = NormalizationRanges(lo=(60.0,), hi=(90.0,))
        assert r.normalize_beta(PhysicalVector((120.0,))).entries[0] == 1.0
        assert r.normalize_beta(PhysicalVector((10.0,))).entries[0] == 0.0

    def test_zero_range_maps_to_half(self):
        r = NormalizationRanges(lo=(70.0, 170.0), hi=(70.0, 190.0))
        assert r.normalize_beta(PhysicalVector((70.0, 180.0))).entries[0] == 0.5

    def test_length_mismatch_rejected(self):
        r = NormalizationRanges(lo=(60.0,), hi=(90.0,))
        with pytest.raises(InvalidInputError):
            r.normalize_beta(PhysicalVector((70.0, 170.0)))

    def test_double_normalization_rejected(self):
        r = NormalizationRanges(lo=(60.0,), hi=(90.0,))
        normalized = r.normalize_beta(PhysicalVector((70.0,)))
        with pytest.raises(InvalidInputError):
            r.normalize_beta(normalized)

    def test_validation(self):
        with pytest.raises(InvalidConfigError):
            NormalizationRanges(lo=(), hi=())
        with pytest.raises(InvalidConfigError):
            NormalizationRanges(lo=(2.0,), hi=(1.0,))
        with pytest.raises(InvalidInputError):
            NormalizationRanges.from_samples([])

    def test_mixed_lengths_rejected(self):
        samples = [record_with_beta("a", (60.0,)), record_with_beta("b", (90.0, 190.0))]
        with pytest.raises(InvalidInputError):
            NormalizationRanges.from_samples(samples)

    def test_dict_round_trip(self):
        r = NormalizationRanges(lo=(60.0, 160.0), hi=(90.0, 190.0))
        assert NormalizationRanges.from_dict(r.to_dict()) == r


class TestNormalizeSample:
    RANGES = NormalizationRanges(lo=(60.0,), hi=(90.0,))

    def test_pm_peak_maps_to_one(self):
        raw_pm = np.array([[0.0, 128.0], [256.0, 512.0]])
        rec = normalize_sample(
            np.random.default_rng(0).uniform(0, 255, (4, 4, 3)),
            raw_pm,
            PhysicalVector((75.0,)),
            self.RANGES,
            modality=Modality.RGB,
            posture=Posture.SUPINE,
        )
        assert rec.pressure.values[1, 1] == 1.0
        assert rec.pressure.values[0, 0] == 0.0
        assert rec.pressure.raw_peak == 512.0
        assert rec.pressure.values[0, 1] == pytest.approx(0.25)

    def test_vision_channels_scaled_independently(self):
        raw = np.stack([np.linspace(0, 10, 16).reshape(4, 4),
                        np.linspace(5, 6, 16).reshape(4, 4),
                        np.linspace(-3, 3, 16).reshape(4, 4)], axis=-1)
        rec = normalize_sample(raw, np.array([[1.0]]), PhysicalVector((75.0,)), self.RANGES,
                               modality=Modality.RGB, posture=Posture.SUPINE)
        for ch in range(3):
            assert rec.vision.values[:, :, ch].min() == 0.0
            assert rec.vision.values[:, :, ch].max() == 1.0

    def test_beta_at_training_max_is_one(self):
        rec = normalize_sample(np.random.default_rng(1).uniform(0, 1, (4, 4, 3)),
                               np.array([[2.0]]), PhysicalVector((90.0,)), self.RANGES,
                               modality=Modality.RGB, posture=Posture.SUPINE)
        assert rec.physique.entries[0] == 1.0 and rec.physique.normalized

    def test_constant_vision_channel_rejected(self):
        raw = np.random.default_rng(2).uniform(0, 1, (4, 4, 3))
        raw[:, :, 1] = 0.7
        with pytest.raises(DegenerateInputError):
            normalize_sample(raw, np.array([[1.0]]), PhysicalVector((75.0,)), self.RANGES,
                             modality=Modality.RGB, posture=Posture.SUPINE)

    def test_zero_pressure_rejected(self):
        with pytest.raises(DegenerateInputError):
            normalize_sample(np.random.default_rng(3).uniform(0, 1, (4, 4, 3)),
                             np.zeros((2, 2)), PhysicalVector((75.0,)), self.RANGES,
                             modality=Modality.RGB, posture=Posture.SUPINE)

    def test_negative_pressure_rejected(self):
        with pytest.raises(InvalidInputError):
            normalize_sample(np.random.default_rng(4).uniform(0, 1, (4, 4, 3)),
                             np.array([[-1.0, 2.0]]), PhysicalVector((75.0,)), self.RANGES,
                             modality=Modality.RGB, posture=Posture.SUPINE)


class TestMapCsv:
    def test_round_trip(self, tmp_path):
        values = np.random.default_rng(5).random((6, 4))
        path = tmp_path / "map.csv"
        save_map_csv(path, values)
        loaded = load_map_csv(path)
        np.testing.assert_allclose(loaded, values, rtol=1e-8, atol=1e-12)

    def test_write_is_idempotent_after_one_trip(self, tmp_path):
        # 9 significant digits is the storage precision; a second trip is exact
        values = np.random.default_rng(6).random((3, 3))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_map_csv(p1, values)
        once = load_map_csv(p1)
        save_map_csv(p2, once)
        np.testing.assert_array_equal(load_map_csv(p2), once)

    def test_single_row_stays_2d(self, tmp_path):
        path = tmp_path / "row.csv"
        save_map_csv(path, np.array([[0.1, 0.2, 0.3]]))
        assert load_map_csv(path).shape == (1, 3)


class TestImagePng:
    def test_rgb_round_trip(self, tmp_path):
        img = VisionImage(np.random.default_rng(7).random((8, 6, 3)), Modality.RGB)
        path = tmp_path / "img.png"
        save_image_png(path, img)
        loaded = load_image_png(path, Modality.RGB)
        assert loaded.values.shape == (8, 6, 3)
        assert np.abs(loaded.values - img.values).max() <= 0.5 / 255.0 + 1e-12

    def test_lwir_round_trip_is_16_bit(self, tmp_path):
        img = VisionImage(np.random.default_rng(8).random((8, 6)), Modality.LWIR)
        path = tmp_path / "img.png"
        save_image_png(path, img)
        loaded = load_image_png(path, Modality.LWIR)
        assert loaded.channels == 1
        assert np.abs(loaded.values - img.values).max() <= 0.5 / 65535.0 + 1e-12


class TestDatasetDirectory:
    def test_round_trip(self, tiny_manifest, tmp_path):
        save_dataset(tiny_manifest, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert loaded.split == tiny_manifest.split
        assert loaded.pixel_area_c == tiny_manifest.pixel_area_c
        assert len(loaded.samples) == len(tiny_manifest.samples)
        for a, b in zip(loaded.samples, tiny_manifest.samples):
            assert (a.subject_id, a.pose_id, a.posture) == (b.subject_id, b.pose_id, b.posture)
            assert a.physique == b.physique
            np.testing.assert_allclose(a.pressure.values, b.pressure.values, rtol=1e-8, atol=1e-12)
            assert np.abs(a.vision.values - b.vision.values).max() <= 0.5 / 255.0 + 1e-12

    def test_manifest_path_or_directory(self, tiny_manifest, tmp_path):
        path = save_dataset(tiny_manifest, tmp_path / "ds")
        assert len(load_dataset(path).samples) == len(load_dataset(tmp_path / "ds").samples)

    def test_format_tag_checked(self, tiny_manifest, tmp_path):
        path = save_dataset(tiny_manifest, tmp_path / "ds")
        doc = path.read_text().replace("pressure-dataset/1", "pressure-dataset/9")
        path.write_text(doc)
        with pytest.raises(InvalidInputError):
            load_dataset(tmp_path / "ds")

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_dataset(tmp_path / "nothing")

    def test_unsafe_ids_rejected(self, tmp_path):
        bad = DatasetManifest(
            samples=(record_with_beta("../evil", (70.0,)),),
            split={"../evil": "train"},
            pixel_area_c=1.0,
        )
        with pytest.raises(InvalidInputError):
            save_dataset(bad, tmp_path / "ds")


class TestSplitBySubject:
    def test_last_subjects_become_test(self, tiny_manifest):
        train, test = split_by_subject(tiny_manifest, 1)
        assert train.subjects() == ["s000", "s001"]
        assert test.subjects() == ["s002"]
        assert set(train.split.values()) == {"train"}
        assert set(test.split.values()) == {"test"}
        assert train.pixel_area_c == tiny_manifest.pixel_area_c

    def test_zero_test_subjects(self, tiny_manifest):
        train, test = split_by_subject(tiny_manifest, 0)
        assert len(train.samples) == 6 and len(test.samples) == 0

    def test_bounds_checked(self, tiny_manifest):
        with pytest.raises(InvalidConfigError):
            split_by_subject(tiny_manifest, 3)
        with pytest.raises(InvalidConfigError):
            split_by_subject(tiny_manifest, -1)
