import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pandas as pd
import pytest

import data
import models
from data import ClientDataset, DomainShift, FederationLayout, SynthConfig
from errors import ConfigError, SchemaError
from federation import FederationConfig, run_local_baselines
from models import ModelSpec
from param_core import RngStream


def _small_synth(**overrides) -> SynthConfig:
    settings = {
        "n_centers": 4,
        "input_dim": 3,
        "patients_per_center": (5, 12),
        "tiles_per_patient": (2, 5),
        "seed": 3,
    }
    settings.update(overrides)
    return SynthConfig(**settings)


def _patients_dataset(n_patients: int, tiles: int = 2) -> ClientDataset:
    patient_ids = np.repeat([f"P{j:02d}" for j in range(n_patients)], tiles)
    n = patient_ids.size
    return ClientDataset("C00", np.zeros((n, 2)), np.arange(n) % 2, patient_ids)


class GenerateFederationTest(unittest.TestCase):
    def test_default_federation_shape(self) -> None:
        datasets = data.generate_federation(SynthConfig(seed=1))
        self.assertEqual(list(datasets), data.center_ids_for(21))
        for ds in datasets.values():
            self.assertGreaterEqual(ds.n_patients, 5)
            self.assertEqual(ds.input_dim, 8)
            self.assertTrue(all(len(ds.split(name)) > 0 for name in data.SPLITS))

    def test_generation_is_deterministic(self) -> None:
        first = data.generate_federation(_small_synth())
        second = data.generate_federation(_small_synth())
        for center_id in first:
            np.testing.assert_array_equal(first[center_id].features, second[center_id].features)
            np.testing.assert_array_equal(first[center_id].labels, second[center_id].labels)
            self.assertEqual(first[center_id].splits, second[center_id].splits)

    def test_no_shift_gives_identical_distributions(self) -> None:
        cfg = _small_synth(
            n_centers=2,
            input_dim=2,
            patients_per_center=(400, 400),
            tiles_per_patient=(5, 5),
            class_pos_fraction=(0.5, 0.5),
            domain_shift=DomainShift(0.0, 0.0, 0.0),
        )
        datasets = list(data.generate_federation(cfg).values())
        means = [ds.features[ds.labels == 1].mean(axis=0) for ds in datasets]
        np.testing.assert_allclose(means[0], means[1], atol=0.1)

    def test_balanced_positive_fraction(self) -> None:
        cfg = _small_synth(patients_per_center=(60, 60), tiles_per_patient=(10, 10), class_pos_fraction=(0.5, 0.5))
        for ds in data.generate_federation(cfg).values():
            n = ds.N_i
            self.assertLessEqual(abs(ds.labels.mean() - 0.5), 4 * np.sqrt(0.25 / n))

    def test_samples_carry_patient_and_center(self) -> None:
        ds = data.generate_federation(_small_synth(n_centers=1))["C00"]
        samples = ds.samples
        self.assertEqual(len(samples), ds.N_i)
        self.assertEqual({s.center_id for s in samples}, {"C00"})
        self.assertEqual([s.patient_id for s in samples], list(ds.patient_ids))
        np.testing.assert_array_equal(samples[-1].features, ds.features[-1])
        self.assertEqual(samples[-1].label, int(ds.labels[-1]))

    def test_infeasible_ranges(self) -> None:
        with self.assertRaises(ConfigError):
            SynthConfig(patients_per_center=(10, 5))
        with self.assertRaises(ConfigError):
            SynthConfig(patients_per_center=(2, 5))
        with self.assertRaises(ConfigError):
            SynthConfig(class_pos_fraction=(0.0, 0.5))


class DomainShiftTransferTest(unittest.TestCase):
    """A model trained on C00 and scored on every center's full sample set."""

    def _accuracies(self, shift: DomainShift) -> tuple[float, list[float]]:
        cfg = SynthConfig(
            n_centers=7,
            input_dim=4,
            patients_per_center=(80, 80),
            tiles_per_patient=(10, 10),
            class_pos_fraction=(0.5, 0.5),
            domain_shift=shift,
            seed=5,
        )
        datasets = data.generate_federation(cfg)
        fed_cfg = FederationConfig(clients=("C00",), model=ModelSpec("logistic", 4), rounds=10, batch_size=32)
        model = run_local_baselines(fed_cfg, datasets)["C00"]
        accuracy = {
            center_id: float(np.mean(models.predict_labels(model, ds.features) == ds.labels))
            for center_id, ds in datasets.items()
        }
        own = accuracy.pop("C00")
        return own, list(accuracy.values())

    def test_without_shift_other_centers_match(self) -> None:
        own, others = self._accuracies(DomainShift(0.0, 0.0, 0.0))
        self.assertGreater(own, 0.85)
        self.assertLessEqual(abs(float(np.mean(others)) - own), 0.03)

    def test_large_rotation_hurts_other_centers(self) -> None:
        own, others = self._accuracies(DomainShift(rotation_scale=np.pi, bias_scale=0.0, noise_sigma=0.0))
        self.assertGreater(own, 0.85)
        self.assertLess(float(np.mean(others)), own)
        self.assertLess(min(others), own - 0.1)


class SplitPatientsTest(unittest.TestCase):
    def test_ten_patients_split_five_one_four(self) -> None:
        ds = data.split_patients(_patients_dataset(10), rng=RngStream(0, purpose="split"))
        counts = pd.Series(list(ds.splits.values())).value_counts()
        self.assertEqual((counts["train"], counts["val"], counts["test"]), (5, 1, 4))

    def test_samples_follow_their_patient(self) -> None:
        ds = data.split_patients(_patients_dataset(7, tiles=3), rng=RngStream(1, purpose="split"))
        for patient, split in zip(ds.patient_ids, ds.sample_splits()):
            self.assertEqual(ds.splits[patient], split)

    def test_every_split_nonempty_for_three_patients(self) -> None:
        ds = data.split_patients(_patients_dataset(3), rng=RngStream(2, purpose="split"))
        self.assertEqual(sorted(ds.splits.values()), ["test", "train", "val"])

    def test_split_is_deterministic(self) -> None:
        first = data.split_patients(_patients_dataset(12), rng=RngStream(4, purpose="split"))
        second = data.split_patients(_patients_dataset(12), rng=RngStream(4, purpose="split"))
        self.assertEqual(first.splits, second.splits)

    def test_too_few_patients(self) -> None:
        with self.assertRaises(ConfigError):
            data.split_patients(_patients_dataset(2))


class LayoutTest(unittest.TestCase):
    def test_kfold_on_twenty_one_centers(self) -> None:
        centers = data.center_ids_for(21)
        layouts = data.kfold_center_rotation(centers, 3, RngStream(0, purpose="kfold"))
        self.assertEqual(len(layouts), 3)
        independents = []
        for layout in layouts:
            self.assertEqual((len(layout.training_centers), len(layout.independent_centers)), (14, 7))
            independents.extend(layout.independent_centers)
        self.assertEqual(sorted(independents), centers)

    def test_kfold_two_of_four(self) -> None:
        layouts = data.kfold_center_rotation(data.center_ids_for(4), 2, RngStream(1, purpose="kfold"))
        self.assertEqual([len(layout.independent_centers) for layout in layouts], [2, 2])

    def test_kfold_bounds(self) -> None:
        with self.assertRaises(ConfigError):
            data.kfold_center_rotation(data.center_ids_for(4), 1, RngStream(0))
        with self.assertRaises(ConfigError):
            data.kfold_center_rotation(data.center_ids_for(2), 3, RngStream(0))

    def test_layout_rejects_overlap(self) -> None:
        with self.assertRaises(ConfigError):
            FederationLayout(("C00", "C01"), ("C01",))

    def test_default_layout_and_groups(self) -> None:
        layout = data.default_layout(data.center_ids_for(21), 11)
        self.assertEqual(len(layout.training_centers), 11)
        self.assertEqual(layout.group_of("C00"), "local_test")
        self.assertEqual(layout.group_of("C20"), "independent")


class DescribeFederationTest(unittest.TestCase):
    def test_counts_add_up(self) -> None:
        datasets = data.generate_federation(_small_synth())
        frame = data.describe_federation(datasets)
        self.assertEqual(len(frame), 4)
        for row in frame.itertuples(index=False):
            self.assertEqual(row.n_pos + row.n_neg, row.n_train + row.n_val + row.n_test)
            self.assertEqual(row.n_pos + row.n_neg, datasets[row.center_id].N_i)


def test_csv_round_trip(tmp_path: Path) -> None:
    datasets = data.generate_federation(_small_synth())
    path = tmp_path / "federation.csv"
    data.export_csv_federation(datasets, path)
    loaded = data.load_csv_federation(path, min_patients=1)
    assert list(loaded) == list(datasets)
    for center_id, original in datasets.items():
        reloaded = loaded[center_id]
        np.testing.assert_array_equal(reloaded.features, original.features)
        np.testing.assert_array_equal(reloaded.labels, original.labels)
        assert list(reloaded.patient_ids) == list(original.patient_ids)
        assert reloaded.splits == original.splits


def test_csv_with_two_centers(tmp_path: Path) -> None:
    datasets = data.generate_federation(_small_synth(n_centers=2))
    path = tmp_path / "two.csv"
    data.export_csv_federation(datasets, path)
    assert len(data.load_csv_federation(path)) == 2


def test_csv_missing_label_column(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("center_id,patient_id,split,f0\nC00,P0,train,0.5\n", encoding="utf-8")
    with pytest.raises(SchemaError) as excinfo:
        data.load_csv_federation(path)
    assert excinfo.value.column == "label"


def test_csv_invalid_label_reports_row(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text(
        "center_id,patient_id,split,label,f0\nC00,P0,train,1,0.5\nC00,P1,train,2,0.1\n",
        encoding="utf-8",
    )
    with pytest.raises(SchemaError) as excinfo:
        data.load_csv_federation(path)
    assert excinfo.value.row == 3
    assert excinfo.value.column == "label"


def test_csv_partial_split_column_is_rejected(tmp_path: Path) -> None:
    rows = ["center_id,patient_id,split,label,f0"]
    for j in range(5):
        rows.append(f"C00,P{j},train,{j % 2},{j}.0")
    rows.append("C00,P5,,1,5.0")
    path = tmp_path / "partial.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    with pytest.raises(SchemaError) as excinfo:
        data.load_csv_federation(path)
    assert excinfo.value.row == 7
    assert excinfo.value.column == "split"
    assert "partial_split" in str(excinfo.value)


def test_csv_given_splits_are_kept(tmp_path: Path) -> None:
    rows = ["center_id,patient_id,split,label,f0"]
    given = {"P0": "train", "P1": "train", "P2": "train", "P3": "val", "P4": "test", "P5": "test"}
    for j, (patient, split) in enumerate(given.items()):
        rows.append(f"C00,{patient},{split},{j % 2},{j}.0")
    path = tmp_path / "given.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    assert data.load_csv_federation(path)["C00"].splits == given


def test_csv_small_centers_are_excluded(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    rows = ["center_id,patient_id,split,label,f0"]
    for j in range(6):
        rows.append(f"BIG,P{j},,{j % 2},{j}.0")
    for j in range(2):
        rows.append(f"TINY,Q{j},,{j % 2},{j}.5")
    path = tmp_path / "mixed.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    with caplog.at_level("WARNING", logger="data"):
        loaded = data.load_csv_federation(path)
    assert list(loaded) == ["BIG"]
    assert all(loaded["BIG"].splits.values())
    assert any("CENTER_EXCLUDED" in message for message in caplog.messages)


if __name__ == "__main__":
    unittest.main()
