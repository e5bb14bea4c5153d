import json
import math

import numpy as np
import pytest
import torch

from protosim.analytics import (
    CENTRE_BIAS_STATISTIC,
    ComparisonReport,
    centre_bias_map,
    class_patch_proportion,
    compare_report,
    label_from_proportions,
    prototype_diversity,
    semantic_alignment,
    specificity,
    top_cooccurring,
)
from protosim.indexing import ImageRecord, build_index
from protosim.report_html import write_html_report


def record(image_id, dataset_id, class_proto, patches, affinities=()):
    return ImageRecord(image_id, dataset_id, class_proto, tuple(patches), tuple(affinities))


def counted_index(counts_by_dataset, num_prototypes=8, proto=0):
    """Index where `proto` occurs exactly counts[ds] times (as patch tokens)."""
    records = []
    filler = num_prototypes - 1
    for ds, count in counts_by_dataset.items():
        i = 0
        while count > 0:
            in_image = min(count, 4)
            patches = [proto] * in_image + [filler] * (4 - in_image)
            records.append(record(f"{ds}_{i:03d}.png", ds, filler, patches))
            count -= in_image
            i += 1
    return build_index(records, num_prototypes=num_prototypes)


class TestSpecificity:
    def test_99_to_1_is_specific(self):
        index = counted_index({"A": 99, "B": 1})
        stats = specificity(index, 0)
        assert abs(stats.proportions["A"] - 0.99) < 1e-9
        assert stats.label == "specific-to:A"

    def test_even_split_is_shared(self):
        index = counted_index({"A": 50, "B": 50})
        assert specificity(index, 0).label == "shared"

    def test_boundary_is_strict(self):
        # exactly 95% is NOT specific under the strict > rule
        index = counted_index({"A": 95, "B": 5})
        assert specificity(index, 0).label == "shared"
        index2 = counted_index({"A": 96, "B": 4})
        assert specificity(index2, 0).label == "specific-to:A"

    def test_min_occurrences_guard(self):
        index = counted_index({"A": 5})
        assert specificity(index, 0).label == "insufficient-data"
        assert specificity(index, 0, min_occurrences=3).label == "specific-to:A"

    def test_unused(self):
        index = counted_index({"A": 20})
        assert specificity(index, 3).label == "unused"
        assert specificity(index, 3).total_occurrences == 0

    def test_permutation_equivariance(self):
        a_first = counted_index({"A": 70, "B": 30})
        b_first = counted_index({"B": 30, "A": 70})
        assert specificity(a_first, 0).proportions == specificity(b_first, 0).proportions
        assert specificity(a_first, 0).label == specificity(b_first, 0).label

    def test_unknown_prototype(self):
        with pytest.raises(ValueError):
            specificity(counted_index({"A": 10}), 99)

    def test_label_rule_direct(self):
        assert label_from_proportions({"A": 1.0}, 100) == "specific-to:A"
        assert label_from_proportions({"A": 0.5, "B": 0.5}, 100) == "shared"
        assert label_from_proportions({}, 0) == "unused"
        assert label_from_proportions({"A": 1.0}, 5) == "insufficient-data"


class TestDiversity:
    def test_identical_rows(self):
        assert abs(prototype_diversity(np.ones((2, 4))) - 1.0) < 1e-9

    def test_orthogonal_rows(self):
        assert abs(prototype_diversity(np.eye(2))) < 1e-12

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 6))
        unit = w / np.linalg.norm(w, axis=1, keepdims=True)
        acc = [unit[i] @ unit[j] for i in range(4) for j in range(i + 1, 4)]
        assert abs(prototype_diversity(w) - np.mean(acc)) < 1e-6

    def test_zero_row_excluded_with_warning(self):
        w = np.vstack([np.eye(2), np.zeros((1, 2))])
        with pytest.warns(UserWarning, match="zero-norm"):
            value = prototype_diversity(w)
        assert abs(value) < 1e-12

    def test_row_permutation_and_scaling_invariance(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(5, 3))
        base = prototype_diversity(w)
        perm = w[rng.permutation(5)]
        assert abs(prototype_diversity(perm) - base) < 1e-9
        scaled = w.copy()
        scaled[2] *= 7.5
        assert abs(prototype_diversity(scaled) - base) < 1e-9


class TestClassPatchProportion:
    def test_class_only(self):
        index = build_index([record("i.png", "a", 1, [0, 0, 0, 0])], num_prototypes=4)
        assert class_patch_proportion(index, 1) == 1.0

    def test_patch_only(self):
        index = build_index([record("i.png", "a", 1, [0, 0, 0, 0])], num_prototypes=4)
        assert class_patch_proportion(index, 0) == 0.0

    def test_three_class_nine_patch(self):
        records = [record(f"i{j}.png", "a", 2, [2] * 3 + [1] * 1) for j in range(3)]
        index = build_index(records, num_prototypes=4)
        assert class_patch_proportion(index, 2) == pytest.approx(3 / 12)

    def test_absent_when_unused(self):
        index = build_index([record("i.png", "a", 1, [0, 0, 0, 0])], num_prototypes=4)
        assert class_patch_proportion(index, 3) is None


class TestCentreBias:
    def grid_records(self, assigns, dataset="a"):
        return [record(f"i{i:05d}.png", dataset, 0, row) for i, row in enumerate(assigns)]

    def test_all_positions_always_agree(self):
        assigns = [[i % 3] * 16 for i in range(30)]
        cb = centre_bias_map(self.grid_records(assigns), [5], num_prototypes=8)
        assert cb.grid_side == 4
        assert np.allclose(cb.correlations, 1.0)

    def test_self_correlation_exactly_one(self):
        rng = np.random.default_rng(0)
        assigns = rng.integers(0, 8, size=(50, 16)).tolist()
        cb = centre_bias_map(self.grid_records(assigns), [6], num_prototypes=8)
        assert cb.correlations.flatten()[6] == 1.0

    def test_independent_random_near_zero(self):
        rng = np.random.default_rng(1)
        assigns = rng.integers(0, 32, size=(10_000, 16)).tolist()
        cb = centre_bias_map(self.grid_records(assigns), [0], num_prototypes=32)
        flat = cb.correlations.flatten()
        others = np.delete(flat, 0)
        assert np.abs(others).max() < 0.05

    def test_planted_centre_markers(self):
        # centre 2x2 of a 4x4 grid always co-assigns a per-image marker
        rng = np.random.default_rng(2)
        centre = [5, 6, 9, 10]
        assigns = []
        for _ in range(5000):
            row = rng.integers(4, 32, size=16)
            row[centre] = rng.integers(0, 4)
            assigns.append(row.tolist())
        cb = centre_bias_map(self.grid_records(assigns), centre, num_prototypes=32)
        flat = cb.correlations.flatten()
        assert all(flat[p] > 0.95 for p in centre)
        periphery = [p for p in range(16) if p not in centre]
        assert all(abs(flat[p]) < 0.1 for p in periphery)

    def test_reflection_symmetry_on_symmetric_data(self):
        # assignments constant per column pair mirrored around the vertical axis
        rng = np.random.default_rng(3)
        assigns = []
        for _ in range(2000):
            row = np.zeros(16, dtype=int)
            for r in range(4):
                vals = rng.integers(0, 8, size=2)
                row[4 * r + 0] = row[4 * r + 3] = vals[0]
                row[4 * r + 1] = row[4 * r + 2] = vals[1]
            assigns.append(row.tolist())
        cb = centre_bias_map(self.grid_records(assigns), [5, 6], num_prototypes=8)
        grid = cb.correlations
        assert np.allclose(grid, grid[:, ::-1], atol=1e-9)

    def test_too_few_images(self):
        with pytest.raises(ValueError, match="at least 2"):
            centre_bias_map(self.grid_records([[0] * 16]), [0], num_prototypes=4)

    def test_bad_positions(self):
        assigns = [[0] * 16, [1] * 16]
        with pytest.raises(ValueError, match="patch indices"):
            centre_bias_map(self.grid_records(assigns), [30], num_prototypes=4)


class TestSemanticAlignment:
    def test_planted_bijection(self):
        records, labels = [], {}
        for c in range(3):
            for i in range(5):
                image_id = f"c{c}_{i}.png"
                records.append(record(image_id, "a", c, [7] * 4))
                labels[image_id] = f"class_{c}"
        index = build_index(records, num_prototypes=8)
        report = semantic_alignment(index, labels, "a")
        assert report.aligned_classes == 3
        assert report.total_classes == 3
        assert report.class_to_prototype == {f"class_{c}": c for c in range(3)}

    def test_single_prototype_two_classes(self):
        records, labels = [], {}
        for c in range(2):
            for i in range(4):
                image_id = f"c{c}_{i}.png"
                records.append(record(image_id, "a", 0, [1] * 4))
                labels[image_id] = f"class_{c}"
        report = semantic_alignment(build_index(records, num_prototypes=4), labels, "a")
        # both classes map to prototype 0, whose majority class is class_0
        assert report.aligned_classes == 1

    def test_mismatch_abort(self):
        records = [record(f"i{i}.png", "a", 0, [0] * 4) for i in range(10)]
        labels = {f"other{i}.png": "x" for i in range(10)}
        with pytest.raises(ValueError, match="mismatch"):
            semantic_alignment(build_index(records, num_prototypes=2), labels, "a")

    def test_small_mismatch_listed(self):
        records = [record(f"i{i}.png", "a", 0, [0] * 4) for i in range(20)]
        labels = {f"i{i}.png": "x" for i in range(19)}
        report = semantic_alignment(build_index(records, num_prototypes=2), labels, "a")
        assert report.unlabeled_images == ("i19.png",)


class TestCompareReport:
    def planted_index(self):
        records = []
        # prototype 0 only in a; prototype 1 only in b; prototype 2 shared
        for i in range(12):
            records.append(record(f"a{i}.png", "a", 0, [0, 0, 2, 2]))
            records.append(record(f"b{i}.png", "b", 1, [1, 1, 2, 2]))
        return build_index(records, num_prototypes=5)

    def test_planted_two_dataset_report(self):
        index = self.planted_index()
        report = compare_report(index, np.eye(5), examples_per_dataset=4)
        labels = {p["prototype_id"]: p["label"] for p in report.prototypes}
        assert labels[0] == "specific-to:a"
        assert labels[1] == "specific-to:b"
        assert labels[2] == "shared"
        assert report.counts["specific"] == {"a": 1, "b": 1}
        assert report.counts["shared"] == 1
        assert report.counts["unused"] == 2
        assert report.mode == "comparison"

    def test_examples_and_cooccurrence(self):
        index = self.planted_index()
        report = compare_report(index, np.eye(5), examples_per_dataset=3)
        proto0 = report.prototypes[0]
        assert proto0["examples"]["a"] == ["a0.png", "a1.png", "a10.png"]
        assert proto0["examples"]["b"] == []
        assert proto0["top_cooccurring"][0][0] == 2

    def test_json_round_trip(self):
        report = compare_report(self.planted_index(), np.eye(5))
        blob = json.dumps(report.to_json(), sort_keys=True)
        back = ComparisonReport.from_json(json.loads(blob))
        assert json.dumps(back.to_json(), sort_keys=True) == blob

    def test_single_dataset_summarisation_mode(self):
        records = [record(f"a{i}.png", "a", 0, [1, 1, 1, 1]) for i in range(12)]
        report = compare_report(build_index(records, num_prototypes=4), np.eye(4))
        assert report.mode == "summarisation"
        assert all(p["label"] is None for p in report.prototypes)
        assert "specific" not in report.counts
        assert report.counts["unused"] == 2

    def test_stats_agree_between_records_and_cache(self, tmp_path):
        from protosim.indexing import load_index, save_index

        index = self.planted_index()
        save_index(index, tmp_path / "idx")
        cached = load_index(tmp_path / "idx", use_cache=True)
        raw = load_index(tmp_path / "idx", use_cache=False)
        for proto in range(5):
            assert specificity(cached, proto).to_json() == specificity(raw, proto).to_json()
            assert class_patch_proportion(cached, proto) == class_patch_proportion(raw, proto)

    def test_html_written(self, tmp_path):
        report = compare_report(self.planted_index(), np.eye(5))
        out = write_html_report(report, tmp_path)
        assert out.is_file()
        assert (tmp_path / "prototypes" / "p00000.html").is_file()
        text = out.read_text()
        assert "specific-to:a" in text
        assert CENTRE_BIAS_STATISTIC in json.dumps(report.metadata)
