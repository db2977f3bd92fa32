import json

import numpy as np
import pytest

from ttada.adapt import AdaptConfig, zero_shot_classify
from ttada.dsp import DspConfig
from ttada.errors import ValidationError
from ttada.harness import (
    ClassRecipe,
    SyntheticDomainSpec,
    ablate_augmentations,
    adapt_and_eval,
    cross_domain_grid,
    default_benchmark,
    emit_report,
    evaluate_zero_shot,
    generate_domain,
    load_manifest,
    manifest_dict,
    pretraining_pairs,
    pretraining_variant,
    zero_shot_report,
)
from ttada.model import ClassPromptSet, ModelDims, Vocabulary, init_weights

from helpers import tiny_specs

DSP = DspConfig(mel_bins=12, window_size=256, hop_size=128, fmax_hz=12000.0)
DIMS = ModelDims(d=16, h=12, audio_bins=12)


@pytest.fixture(scope="module")
def datasets():
    return [generate_domain(s, DSP, seed=0) for s in tiny_specs()]


@pytest.fixture(scope="module")
def model(datasets):
    prompts = [p for ds in datasets for p in ds.class_prompts]
    vocab = Vocabulary.from_texts(prompts)
    w = init_weights(0, DIMS, vocab)
    for t in w.tensors().values():
        t.data *= 10.0
    return w


FAST = AdaptConfig(num_aug_views=6, seed=0)


class TestGenerateDomain:
    def test_deterministic(self):
        spec = tiny_specs()[0]
        a = generate_domain(spec, DSP, seed=3)
        b = generate_domain(spec, DSP, seed=3)
        for x, y in zip(a.train + a.test, b.train + b.test):
            np.testing.assert_array_equal(x.mel.frames, y.mel.frames)
            assert x.label == y.label

    def test_labels_balanced(self, datasets):
        for ds in datasets:
            counts = np.bincount([ex.label for ex in ds.test])
            assert counts.max() - counts.min() <= 1

    def test_train_test_disjoint_by_content(self, datasets):
        ds = datasets[0]
        train_keys = {ex.mel.frames.tobytes() for ex in ds.train}
        test_keys = {ex.mel.frames.tobytes() for ex in ds.test}
        assert not train_keys & test_keys

    def test_same_classes_different_coloration_changes_profile(self):
        base = tiny_specs()[0]
        from dataclasses import replace

        colored = replace(base, name="beeps-tilted", eq_tilt_db_per_octave=8.0)
        a = generate_domain(base, DSP, seed=1)
        b = generate_domain(colored, DSP, seed=1)
        profile_a = np.mean([ex.mel.frames.mean(axis=0) for ex in a.test], axis=0)
        profile_b = np.mean([ex.mel.frames.mean(axis=0) for ex in b.test], axis=0)
        assert np.abs(profile_a - profile_b).max() > 0.5

    def test_pretraining_variant_strips_coloration(self):
        spec = tiny_specs()[1]
        clean = pretraining_variant(spec)
        assert clean.eq_tilt_db_per_octave == 0.0
        assert clean.envelope == "flat"
        assert clean.bandpass is None
        assert clean.class_recipes == spec.class_recipes

    def test_duplicate_recipes_rejected(self):
        with pytest.raises(ValidationError):
            SyntheticDomainSpec(
                name="dup",
                class_recipes=(
                    ClassRecipe("a", "tone", {"freq": 100.0}),
                    ClassRecipe("b", "tone", {"freq": 100.0}),
                ),
            )

    def test_pretraining_pairs_use_prompts(self, datasets):
        pairs = pretraining_pairs(datasets)
        assert len(pairs) == sum(len(ds.train) for ds in datasets)
        assert all(text.startswith("the sound of a ") for _, text in pairs)


class TestEvaluateZeroShot:
    def test_single_class_is_always_correct(self, datasets, model):
        ds = datasets[0]
        items = [ex for ex in ds.test if ex.label == 0]
        single = ClassPromptSet.build([ds.class_prompts[0]], model.vocab)
        assert evaluate_zero_shot(items, single, model) == 1.0

    def test_tie_break_gives_class_zero_frequency(self, datasets, model):
        ds = datasets[0]
        dup = ClassPromptSet.build(
            [ds.class_prompts[0], ds.class_prompts[0]], model.vocab
        )
        expected = np.mean([ex.label == 0 for ex in ds.test])
        assert evaluate_zero_shot(ds.test, dup, model) == expected

    def test_matches_per_item_loop_oracle(self, datasets, model):
        ds = datasets[1]
        classes = ClassPromptSet.build(ds.class_prompts, model.vocab)
        correct = sum(
            zero_shot_classify(ex.mel, classes, model)[0] == ex.label
            for ex in ds.test
        )
        assert evaluate_zero_shot(ds.test, classes, model) == correct / len(ds.test)

    def test_empty_rejected(self, model, datasets):
        classes = ClassPromptSet.build(datasets[0].class_prompts, model.vocab)
        with pytest.raises(ValidationError):
            evaluate_zero_shot([], classes, model)


class TestAdaptAndEval:
    def test_report_structure_k1_and_k5(self, datasets, model):
        ds = datasets[0]
        for k in (1, 5):
            report = adapt_and_eval(ds, k, FAST, model, seeds=(0, 1, 2, 3, 4))
            assert report.k == k
            assert len(report.per_seed_accuracy) == 5
            assert all(0.0 <= a <= 1.0 for a in report.per_seed_accuracy)
            assert report.eval_counts == [len(ds.test) - k] * 5

    def test_deterministic_reports(self, datasets, model, tmp_path):
        ds = datasets[0]
        paths = []
        for run in range(2):
            report = adapt_and_eval(ds, 1, FAST, model, seeds=(7,))
            path = tmp_path / f"r{run}.json"
            emit_report(report, "json", path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_insufficient_examples(self, datasets, model):
        with pytest.raises(ValidationError, match="insufficient"):
            adapt_and_eval(datasets[0], 99, FAST, model, seeds=(0,))

    def test_adapt_indices_excluded_from_denominator(self, datasets, model):
        ds = datasets[0]
        report = adapt_and_eval(ds, 2, FAST, model, seeds=(0, 1))
        assert report.eval_counts == [6, 6]
        for indices in report.adapt_indices:
            assert len(indices) == 2


class TestAblation:
    def test_rows_cross_check_against_standalone(self, datasets, model):
        ds = datasets[0]
        seeds = (0, 1)
        ablation = ablate_augmentations(ds, [3, 6], FAST, model, seeds=seeds)
        assert ablation.view_counts == [3, 6]
        for count, row in zip(ablation.view_counts, ablation.reports):
            from dataclasses import replace

            standalone = adapt_and_eval(
                ds, 1, replace(FAST, num_aug_views=count), model, seeds=seeds
            )
            assert row.to_json_dict() == standalone.to_json_dict()

    def test_zero_count_rejected(self, datasets, model):
        with pytest.raises(ValidationError):
            ablate_augmentations(datasets[0], [0], FAST, model, seeds=(0,))

    def test_table_has_one_row_per_count(self, datasets, model):
        ablation = ablate_augmentations(datasets[0], [3, 6], FAST, model, seeds=(0,))
        table = ablation.format_table()
        assert "3 augmentations" in table and "6 augmentations" in table


class TestCrossDomainGrid:
    def test_shape_and_consistency(self, datasets, model):
        seeds = (0, 1)
        grid = cross_domain_grid(datasets, FAST, model, seeds=seeds)
        assert grid.domains == [ds.name for ds in datasets]
        # 2x2 cells, each with one accuracy per seed.
        for s in grid.domains:
            for t in grid.domains:
                assert len(grid.cells[s][t]["per_seed"]) == 2

        # Diagonal cells reproduce standalone one-example runs bit-for-bit.
        for ds in datasets:
            standalone = adapt_and_eval(ds, 1, FAST, model, seeds=seeds)
            assert (
                grid.cells[ds.name][ds.name]["per_seed"]
                == standalone.per_seed_accuracy
            )

        # ZS column equals direct zero-shot evaluation exactly.
        for ds in datasets:
            classes = ClassPromptSet.build(ds.class_prompts, model.vocab)
            assert grid.zero_shot[ds.name] == evaluate_zero_shot(
                ds.test, classes, model, None
            )

        # Summary carries in-domain and off-domain deltas per source.
        for s in grid.domains:
            assert set(grid.summary[s]) == {"in_domain_delta", "mean_off_domain_delta"}

    def test_requires_two_domains(self, datasets, model):
        with pytest.raises(ValidationError):
            cross_domain_grid(datasets[:1], FAST, model, seeds=(0,))

    def test_csv_row_count(self, datasets, model, tmp_path):
        seeds = (0, 1, 2)
        grid = cross_domain_grid(datasets, FAST, model, seeds=seeds)
        path = tmp_path / "grid.csv"
        emit_report(grid, "csv", path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1 + len(datasets) ** 2 * len(seeds)
        assert lines[0] == "source,target,seed,accuracy,config_digest"


class TestReports:
    def test_json_roundtrip(self, datasets, model, tmp_path):
        report = adapt_and_eval(datasets[0], 1, FAST, model, seeds=(0,))
        path = tmp_path / "report.json"
        emit_report(report, "json", path)
        parsed = json.loads(path.read_text())
        assert parsed == report.to_json_dict()

    def test_unknown_format_rejected(self, datasets, model, tmp_path):
        report = adapt_and_eval(datasets[0], 1, FAST, model, seeds=(0,))
        with pytest.raises(ValidationError):
            emit_report(report, "xml", tmp_path / "r.xml")

    def test_zero_shot_report_rows(self, datasets, model, tmp_path):
        report = zero_shot_report(datasets, model, seed=5)
        path = tmp_path / "zs.csv"
        emit_report(report, "csv", path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1 + len(datasets)

    def test_identical_runs_identical_digests(self, datasets, model):
        a = adapt_and_eval(datasets[0], 1, FAST, model, seeds=(0,))
        b = adapt_and_eval(datasets[0], 1, FAST, model, seeds=(0,))
        assert a.config_digest == b.config_digest
        assert a.to_json_dict() == b.to_json_dict()


class TestManifest:
    def test_roundtrip(self, tmp_path):
        specs = tiny_specs()
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest_dict(specs)))
        loaded = load_manifest(path)
        assert loaded == specs

    def test_default_benchmark_roundtrips(self, tmp_path):
        specs = default_benchmark()
        path = tmp_path / "bench.json"
        path.write_text(json.dumps(manifest_dict(specs)))
        assert load_manifest(path) == specs

    def test_missing_fields_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"domains": [{"name": "x"}]}))
        with pytest.raises(ValidationError):
            load_manifest(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad2.json"
        path.write_text("{nope")
        with pytest.raises(ValidationError):
            load_manifest(path)


class TestDefaultBenchmark:
    def test_four_domains_four_classes(self):
        specs = default_benchmark()
        assert len(specs) == 4
        assert [s.name for s in specs] == [
            "tones", "chirps", "noisebursts", "am-tones",
        ]
        for s in specs:
            assert s.num_classes == 4
            assert s.test_count == 40
