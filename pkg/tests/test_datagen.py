"""Generator procedures, JSONL persistence and split behavior."""

import json

import numpy as np
import pytest

from earlyseq import datagen
from earlyseq.datagen import (
    MISSING,
    PAD_TOKEN,
    Element,
    GeneratorConfig,
    MultimodalSequence,
    concept_token_range,
    generate_paired_dataset,
    generate_structured_arrival_dataset,
    load_jsonl,
    save_jsonl,
    split,
)


def _dataset_bytes(data):
    return "".join(
        json.dumps(datagen._to_record(seq), separators=(",", ":")) + "\n"
        for seq in data
    ).encode()


class TestPairedTask:
    def test_labels_balanced_at_ten_thousand(self):
        cfg = GeneratorConfig(seed=123, n_samples=10_000)
        data = generate_paired_dataset(cfg)
        mismatched = np.mean([seq.label[1] for seq in data])
        assert abs(mismatched - 0.5) < 0.02

    def test_sequence_layout(self):
        cfg = GeneratorConfig(seed=5, n_samples=20, words_total=7)
        data = generate_paired_dataset(cfg)
        for seq in data:
            assert seq.T_end == 8
            assert seq.signature == ("image",) + ("text",) * 7
            assert seq.elements[0].d_s == (cfg.grid_size // cfg.patch_size) ** 2

    def test_noiseless_no_generic_is_linearly_scannable(self):
        cfg = GeneratorConfig(seed=9, n_samples=400, noise=0.0,
                              generic_words=(0, 0), specific_words=(2, 4))
        data = generate_paired_dataset(cfg)
        protos = datagen.concept_prototypes(cfg)
        correct = 0
        for seq in data:
            pixels = seq.elements[0].payload
            image_concept = int(np.argmin(np.abs(protos - pixels).sum(axis=(1, 2))))
            first_word = int(seq.elements[1].payload[0])
            word_concept = next(
                c for c in range(cfg.concept_count)
                if first_word in concept_token_range(cfg, c)
            )
            predicted = 0 if word_concept == image_concept else 1
            correct += predicted == int(np.argmax(seq.label))
        assert correct == len(data)

    def test_generic_tokens_precede_specific(self):
        cfg = GeneratorConfig(seed=11, n_samples=50)
        generic_ids = set(range(1, 1 + cfg.generic_vocab))
        for seq in generate_paired_dataset(cfg):
            kinds = []
            for e in seq.elements[1:]:
                token = int(e.payload[0])
                if token == PAD_TOKEN:
                    kinds.append("pad")
                elif token in generic_ids:
                    kinds.append("generic")
                else:
                    kinds.append("specific")
            # order is generic*, specific*, pad*
            collapsed = [k for i, k in enumerate(kinds) if i == 0 or kinds[i - 1] != k]
            assert collapsed == [k for k in ("generic", "specific", "pad") if k in collapsed]

    def test_byte_identical_regeneration(self):
        cfg = GeneratorConfig(seed=7, n_samples=64)
        first = _dataset_bytes(generate_paired_dataset(cfg))
        second = _dataset_bytes(generate_paired_dataset(GeneratorConfig(seed=7, n_samples=64)))
        assert first == second

    def test_too_few_concepts_rejected(self):
        with pytest.raises(ValueError, match="concept_count"):
            generate_paired_dataset(GeneratorConfig(seed=0, concept_count=1))


class TestStructuredArrivalTask:
    def test_worked_insertion_order(self):
        cfg = GeneratorConfig(
            seed=3, n_samples=5,
            base_orders=(("structured", "text", "imagesA", "imagesB"),),
        )
        for seq in generate_structured_arrival_dataset(cfg):
            assert seq.signature == (
                "structured", "text", "structured", "imagesA", "structured", "imagesB",
            )

    def test_insertion_falls_back_when_gap_overruns(self):
        cfg = GeneratorConfig(
            seed=3, n_samples=5,
            base_orders=(("text", "imagesA", "imagesB", "structured"),),
        )
        for seq in generate_structured_arrival_dataset(cfg):
            assert seq.signature == (
                "text", "imagesA", "imagesB", "structured", "structured", "structured",
            )

    def test_full_reveal(self):
        cfg = GeneratorConfig(seed=4, n_samples=30, reveal_probability=1.0)
        for seq in generate_structured_arrival_dataset(cfg):
            arrivals = [e.payload for e in seq.elements if e.modality == "structured"]
            assert (arrivals[1] != MISSING).all()
            assert (arrivals[2] != MISSING).all()

    def test_no_masking_gives_identical_arrivals(self):
        cfg = GeneratorConfig(
            seed=4, n_samples=30,
            missing_probs={"none": 0.0, "low": 0.0, "high": 0.0},
        )
        for seq in generate_structured_arrival_dataset(cfg):
            arrivals = [e.payload for e in seq.elements if e.modality == "structured"]
            assert len(arrivals) == 3
            assert (arrivals[0] != MISSING).all()
            np.testing.assert_array_equal(arrivals[0], arrivals[1])
            np.testing.assert_array_equal(arrivals[1], arrivals[2])

    def test_missing_counts_never_increase(self):
        cfg = GeneratorConfig(seed=6, n_samples=200)
        for seq in generate_structured_arrival_dataset(cfg):
            arrivals = [e.payload for e in seq.elements if e.modality == "structured"]
            counts = [(a == MISSING).sum() for a in arrivals]
            assert counts[0] >= counts[1] >= counts[2]

    def test_reveals_restore_true_values(self):
        cfg = GeneratorConfig(seed=8, n_samples=100, missing_probs={
            "none": 0.5, "low": 0.5, "high": 0.5})
        for seq in generate_structured_arrival_dataset(cfg):
            arrivals = [e.payload for e in seq.elements if e.modality == "structured"]
            for earlier, later in ((0, 1), (1, 2)):
                observed = arrivals[earlier] != MISSING
                np.testing.assert_array_equal(
                    arrivals[earlier][observed], arrivals[later][observed]
                )

    def test_tier_missingness_rates(self):
        tiers = ("none",) * 4 + ("low",) * 4 + ("high",) * 4
        cfg = GeneratorConfig(seed=20, n_samples=4000, feature_tiers=tiers)
        data = generate_structured_arrival_dataset(cfg)
        rates = _arrival1_missing_rates(data, tiers)
        assert abs(rates["none"] - 0.90) < 0.01
        assert abs(rates["low"] - 0.95) < 0.01
        assert abs(rates["high"] - 0.99) < 0.01

    def test_unknown_tier_rejected(self):
        cfg = GeneratorConfig(seed=0, feature_tiers=("none", "mystery"))
        with pytest.raises(ValueError, match="mystery"):
            generate_structured_arrival_dataset(cfg)

    def test_deterministic(self):
        first = _dataset_bytes(generate_structured_arrival_dataset(
            GeneratorConfig(seed=13, n_samples=40)))
        second = _dataset_bytes(generate_structured_arrival_dataset(
            GeneratorConfig(seed=13, n_samples=40)))
        assert first == second


def _arrival1_missing_rates(data, tiers):
    tiers = np.asarray(tiers)
    totals = {t: 0 for t in set(tiers)}
    missing = {t: 0 for t in set(tiers)}
    for seq in data:
        arrival1 = next(e.payload for e in seq.elements if e.modality == "structured")
        for tier in totals:
            sel = tiers == tier
            totals[tier] += sel.sum()
            missing[tier] += (arrival1[sel] == MISSING).sum()
    return {t: missing[t] / totals[t] for t in totals}


class TestJsonl:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_jsonl(path) == []

    def test_round_trip(self, tmp_path):
        data = generate_paired_dataset(GeneratorConfig(seed=2, n_samples=12))
        data += generate_structured_arrival_dataset(GeneratorConfig(seed=2, n_samples=12))
        path = tmp_path / "data.jsonl"
        save_jsonl(data, path)
        loaded = load_jsonl(path)
        assert len(loaded) == len(data)
        for a, b in zip(data, loaded):
            np.testing.assert_array_equal(a.label, b.label)
            assert a.signature == b.signature
            for ea, eb in zip(a.elements, b.elements):
                assert ea.d_s == eb.d_s and ea.kind == eb.kind
                np.testing.assert_allclose(ea.payload, eb.payload)

    def test_bad_label_sum_rejected(self, tmp_path):
        record = {"label": [0.9, 0.0],
                  "elements": [{"modality": "text", "d_s": 1, "payload": [1, 2]}]}
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ValueError, match="line 1"):
            load_jsonl(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        good = {"label": [1.0, 0.0],
                "elements": [{"modality": "text", "d_s": 1, "payload": [1]}]}
        path = tmp_path / "mixed.jsonl"
        path.write_text(json.dumps(good) + "\n{not json}\n")
        with pytest.raises(ValueError, match="line 2"):
            load_jsonl(path)

    def test_unknown_modality_named(self, tmp_path):
        record = {"label": [1.0, 0.0],
                  "elements": [{"modality": "sonar", "d_s": 1, "payload": [1]}]}
        path = tmp_path / "tagged.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(ValueError, match="sonar"):
            load_jsonl(path)

    def test_vector_payload_round_trip(self, tmp_path):
        seq = MultimodalSequence(
            [Element(np.array([0.25, -1.5, 3.0]), "vector", 1, "vector")],
            np.array([0.0, 1.0]),
        )
        path = tmp_path / "vec.jsonl"
        save_jsonl([seq], path)
        loaded = load_jsonl(path)
        np.testing.assert_allclose(loaded[0].elements[0].payload, [0.25, -1.5, 3.0])


class TestSplit:
    def test_ninety_ten(self):
        data = list(range(100))
        train, val = split(data, 0.1, seed=0)
        assert len(train) == 90 and len(val) == 10
        assert sorted(train + val) == data

    def test_same_seed_same_split(self):
        data = list(range(57))
        assert split(data, 0.25, seed=9) == split(data, 0.25, seed=9)

    def test_round_half_up(self):
        train, val = split(list(range(3)), 0.5, seed=1)
        assert (len(train), len(val)) == (1, 2)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
    def test_fraction_bounds(self, fraction):
        with pytest.raises(ValueError):
            split(list(range(10)), fraction, seed=0)


class TestInvariants:
    def test_element_ds_only_for_images(self):
        with pytest.raises(ValueError):
            Element(np.array([1, 2]), "text", 4, "tokens")

    def test_label_must_be_one_hot(self):
        with pytest.raises(ValueError):
            MultimodalSequence(
                [Element(np.array([1]), "text", 1, "tokens")], np.array([0.5, 0.5])
            )
