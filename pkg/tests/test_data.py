from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from app.config import SyntheticSpec
from app.data import (
    EOS,
    PAD,
    SOS,
    UNK,
    EventRecord,
    FramePeriods,
    Vocabulary,
    attach_teacher_captions,
    build_vocab,
    decode_features,
    encode_features,
    generate_events,
    load_event,
    make_batch,
    normalize_caption,
    read_features,
    read_manifest,
    read_teacher_captions,
    window_indices,
    write_features,
    write_manifest,
    write_teacher_captions,
)
from app.data.synthetic import SLOT_WORDS
from app.errors import ConfigError, ContractViolation, DataError, FeatureIOError, PreconditionError


@pytest.fixture
def event(tmp_path):
    """One event from 1.0 s to 8.0 s; audio frame k holds the value k, visual frame k holds 10*k."""
    audio = np.repeat(np.arange(10, dtype=np.float32)[:, None], 2, axis=1)
    visual = np.repeat(10 * np.arange(4, dtype=np.float32)[:, None], 3, axis=1)
    return EventRecord(
        event_id="e1",
        audio_path=write_features(tmp_path / "e1.audio.avcf", audio),
        visual_path=write_features(tmp_path / "e1.visual.avcf", visual),
        t_start=1.0,
        t_end=8.0,
        caption_text="A dog barks!",
    )


class TestVocabulary:
    def test_normalisation(self):
        assert normalize_caption("A Dog, barks!") == ["a", "dog", "barks"]

    def test_reserved_ids(self):
        vocab = Vocabulary()
        assert len(vocab) == 4
        assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)

    def test_unknown_words_map_to_unk(self):
        vocab = Vocabulary(["dog"])
        assert vocab.encode("dog cat") == [4, UNK]

    def test_decode_stops_at_eos_and_skips_markers(self):
        vocab = Vocabulary(["dog", "barks"])
        assert vocab.decode([SOS, 4, PAD, 5, EOS, 4]) == "dog barks"

    def test_build_orders_by_first_occurrence(self, event):
        vocab = build_vocab([event])
        assert vocab.words == ["a", "dog", "barks"]

    def test_build_from_nothing(self):
        with pytest.raises(DataError):
            build_vocab([])

    def test_save_and_load(self, tmp_path):
        vocab = Vocabulary(["dog", "barks"])
        assert Vocabulary.load(vocab.save(tmp_path / "vocab.txt")) == vocab

    def test_load_rejects_duplicates(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("dog\ndog\n", encoding="utf-8")
        with pytest.raises(DataError):
            Vocabulary.load(path)


class TestFeatureFiles:
    def test_payload_layout(self):
        payload = encode_features(np.ones((2, 3), dtype=np.float32))
        assert payload[:4] == b"AVCF"
        assert len(payload) == 16 + 4 * 6

    def test_decode_matches_written_values(self, rng):
        array = rng.normal(size=(7, 5)).astype(np.float32)
        np.testing.assert_array_equal(decode_features(encode_features(array)), array)

    def test_size_mismatch(self):
        with pytest.raises(FeatureIOError):
            decode_features(encode_features(np.ones((2, 3)))[:-4])

    def test_bad_magic(self):
        with pytest.raises(FeatureIOError):
            decode_features(b"NOPE" + bytes(12))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FeatureIOError):
            read_features(tmp_path / "absent.avcf")

    def test_cached_reads_are_read_only(self, event):
        first = read_features(event.audio_path)
        assert read_features(event.audio_path) is first
        assert not first.flags.writeable


class TestWindows:
    def test_window_indices_use_frame_starts(self):
        np.testing.assert_array_equal(window_indices(10, 0.96, 1.0, 4.0), [2, 3, 4])

    def test_full_window(self, event):
        stream = load_event(event)
        # audio starts 1.92 .. 7.68, visual starts 2.56, 5.12, 7.68
        np.testing.assert_array_equal(stream.audio[:, 0], np.arange(2, 9))
        np.testing.assert_array_equal(stream.visual[:, 0], [10, 20, 30])
        assert stream.end_time == pytest.approx(4 * 2.56)

    def test_truncated_window(self, event):
        stream = load_event(event, until=3.0)
        np.testing.assert_array_equal(stream.audio[:, 0], [2, 3])
        np.testing.assert_array_equal(stream.visual[:, 0], [10])

    def test_until_outside_the_window(self, event):
        with pytest.raises(ContractViolation):
            load_event(event, until=9.0)

    def test_window_without_visual_frames(self, event):
        with pytest.raises(ContractViolation):
            load_event(event, until=2.0)

    def test_custom_periods(self, event):
        stream = load_event(event, periods=FramePeriods(audio=1.0, visual=2.0))
        np.testing.assert_array_equal(stream.audio[:, 0], np.arange(1, 8))
        np.testing.assert_array_equal(stream.visual[:, 0], [10, 20, 30])


class TestManifest:
    def test_written_manifest_reads_back(self, tmp_path, event):
        path = write_manifest([event], tmp_path / "manifest.tsv")
        assert "e1.audio.avcf" in path.read_text(encoding="utf-8").split("\t")[1]
        (record,) = read_manifest(path)
        assert record == event

    def test_bad_time_order(self):
        with pytest.raises(DataError):
            EventRecord("bad", Path("a"), Path("v"), 5.0, 5.0, "x")

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("e1\ta.avcf\tv.avcf\t0.0\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_manifest(path)

    def test_comments_are_skipped(self, tmp_path, event):
        path = write_manifest([event], tmp_path / "manifest.tsv")
        path.write_text("# header comment\n" + path.read_text(encoding="utf-8"), encoding="utf-8")
        assert len(read_manifest(path)) == 1

    def test_hash_inside_a_caption_is_kept(self, tmp_path, event):
        record = replace(event, caption_text="a dog #1 runs")
        path = write_manifest([record], tmp_path / "manifest.tsv")
        path.write_text("# header comment\n" + path.read_text(encoding="utf-8"), encoding="utf-8")
        (loaded,) = read_manifest(path)
        assert loaded.caption_text == "a dog #1 runs"

    def test_duplicate_ids(self, tmp_path, event):
        path = write_manifest([event, event], tmp_path / "manifest.tsv")
        with pytest.raises(DataError):
            read_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FeatureIOError):
            read_manifest(tmp_path / "absent.tsv")

    def test_teacher_captions_are_attached(self, tmp_path, event):
        vocab = Vocabulary(["a", "dog", "barks"])
        path = write_teacher_captions(tmp_path / "teacher_captions.tsv", {"e1": [4, 5]}, vocab)
        captions = read_teacher_captions(path)
        assert captions == {"e1": (4, 5)}
        (attached,) = attach_teacher_captions([event], captions)
        assert attached.teacher_caption == (4, 5)

    def test_missing_teacher_caption(self, event):
        with pytest.raises(PreconditionError):
            attach_teacher_captions([event], {})


class TestBatching:
    def test_masks_cover_real_frames(self, event):
        vocab = build_vocab([event])
        record = event.tokenized(vocab)
        batch = make_batch([record, record], untils=[None, 3.0])
        assert batch.audio.shape == (2, 7, 2)
        assert batch.audio_mask.sum(axis=1).tolist() == [7, 2]
        assert batch.visual_mask.sum(axis=1).tolist() == [3, 1]
        np.testing.assert_array_equal(batch.audio[1, 2:], 0.0)
        assert batch.untils == [8.0, 3.0]
        assert batch.caption(0) == [4, 5, 6]

    def test_untokenized_record(self, event):
        with pytest.raises(ContractViolation):
            make_batch([event])

    def test_empty_batch(self):
        with pytest.raises(ContractViolation):
            make_batch([])


class TestSynthetic:
    def test_splits_and_ids(self, dataset):
        assert [r.event_id for r in dataset.train] == [f"train_{i:05d}" for i in range(6)]
        assert len(dataset.val) == 4

    def test_same_seed_same_bytes(self, tmp_path, run_config):
        generate_events(run_config.data, tmp_path / "a")
        generate_events(run_config.data, tmp_path / "b")
        for first in sorted((tmp_path / "a" / "features").iterdir()):
            second = tmp_path / "b" / "features" / first.name
            assert first.read_bytes() == second.read_bytes()

    def test_cue_follows_the_window_and_names_its_modality(self, tmp_path, run_config):
        events = generate_events(run_config.data, tmp_path)
        for event in events["train"] + events["val"]:
            record = event.record
            fraction = (event.cue_time - record.t_start) / record.duration
            assert 0.2 <= fraction <= 0.4
            assert SLOT_WORDS[event.cue_modality] in record.caption_text.split()

    def test_frames_before_the_cue_carry_no_pattern(self, tmp_path):
        spec = SyntheticSpec(num_train=4, num_val=1, noise=0.0, cue_mix=(1.0, 0.0, 0.0), clip_min=6.0, clip_max=9.0)
        for event in generate_events(spec, tmp_path)["train"]:
            audio = read_features(event.record.audio_path)
            starts = np.arange(len(audio)) * 0.96
            np.testing.assert_array_equal(audio[starts < event.cue_time], 0.0)
            assert np.abs(audio[starts >= event.cue_time]).sum() > 0

    def test_vocab_size_bounds(self, tmp_path):
        with pytest.raises(ConfigError):
            generate_events(SyntheticSpec(vocab_size=10), tmp_path)

    @pytest.mark.parametrize("modality, cue_mix", [("audio", (1.0, 0.0, 0.0)), ("visual", (0.0, 1.0, 0.0))])
    def test_class_is_recoverable_only_after_the_cue(self, tmp_path, modality, cue_mix):
        spec = SyntheticSpec(
            num_train=120, num_val=300, num_classes=4, cue_mix=cue_mix,
            clip_min=6.0, clip_max=9.0, lead_max=1.0, seed=5,
        )
        period = spec.audio_period if modality == "audio" else spec.visual_period
        splits = generate_events(spec, tmp_path)

        def frame_means(event):
            frames = read_features(getattr(event.record, f"{modality}_path")).astype(np.float64)
            after = np.arange(len(frames)) * period >= event.cue_time
            return frames[~after].mean(axis=0), frames[after].mean(axis=0)

        labels = np.array([event.label for event in splits["train"]])
        after_train = np.array([frame_means(event)[1] for event in splits["train"]])
        centroids = np.array([after_train[labels == label].mean(axis=0) for label in range(spec.num_classes)])

        def accuracy(vectors, truth):
            distances = ((vectors[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
            return float(np.mean(distances.argmin(axis=1) == truth))

        truth = np.array([event.label for event in splits["val"]])
        before, after = (np.array(means) for means in zip(*(frame_means(event) for event in splits["val"])))
        assert accuracy(after, truth) > 0.99
        assert accuracy(before, truth) == pytest.approx(1 / spec.num_classes, abs=0.1)
