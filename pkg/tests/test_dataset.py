import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.random import default_rng

from viris.dataset import (
    FilenameError,
    ManifestEntry,
    ManifestError,
    NotATemplateError,
    SampleId,
    TemplateDimensionError,
    TemplateRecord,
    TemplateTruncatedError,
    TemplateVersionError,
    format_filename,
    load_manifest,
    load_mask_png,
    load_target_png,
    load_template,
    parse_filename,
    save_manifest,
    save_mask_png,
    save_target_png,
    save_template,
)
from viris.geometry import BinaryMask
from viris.raster import BBox

subjects = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd")), min_size=1, max_size=8
)


class TestFilenames:
    def test_format_examples(self):
        assert format_filename(SampleId("016", "L", 1, 3)) == "016-L1-3.png"
        assert format_filename(SampleId("A7", "R", 2, 8)) == "A7-R2-8.png"

    def test_parse_example(self):
        s = parse_filename("016-L1-3.png")
        assert s == SampleId("016", "L", 1, 3)
        assert s.subject_id == "016"  # leading zeros survive

    def test_parse_bad_eye(self):
        with pytest.raises(FilenameError, match="eye"):
            parse_filename("016-X1-3.png")

    def test_parse_bad_extension(self):
        with pytest.raises(FilenameError, match="\\.png"):
            parse_filename("016-L1-3.jpg")

    def test_parse_malformed(self):
        for name in ("016-L13.png", "016.png", "-L1-3.png", "016-L0-3.png", "016-La-3.png"):
            with pytest.raises(FilenameError):
                parse_filename(name)

    def test_subject_with_dash_rejected(self):
        with pytest.raises(ValueError):
            SampleId("a-b", "L", 1, 1)

    @given(subjects, st.sampled_from("LR"), st.integers(1, 999), st.integers(1, 999))
    @settings(max_examples=100, deadline=None)
    def test_roundtrip(self, subject, eye, session, trial):
        s = SampleId(subject, eye, session, trial)
        assert parse_filename(format_filename(s)) == s


class TestManifest:
    def entry(self, trial=1, image="img1.png"):
        return ManifestEntry(sample=SampleId("016", "L", 1, trial), image_path=image)

    def test_empty_roundtrip(self, tmp_path):
        p = tmp_path / "m.json"
        save_manifest([], p)
        assert p.read_text().strip() == "[]"
        assert load_manifest(p) == []

    def test_roundtrip_byte_stable(self, tmp_path):
        entries = [
            ManifestEntry(
                sample=SampleId("016", "L", 1, 1),
                image_path="a.png",
                mask_iris_path="a_iris.png",
                eye_bbox=BBox(1, 2, 30, 40),
            )
        ]
        p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
        save_manifest(entries, p1)
        save_manifest(load_manifest(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_image_path(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps([{"subject": "016", "eye": "L", "session": 1, "trial": 1}]))
        with pytest.raises(ManifestError, match="entry 0"):
            load_manifest(p)

    def test_duplicate_rejected(self, tmp_path):
        p = tmp_path / "m.json"
        save_manifest([self.entry(), self.entry()], p)
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(p)

    def test_same_sample_different_image_allowed(self, tmp_path):
        p = tmp_path / "m.json"
        save_manifest([self.entry(image="a.png"), self.entry(image="b.png")], p)
        assert len(load_manifest(p)) == 2

    def test_not_a_list(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{}")
        with pytest.raises(ManifestError):
            load_manifest(p)


def random_template(rng, rows=8, cols=336, n_filters=3, sample=None):
    n = rows * cols * n_filters * 2
    return TemplateRecord(
        rows=rows,
        cols=cols,
        n_filters=n_filters,
        code_bits=rng.random(n) < 0.5,
        mask_bits=rng.random(n) < 0.9,
        sample=sample,
    )


class TestTemplateIo:
    def test_default_shape_roundtrip(self, tmp_path):
        rec = random_template(default_rng(0), sample=SampleId("016", "L", 1, 1))
        p = tmp_path / "016-L1-1.tpl"
        save_template(rec, p)
        back = load_template(p)
        assert back.rows == 8 and back.cols == 336 and back.n_filters == 3
        assert np.array_equal(back.code_bits, rec.code_bits)
        assert np.array_equal(back.mask_bits, rec.mask_bits)
        assert back.sample == rec.sample

    @given(st.integers(1, 16), st.integers(1, 64), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_assorted_shapes_roundtrip(self, rows, cols, n_filters, seed):
        rec = random_template(default_rng(seed), rows, cols, n_filters)
        import io, tempfile, os

        fd, path = tempfile.mkstemp(suffix=".tpl")
        os.close(fd)
        try:
            save_template(rec, path)
            back = load_template(path)
            assert np.array_equal(back.code_bits, rec.code_bits)
            assert np.array_equal(back.mask_bits, rec.mask_bits)
        finally:
            os.unlink(path)

    def test_corrupted_magic(self, tmp_path):
        p = tmp_path / "x.tpl"
        save_template(random_template(default_rng(1)), p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"JUNK"
        p.write_bytes(bytes(raw))
        with pytest.raises(NotATemplateError, match="not a template file"):
            load_template(p)

    def test_wrong_version(self, tmp_path):
        p = tmp_path / "x.tpl"
        save_template(random_template(default_rng(2)), p)
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(TemplateVersionError):
            load_template(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "x.tpl"
        save_template(random_template(default_rng(3)), p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-5])
        with pytest.raises(TemplateTruncatedError):
            load_template(p)

    def test_dimension_overflow(self, tmp_path):
        rec = random_template(default_rng(4), rows=1, cols=1, n_filters=1)
        big = TemplateRecord(
            rows=70000,
            cols=1,
            n_filters=1,
            code_bits=np.zeros(70000 * 2, dtype=bool),
            mask_bits=np.zeros(70000 * 2, dtype=bool),
        )
        with pytest.raises(TemplateDimensionError):
            save_template(big, tmp_path / "big.tpl")
        save_template(rec, tmp_path / "ok.tpl")

    def test_sample_recovered_from_stem(self, tmp_path):
        rec = random_template(default_rng(5))
        p = tmp_path / "A7-R2-8.tpl"
        save_template(rec, p)
        assert load_template(p).sample == SampleId("A7", "R", 2, 8)

    def test_bit_length_validation(self):
        with pytest.raises(ValueError):
            TemplateRecord(
                rows=2,
                cols=2,
                n_filters=1,
                code_bits=np.zeros(7, dtype=bool),
                mask_bits=np.zeros(8, dtype=bool),
            )


class TestMaskPng:
    def test_roundtrip(self, tmp_path):
        bits = default_rng(6).random((14, 9)) < 0.5
        p = tmp_path / "m.png"
        save_mask_png(BinaryMask(bits), p)
        assert np.array_equal(load_mask_png(p).bits, bits)


class TestTargetPng:
    def test_roundtrip_within_quantization(self, tmp_path):
        vals = default_rng(7).uniform(-1, 1, (12, 17))
        p = tmp_path / "t.png"
        save_target_png(vals, p)
        back = load_target_png(p)
        assert back.shape == vals.shape
        assert np.max(np.abs(back - vals)) <= (vals.max() - vals.min()) / 65535.0 + 1e-12
