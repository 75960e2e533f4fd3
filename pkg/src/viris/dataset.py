"""Sample identity, manifests, frame streams and binary template persistence."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import BinaryMask
from .raster import BBox

TEMPLATE_MAGIC = b"VIRT"
TEMPLATE_VERSION = 1
TEMPLATE_EXT = ".tpl"


class FilenameError(ValueError):
    """Raised when a sample filename violates the naming convention."""


class ManifestError(ValueError):
    """Raised on malformed manifest or session files."""


class TemplateFormatError(ValueError):
    """Base for template (de)serialization failures."""


class NotATemplateError(TemplateFormatError):
    pass


class TemplateVersionError(TemplateFormatError):
    pass


class TemplateTruncatedError(TemplateFormatError):
    pass


class TemplateDimensionError(TemplateFormatError):
    pass


@dataclass(frozen=True)
class SampleId:
    """Identity of one captured image: subject, eye, session, trial."""

    subject_id: str
    eye: str
    session_id: int
    trial: int

    def __post_init__(self):
        if not self.subject_id:
            raise FilenameError("subject id must be non-empty")
        if any(c in self.subject_id for c in "-/\\"):
            raise FilenameError("subject id must not contain '-' or path separators")
        if self.eye not in ("L", "R"):
            raise FilenameError("eye must be L or R")
        if self.session_id < 1:
            raise FilenameError("session id must be a positive integer")
        if self.trial < 1:
            raise FilenameError("trial must be a positive integer")


def format_filename(sample: SampleId) -> str:
    """"<subject>-<L|R><session>-<trial>.png", integers without padding."""
    return f"{sample.subject_id}-{sample.eye}{sample.session_id}-{sample.trial}.png"


def parse_filename(name: str) -> SampleId:
    """Inverse of :func:`format_filename`.

    Raises :class:`FilenameError` naming the offending field.
    """
    if not name.endswith(".png"):
        raise FilenameError(f"extension must be .png: {name!r}")
    stem = name[: -len(".png")]
    parts = stem.split("-")
    if len(parts) != 3:
        raise FilenameError(f"expected subject-eye+session-trial in {name!r}")
    subject, eye_session, trial_s = parts
    if not subject:
        raise FilenameError(f"subject id empty in {name!r}")
    if not eye_session or eye_session[0] not in ("L", "R"):
        raise FilenameError(f"eye must be L or R in {name!r}")
    eye = eye_session[0]
    session_s = eye_session[1:]
    if not session_s.isdigit():
        raise FilenameError(f"session must be numeric in {name!r}")
    if not trial_s.isdigit():
        raise FilenameError(f"trial must be numeric in {name!r}")
    session, trial = int(session_s), int(trial_s)
    if session < 1:
        raise FilenameError(f"session must be positive in {name!r}")
    if trial < 1:
        raise FilenameError(f"trial must be positive in {name!r}")
    return SampleId(subject_id=subject, eye=eye, session_id=session, trial=trial)


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset sample: image path plus optional masks and detector box."""

    sample: SampleId
    image_path: str
    mask_iris_path: str | None = None
    mask_pupil_path: str | None = None
    eye_bbox: BBox | None = None

    def __post_init__(self):
        if not self.image_path:
            raise ManifestError("image_path must be non-empty")


def _bbox_from_json(obj, where: str) -> BBox:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: bbox must be an object")
    try:
        return BBox(
            x0=float(obj["x0"]), y0=float(obj["y0"]),
            w=float(obj["w"]), h=float(obj["h"]),
        )
    except KeyError as exc:
        raise ManifestError(f"{where}: bbox missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: invalid bbox: {exc}") from exc


def _bbox_to_json(b: BBox) -> dict:
    # floats on the way out so save/load/save is byte-stable
    return {"x0": float(b.x0), "y0": float(b.y0), "w": float(b.w), "h": float(b.h)}


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a manifest JSON array; errors carry the entry index and field."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ManifestError("manifest root must be a JSON array")
    entries = []
    seen = set()
    for i, obj in enumerate(doc):
        where = f"entry {i}"
        if not isinstance(obj, dict):
            raise ManifestError(f"{where}: must be an object")
        for field in ("subject", "eye", "session", "trial", "image"):
            if field not in obj:
                raise ManifestError(f"{where}: missing field {field!r}")
        try:
            sample = SampleId(
                subject_id=str(obj["subject"]),
                eye=str(obj["eye"]),
                session_id=int(obj["session"]),
                trial=int(obj["trial"]),
            )
        except (FilenameError, TypeError, ValueError) as exc:
            raise ManifestError(f"{where}: invalid sample id: {exc}") from exc
        image = obj["image"]
        if not isinstance(image, str) or not image:
            raise ManifestError(f"{where}: field 'image' must be a non-empty string")
        key = (sample, image)
        if key in seen:
            raise ManifestError(f"{where}: duplicate sample {format_filename(sample)}")
        seen.add(key)
        bbox = _bbox_from_json(obj["bbox"], where) if "bbox" in obj else None
        entries.append(
            ManifestEntry(
                sample=sample,
                image_path=image,
                mask_iris_path=obj.get("iris_mask"),
                mask_pupil_path=obj.get("pupil_mask"),
                eye_bbox=bbox,
            )
        )
    return entries


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write entries as the documented JSON schema (stable key order)."""
    doc = []
    for e in entries:
        obj = {
            "subject": e.sample.subject_id,
            "eye": e.sample.eye,
            "session": e.sample.session_id,
            "trial": e.sample.trial,
            "image": e.image_path,
        }
        if e.mask_iris_path is not None:
            obj["iris_mask"] = e.mask_iris_path
        if e.mask_pupil_path is not None:
            obj["pupil_mask"] = e.mask_pupil_path
        if e.eye_bbox is not None:
            obj["bbox"] = _bbox_to_json(e.eye_bbox)
        doc.append(obj)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class FrameRecord:
    """One replayed camera frame with optional detector boxes."""

    path: str
    eye_bbox: BBox | None = None
    iris_bbox: BBox | None = None


@dataclass(frozen=True)
class FrameStream:
    """Ordered frames of one capture session."""

    subject_id: str
    session_id: int
    eye: str
    frames: tuple[FrameRecord, ...]

    def __post_init__(self):
        if not self.frames:
            raise ManifestError("frame stream must be non-empty")
        if self.eye not in ("L", "R"):
            raise ManifestError("eye must be L or R")


def load_frame_stream(path: str | Path) -> FrameStream:
    """Read a session file {subject, session, eye, frames:[{path, bbox?}]}."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"session file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("session root must be a JSON object")
    for field in ("subject", "session", "eye", "frames"):
        if field not in doc:
            raise ManifestError(f"session file missing field {field!r}")
    frames_doc = doc["frames"]
    if not isinstance(frames_doc, list) or not frames_doc:
        raise ManifestError("field 'frames' must be a non-empty array")
    frames = []
    for i, obj in enumerate(frames_doc):
        where = f"frame {i}"
        if not isinstance(obj, dict) or "path" not in obj:
            raise ManifestError(f"{where}: missing field 'path'")
        frames.append(
            FrameRecord(
                path=str(obj["path"]),
                eye_bbox=_bbox_from_json(obj["bbox"], where) if "bbox" in obj else None,
                iris_bbox=(
                    _bbox_from_json(obj["iris_bbox"], where)
                    if "iris_bbox" in obj
                    else None
                ),
            )
        )
    return FrameStream(
        subject_id=str(doc["subject"]),
        session_id=int(doc["session"]),
        eye=str(doc["eye"]),
        frames=tuple(frames),
    )


@dataclass(frozen=True, eq=False)
class TemplateRecord:
    """Bit-packed iris code and mask over a rows x cols x (2 * n_filters) grid.

    ``code_bits`` and ``mask_bits`` are flat boolean arrays in row-major
    (row, col, filter, re/im) order; a zero mask bit means the code bit
    carries no information.
    """

    rows: int
    cols: int
    n_filters: int
    code_bits: np.ndarray
    mask_bits: np.ndarray
    sample: SampleId | None = None

    def __post_init__(self):
        if min(self.rows, self.cols, self.n_filters) < 1:
            raise ValueError("grid dimensions must be positive")
        n = self.rows * self.cols * 2 * self.n_filters
        code = np.asarray(self.code_bits).astype(bool).reshape(-1)
        mask = np.asarray(self.mask_bits).astype(bool).reshape(-1)
        if code.size != n or mask.size != n:
            raise ValueError(f"bit arrays must have exactly {n} bits")
        code = code.copy()
        mask = mask.copy()
        code.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "code_bits", code)
        object.__setattr__(self, "mask_bits", mask)

    @property
    def n_bits(self) -> int:
        return self.rows * self.cols * 2 * self.n_filters


_HEADER = struct.Struct("<4sBHHB")


def save_template(rec: TemplateRecord, path: str | Path) -> None:
    """Write the versioned little-endian binary template format."""
    if rec.rows > 0xFFFF or rec.cols > 0xFFFF:
        raise TemplateDimensionError("rows/cols exceed u16 range")
    if rec.n_filters > 0xFF:
        raise TemplateDimensionError("n_filters exceeds u8 range")
    header = _HEADER.pack(
        TEMPLATE_MAGIC, TEMPLATE_VERSION, rec.rows, rec.cols, rec.n_filters
    )
    payload = np.packbits(rec.code_bits).tobytes() + np.packbits(rec.mask_bits).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_template(path: str | Path, sample: SampleId | None = None) -> TemplateRecord:
    """Read a template file; the sample id falls back to the file stem."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TemplateTruncatedError("file shorter than the header")
    magic, version, rows, cols, n_filters = _HEADER.unpack_from(blob)
    if magic != TEMPLATE_MAGIC:
        raise NotATemplateError("not a template file")
    if version != TEMPLATE_VERSION:
        raise TemplateVersionError(f"unsupported template version {version}")
    if min(rows, cols, n_filters) < 1:
        raise TemplateFormatError("template declares a zero dimension")
    n_bits = rows * cols * 2 * n_filters
    n_bytes = (n_bits + 7) // 8
    payload = blob[_HEADER.size :]
    if len(payload) != 2 * n_bytes:
        raise TemplateTruncatedError(
            f"payload is {len(payload)} bytes, expected {2 * n_bytes}"
        )
    code = np.unpackbits(np.frombuffer(payload[:n_bytes], dtype=np.uint8))[:n_bits]
    mask = np.unpackbits(np.frombuffer(payload[n_bytes:], dtype=np.uint8))[:n_bits]
    if sample is None:
        try:
            sample = parse_filename(Path(path).stem + ".png")
        except FilenameError:
            sample = None
    return TemplateRecord(
        rows=rows,
        cols=cols,
        n_filters=n_filters,
        code_bits=code.astype(bool),
        mask_bits=mask.astype(bool),
        sample=sample,
    )


def load_mask_png(path: str | Path) -> BinaryMask:
    """Read an 8-bit mask PNG; values >= 128 count as foreground."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"mask PNG must be single-channel 8-bit, got {im.mode!r}")
        arr = np.asarray(im)
    return BinaryMask(arr >= 128)


def save_mask_png(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as 0/255 single-channel PNG."""
    arr = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def save_target_png(values: np.ndarray, path: str | Path) -> None:
    """Export a float map as 16-bit PNG plus a JSON sidecar with the mapping.

    The affine map sends the array minimum to 0 and maximum to 65535; the
    sidecar (same path with .json appended) records both bounds.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("target map must be 2-D")
    lo = float(arr.min())
    hi = float(arr.max())
    scale = (hi - lo) if hi > lo else 1.0
    quant = np.rint((arr - lo) / scale * 65535.0).astype(np.uint16)
    Image.fromarray(quant).save(path, format="PNG")
    sidecar = {
        "min": lo,
        "max": hi,
        "width": arr.shape[1],
        "height": arr.shape[0],
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_target_png(path: str | Path) -> np.ndarray:
    """Inverse of :func:`save_target_png` using the sidecar mapping."""
    with open(str(path) + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    lo, hi = float(sidecar["min"]), float(sidecar["max"])
    scale = (hi - lo) if hi > lo else 1.0
    return arr / 65535.0 * scale + lo
