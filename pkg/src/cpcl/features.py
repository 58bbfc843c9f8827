"""Dataset types and the binary feature-file / manifest formats.

Feature files are little-endian: magic ``CPCL``, u8 version (=1), u8 modality
code (0=video, 1=face, 2=audio, 3=text), u16 reserved (=0), u32 row count,
u32 dim, then ``n*dim`` float32 values row-major. Manifests are JSON Lines.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CPCL"
VERSION = 1
HEADER = struct.Struct("<4sBBHII")  # 16 bytes

MODALITY_CODES = {"video": 0, "face": 1, "audio": 2, "text": 3}
CODE_TO_MODALITY = {v: k for k, v in MODALITY_CODES.items()}
_U32_MAX = 2**32 - 1


class FeatureFileError(ValueError):
    """Base class for feature-file format violations."""


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class HeaderFieldError(FeatureFileError):
    """Unknown modality code or nonzero reserved bytes."""


class TruncatedPayloadError(FeatureFileError):
    pass


class NonFiniteValueError(FeatureFileError):
    pass


class InvariantError(ValueError):
    """A domain type constraint was violated."""


class ManifestError(ValueError):
    """Malformed manifest line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"manifest line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class FeatureSequence:
    """A variable-length sequence of fixed-dimension embedding vectors.

    ``tokens`` is an (n, dim) float64 array. Faces may be empty (n == 0);
    every other modality requires at least one token.
    """

    modality: str
    dim: int
    tokens: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITY_CODES:
            raise InvariantError(f"unknown modality {self.modality!r}")
        if self.dim < 1:
            raise InvariantError("dim must be a positive integer")
        arr = np.asarray(self.tokens, dtype=np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(-1, self.dim) if arr.size else arr.reshape(0, self.dim)
        if arr.shape[1] != self.dim:
            raise InvariantError(
                f"token width {arr.shape[1]} does not match dim {self.dim}"
            )
        if arr.shape[0] < 1 and self.modality != "face":
            raise InvariantError(f"{self.modality} sequence must have n >= 1")
        if not np.all(np.isfinite(arr)):
            raise InvariantError("tokens contain non-finite values")
        self.tokens = arr

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass
class CommentRecord:
    text: str
    level: int = 1


@dataclass
class VideoSample:
    """One video with its four modality sequences and comments.

    Video, face, and text must share the embedding dim; audio may arrive at
    its raw (pre-lift) width, since the trainable lift maps it up inside the
    model. A fully pre-encoded sample has all four dims equal.
    """

    id: str
    label: int
    video_feat: FeatureSequence
    face_feat: FeatureSequence
    audio_feat: FeatureSequence
    text_feat: FeatureSequence
    comments: list[CommentRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvariantError(f"label must be 0 or 1, got {self.label}")
        dims = {self.video_feat.dim, self.face_feat.dim, self.text_feat.dim}
        if len(dims) != 1:
            raise InvariantError(f"modalities disagree on dim: {sorted(dims)}")
        if len(self.face_feat) != len(self.video_feat):
            raise InvariantError(
                "face sequence must have one slot per video frame "
                f"({len(self.face_feat)} != {len(self.video_feat)})"
            )


def read_feature_file(path: str | Path) -> FeatureSequence:
    """Decode a binary feature file into a float64 FeatureSequence."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        if data[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
        raise TruncatedPayloadError(f"{path}: header truncated ({len(data)} bytes)")
    magic, version, mod_code, reserved, n, dim = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if mod_code not in CODE_TO_MODALITY:
        raise HeaderFieldError(f"{path}: unknown modality code {mod_code}")
    if reserved != 0:
        raise HeaderFieldError(f"{path}: reserved field must be 0, got {reserved}")
    expected = HEADER.size + 4 * n * dim
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    tokens = values.astype(np.float64).reshape(n, dim)
    return FeatureSequence(CODE_TO_MODALITY[mod_code], dim, tokens)


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write ``seq`` in the binary format, narrowing values to float32."""
    n, dim = seq.tokens.shape
    if n > _U32_MAX or dim > _U32_MAX:
        raise InvariantError(f"row count/dim exceed u32 range: n={n}, dim={dim}")
    with np.errstate(over="ignore"):
        narrowed = seq.tokens.astype("<f4")
    if not np.all(np.isfinite(narrowed)):
        raise NonFiniteValueError("values overflow float32 range")
    header = HEADER.pack(MAGIC, VERSION, MODALITY_CODES[seq.modality], 0, n, dim)
    Path(path).write_bytes(header + narrowed.tobytes())


def assemble_face_track(
    frames: int, detections: list[tuple[int, np.ndarray]], dim: int | None = None
) -> FeatureSequence:
    """Build a per-frame face sequence; undetected frames get zero rows.

    ``dim`` is required when ``detections`` is empty (otherwise inferred).
    """
    if detections:
        vec_dim = len(np.asarray(detections[0][1]).ravel())
    elif dim is not None:
        vec_dim = dim
    else:
        raise InvariantError("dim required when there are no detections")
    tokens = np.zeros((frames, vec_dim), dtype=np.float64)
    seen: set[int] = set()
    for idx, vec in detections:
        if not 0 <= idx < frames:
            raise InvariantError(f"frame index {idx} out of range [0, {frames})")
        if idx in seen:
            raise InvariantError(f"duplicate detection for frame {idx}")
        seen.add(idx)
        v = np.asarray(vec, dtype=np.float64).ravel()
        if len(v) != vec_dim:
            raise InvariantError(f"detection dim {len(v)} != {vec_dim}")
        tokens[idx] = v
    return FeatureSequence("face", vec_dim, tokens)


_MANIFEST_FIELDS = (
    "id",
    "label",
    "video_feat",
    "face_feat",
    "audio_feat_or_wav",
    "text_feat",
    "comments_file",
)


@dataclass
class SampleDescriptor:
    """One manifest line; feature files are opened lazily via ``load_*``."""

    id: str
    label: int
    video_path: Path
    face_path: Path
    audio_path: Path
    text_path: Path
    comments_path: Path

    @property
    def audio_is_wav(self) -> bool:
        return self.audio_path.suffix.lower() == ".wav"

    def load_feature(self, which: str) -> FeatureSequence:
        path = {
            "video": self.video_path,
            "face": self.face_path,
            "audio": self.audio_path,
            "text": self.text_path,
        }[which]
        if not path.exists():
            raise FileNotFoundError(f"sample {self.id}: missing {which} file {path}")
        return read_feature_file(path)

    def load_comments(self) -> list[CommentRecord]:
        """First-level comments with non-empty text, in file order."""
        if not self.comments_path.exists():
            raise FileNotFoundError(
                f"sample {self.id}: missing comments file {self.comments_path}"
            )
        records = []
        with open(self.comments_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(lineno, f"bad comment JSON: {exc}") from exc
                text = obj.get("text", "")
                level = obj.get("level", 1)
                if not isinstance(text, str) or not isinstance(level, int):
                    raise ManifestError(lineno, "comment needs str text and int level")
                if level == 1 and text.strip():
                    records.append(CommentRecord(text=text, level=level))
        return records


def load_manifest(path: str | Path) -> list[SampleDescriptor]:
    """Parse a JSON-Lines manifest into descriptors, order-preserving.

    Relative paths resolve against the manifest's directory. Referenced files
    are checked only when a descriptor loads them.
    """
    path = Path(path)
    base = path.parent
    descriptors = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(lineno, f"invalid JSON: {exc}") from exc
            missing = [k for k in _MANIFEST_FIELDS if k not in obj]
            if missing:
                raise ManifestError(lineno, f"missing fields {missing}")
            label = obj["label"]
            if label not in (0, 1):
                raise ManifestError(lineno, f"label must be 0 or 1, got {label!r}")
            if not isinstance(obj["id"], str):
                raise ManifestError(lineno, "id must be a string")
            descriptors.append(
                SampleDescriptor(
                    id=obj["id"],
                    label=label,
                    video_path=base / obj["video_feat"],
                    face_path=base / obj["face_feat"],
                    audio_path=base / obj["audio_feat_or_wav"],
                    text_path=base / obj["text_feat"],
                    comments_path=base / obj["comments_file"],
                )
            )
    return descriptors
