"""Embedding containers, file formats and the synthetic dataset generator.

On disk vectors are 32-bit floats (binary format below); in memory all math
runs in float64. Frame rate for duration <-> speech-frame conversion is fixed
at 100 frames/s (10 ms shift).

Binary embedding file layout (little-endian):
    magic "SVEB" | u32 version=1 | u32 dim | u64 count
    per record: u16 id_len | id (UTF-8) | dim * f32
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    SvkitError,
    TruncatedFile,
    ZeroVector,
)

FRAME_RATE = 100.0  # VAD / feature frames per second

_MAGIC = b"SVEB"
_VERSION = 1


@dataclass(frozen=True)
class UttMeta:
    """Per-utterance metadata: VAD speech-frame count, duration, speaker."""

    speech_frames: int
    duration_s: float
    speaker: str | None = None

    def __post_init__(self):
        if self.speech_frames < 0:
            raise SvkitError("speech_frames must be nonnegative")
        if self.duration_s < 0:
            raise SvkitError("duration_s must be nonnegative")
        # allow half a frame of slack for rounding at the boundary
        if self.speech_frames > self.duration_s * FRAME_RATE + 0.5:
            raise SvkitError(
                f"speech_frames={self.speech_frames} inconsistent with "
                f"duration_s={self.duration_s} at {FRAME_RATE} fps"
            )


@dataclass(frozen=True)
class Embedding:
    id: str
    vec: np.ndarray


class EmbeddingSet:
    """Ordered collection of same-dimension embeddings, immutable after load.

    Vectors are stored as a single (n, dim) float64 matrix; `meta` maps a
    subset of the ids to UttMeta.
    """

    def __init__(self, ids, vectors, meta=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        ids = list(ids)
        if vectors.ndim != 2:
            vectors = vectors.reshape(len(ids), -1)
        if len(ids) != vectors.shape[0]:
            raise SvkitError("ids and vectors disagree in length")
        if vectors.shape[0] > 0 and vectors.shape[1] < 1:
            raise SvkitError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(vectors)):
            raise SvkitError("embedding vectors must be finite")
        seen = set()
        for i in ids:
            if not i:
                raise SvkitError("utterance id must be non-empty")
            if i in seen:
                raise DuplicateId(f"duplicate utterance id '{i}'")
            seen.add(i)
        meta = dict(meta) if meta else {}
        unknown = set(meta) - seen
        if unknown:
            raise SvkitError(f"metadata for unknown ids: {sorted(unknown)[:5]}")
        self.ids = ids
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.meta = meta
        self._index = {u: i for i, u in enumerate(ids)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        for i, u in enumerate(self.ids):
            yield Embedding(u, self.vectors[i])

    def __contains__(self, utt_id):
        return utt_id in self._index

    def vector(self, utt_id):
        return self.vectors[self.index(utt_id)]

    def index(self, utt_id):
        try:
            return self._index[utt_id]
        except KeyError:
            raise SvkitError(f"unknown utterance id '{utt_id}'") from None

    def with_vectors(self, vectors):
        """New set with the same ids/meta but replaced vectors."""
        return EmbeddingSet(self.ids, vectors, self.meta)


def length_normalize(emb_set: EmbeddingSet) -> EmbeddingSet:
    """Scale every vector to unit Euclidean norm. Raises ZeroVector on a
    zero-norm input (corrupt data)."""
    norms = np.linalg.norm(emb_set.vectors, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ZeroVector(emb_set.ids[int(zero[0])])
    return emb_set.with_vectors(emb_set.vectors / norms[:, None])


# ---------------------------------------------------------------------------
# file formats

def write_embeddings(emb_set: EmbeddingSet, path, fmt="binary"):
    if fmt == "binary":
        _write_binary(emb_set, path)
    elif fmt == "text":
        _write_text(emb_set, path)
    else:
        raise SvkitError(f"unknown embedding format '{fmt}'")


def read_embeddings(path, fmt="binary") -> EmbeddingSet:
    if fmt == "binary":
        return _read_binary(path)
    if fmt == "text":
        return _read_text(path)
    raise SvkitError(f"unknown embedding format '{fmt}'")


def _write_binary(emb_set, path):
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQ", _VERSION, emb_set.dim, len(emb_set)))
        for i, utt_id in enumerate(emb_set.ids):
            raw = utt_id.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(emb_set.vectors[i].astype("<f4").tobytes())


def _read_binary(path):
    with open(path, "rb") as f:
        header = f.read(20)
        if len(header) < 20:
            raise TruncatedFile(f"{path}: header truncated")
        if header[:4] != _MAGIC:
            raise BadMagic(f"{path}: bad magic {header[:4]!r}")
        version, dim, count = struct.unpack("<IIQ", header[4:])
        if version != _VERSION:
            raise SvkitError(f"{path}: unsupported version {version}")
        ids = []
        vecs = np.empty((count, dim), dtype=np.float64)
        for r in range(count):
            lenbuf = f.read(2)
            if len(lenbuf) < 2:
                raise TruncatedFile(f"{path}: record {r} truncated")
            (id_len,) = struct.unpack("<H", lenbuf)
            raw = f.read(id_len)
            if len(raw) < id_len:
                raise TruncatedFile(f"{path}: record {r} truncated")
            payload = f.read(4 * dim)
            if len(payload) < 4 * dim:
                raise TruncatedFile(f"{path}: record {r} truncated")
            ids.append(raw.decode("utf-8"))
            vecs[r] = np.frombuffer(payload, dtype="<f4")
        if f.read(1):
            raise SvkitError(f"{path}: trailing bytes after {count} records")
    return EmbeddingSet(ids, vecs)


def _write_text(emb_set, path):
    with open(path, "w") as f:
        for i, utt_id in enumerate(emb_set.ids):
            vals = " ".join(repr(float(v)) for v in emb_set.vectors[i])
            f.write(f"{utt_id} {vals}\n")


def _read_text(path):
    ids, rows = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as e:
                raise SvkitError(f"{path}:{lineno}: {e}") from None
    if rows:
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise DimMismatch(f"{path}: inconsistent dimensions {sorted(dims)}")
    return EmbeddingSet(ids, np.array(rows, dtype=np.float64))


def write_metadata(meta, path):
    """CSV `utt_id,speech_frames,duration_s[,speaker]` with header row."""
    has_speaker = any(m.speaker is not None for m in meta.values())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["utt_id", "speech_frames", "duration_s"]
        if has_speaker:
            header.append("speaker")
        w.writerow(header)
        for utt_id, m in meta.items():
            row = [utt_id, m.speech_frames, repr(float(m.duration_s))]
            if has_speaker:
                row.append(m.speaker if m.speaker is not None else "")
            w.writerow(row)


def read_metadata(path):
    meta = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"utt_id", "speech_frames", "duration_s"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise SvkitError(f"{path}: missing metadata columns")
        for row in reader:
            speaker = row.get("speaker") or None
            meta[row["utt_id"]] = UttMeta(
                speech_frames=int(row["speech_frames"]),
                duration_s=float(row["duration_s"]),
                speaker=speaker,
            )
    return meta


# ---------------------------------------------------------------------------
# synthetic data

def synth_dataset(
    num_speakers,
    utts_per_speaker,
    dim,
    concentration,
    duration_range_s=(2.0, 12.0),
    seed=0,
) -> EmbeddingSet:
    """Labeled embeddings on the unit sphere for desk-scale experiments.

    Speaker means are uniform on the sphere; each utterance is the normalized
    sum of its speaker mean and isotropic noise scaled by 1/concentration.
    Larger concentration = tighter speakers. Durations are uniform in
    [lo, hi]; speech frames fill the whole duration.
    """
    if num_speakers < 1:
        raise SvkitError("num_speakers must be >= 1")
    if utts_per_speaker < 1:
        raise SvkitError("utts_per_speaker must be >= 1")
    if concentration < 0:
        raise SvkitError("concentration must be >= 0")
    lo, hi = duration_range_s
    if lo > hi:
        raise SvkitError("duration range lo must be <= hi")

    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_speakers, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    ids, vecs, meta = [], [], {}
    for s in range(num_speakers):
        spk = f"spk{s:04d}"
        noise = rng.standard_normal((utts_per_speaker, dim))
        if concentration > 0:
            raw = means[s] + noise / concentration
        else:
            raw = noise
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        durations = rng.uniform(lo, hi, size=utts_per_speaker)
        for u in range(utts_per_speaker):
            utt_id = f"{spk}_utt{u:03d}"
            ids.append(utt_id)
            vecs.append(raw[u])
            dur = float(durations[u])
            meta[utt_id] = UttMeta(
                speech_frames=int(dur * FRAME_RATE),
                duration_s=dur,
                speaker=spk,
            )
    return EmbeddingSet(ids, np.array(vecs), meta)
