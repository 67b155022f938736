"""Embedding index: binary format, exact cosine top-k, and the multi-crop
material voting scheme."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimMismatch, DuplicateId, EmptyIndex

logger = logging.getLogger(__name__)

MAGIC = b"RFEMB1\x00\x00"
KIND_MODEL = 0
KIND_MATERIAL = 1
KIND_NAMES = {KIND_MODEL: "model", KIND_MATERIAL: "material"}
MATERIAL_FALLBACK_COSINE = 0.25  # below this, keep the part homogeneous
NORM_TOLERANCE = 1e-4


@dataclass
class IndexEntry:
    id: str
    kind: int
    vector: np.ndarray


@dataclass
class AssetIndex:
    dim: int
    entries: list[IndexEntry]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DuplicateId(e.id)
            seen.add(e.id)

    def of_kind(self, kind: int) -> list[IndexEntry]:
        return [e for e in self.entries if e.kind == kind]

    def by_id(self, eid: str) -> IndexEntry:
        for e in self.entries:
            if e.id == eid:
                return e
        raise KeyError(eid)


def write_index(path, dim: int, entries: list[tuple[str, int, np.ndarray]]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", len(entries), dim))
        for eid, kind, vec in entries:
            raw = eid.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", kind))
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def load_index(path) -> AssetIndex:
    """Read and validate embeddings.bin; near-unit vectors are re-normalized
    with a warning, exact failures raise."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise BadMagic(f"bad magic {data[:8]!r}")
    count, dim = struct.unpack_from("<II", data, 8)
    off = 16
    entries: list[IndexEntry] = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        eid = data[off:off + id_len].decode("utf-8")
        off += id_len
        kind = data[off]
        off += 1
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        if len(vec) != dim:
            raise DimMismatch(f"entry {eid} truncated")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            if norm < 1e-9:
                raise DimMismatch(f"entry {eid} has zero vector")
            logger.warning("re-normalizing %s (|v|=%.6f)", eid, norm)
            vec = vec / norm
        entries.append(IndexEntry(eid, kind, vec))
    return AssetIndex(dim=dim, entries=entries)


def query_topk(index: AssetIndex, q: np.ndarray, k: int,
               kind: int | None = None) -> list[tuple[str, float]]:
    """Exact top-k by cosine, descending; ties break lexicographically by id."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if len(q) != index.dim:
        raise DimMismatch(f"query dim {len(q)} vs index {index.dim}")
    norm = np.linalg.norm(q)
    if norm <= 0:
        raise DimMismatch("query vector has zero norm")
    q = q / norm
    pool = index.entries if kind is None else index.of_kind(kind)
    scored = sorted(((e.id, float(e.vector @ q)) for e in pool),
                    key=lambda t: (-t[1], t[0]))
    return scored[:k]


def select_material(crop_embeddings: list[np.ndarray], index: AssetIndex,
                    k: int = 10) -> str | None:
    """Voting over per-crop top-k material lists.

    Candidates are materials appearing in at least 2 crops' lists (all of the
    single crop's list when there is only one); the winner has the highest
    mean cosine over the crops where it appears. Returns None (homogeneous
    fallback) when the winner's best cosine is below 0.25.
    """
    if not index.of_kind(KIND_MATERIAL):
        raise EmptyIndex("no material entries")
    if not crop_embeddings:
        return None
    per_crop = [query_topk(index, q, k, kind=KIND_MATERIAL) for q in crop_embeddings]
    appearances: dict[str, list[float]] = {}
    for ranked in per_crop:
        for eid, cos in ranked:
            appearances.setdefault(eid, []).append(cos)
    if len(per_crop) == 1:
        candidates = list(appearances)
    else:
        candidates = [eid for eid, scores in appearances.items() if len(scores) >= 2]
        if not candidates:
            candidates = list(appearances)
    ranked = sorted(candidates,
                    key=lambda eid: (-float(np.mean(appearances[eid])), eid))
    winner = ranked[0]
    if max(appearances[winner]) < MATERIAL_FALLBACK_COSINE:
        return None
    return winner
