import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomfit.errors import BadMagic, DimMismatch, DuplicateId, EmptyIndex
from roomfit.retrieval import (
    KIND_MATERIAL, KIND_MODEL, AssetIndex, IndexEntry, load_index, query_topk,
    select_material, write_index,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_index(vectors: dict[str, np.ndarray], kind=KIND_MODEL) -> AssetIndex:
    dim = len(next(iter(vectors.values())))
    return AssetIndex(dim=dim, entries=[IndexEntry(k, kind, unit(v))
                                        for k, v in vectors.items()])


class TestFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "embeddings.bin"
        vecs = [("a", KIND_MODEL, unit([1, 0, 0, 0])),
                ("b", KIND_MATERIAL, unit([0, 1, 0, 0]))]
        write_index(path, 4, vecs)
        idx = load_index(path)
        assert idx.dim == 4
        assert [e.id for e in idx.entries] == ["a", "b"]
        assert [e.kind for e in idx.entries] == [KIND_MODEL, KIND_MATERIAL]
        assert np.allclose(idx.entries[0].vector, [1, 0, 0, 0])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(BadMagic):
            load_index(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "dup.bin"
        write_index(path, 2, [("x", 0, unit([1, 0])), ("x", 0, unit([0, 1]))])
        with pytest.raises(DuplicateId):
            load_index(path)

    def test_renormalizes_with_warning(self, tmp_path, caplog):
        path = tmp_path / "n.bin"
        write_index(path, 2, [("a", 0, np.array([2.0, 0.0]))])
        with caplog.at_level("WARNING"):
            idx = load_index(path)
        assert np.allclose(np.linalg.norm(idx.entries[0].vector), 1.0)
        assert "re-normalizing" in caplog.text


class TestQueryTopK:
    def test_exact_match_is_rank_one(self):
        idx = make_index({"a": [1, 0, 0], "b": [0, 1, 0], "c": [0, 0, 1]})
        top = query_topk(idx, np.array([0, 1, 0]), 1)
        assert top[0][0] == "b"
        assert top[0][1] == pytest.approx(1.0)

    def test_orthogonal_ties_break_by_id(self):
        idx = make_index({"zeta": [1, 0, 0], "alpha": [0, 1, 0]})
        top = query_topk(idx, np.array([0, 0, 5.0]), 2)
        assert [t[0] for t in top] == ["alpha", "zeta"]
        assert all(abs(t[1]) < 1e-12 for t in top)

    def test_matches_exhaustive_sort(self):
        rng = np.random.default_rng(9)
        vecs = {f"e{i:02d}": rng.normal(size=16) for i in range(50)}
        idx = make_index(vecs)
        q = rng.normal(size=16)
        got = query_topk(idx, q, 10)
        qn = unit(q)
        oracle = sorted(((k, float(unit(v) @ qn)) for k, v in vecs.items()),
                        key=lambda t: (-t[1], t[0]))[:10]
        assert [g[0] for g in got] == [o[0] for o in oracle]
        assert np.allclose([g[1] for g in got], [o[1] for o in oracle])

    def test_dim_mismatch(self):
        idx = make_index({"a": [1, 0]})
        with pytest.raises(DimMismatch):
            query_topk(idx, np.ones(3), 1)
        with pytest.raises(DimMismatch):
            query_topk(idx, np.zeros(2), 1)

    @given(st.floats(0.1, 100.0))
    @settings(max_examples=20, deadline=None)
    def test_scale_invariance(self, scale):
        idx = make_index({f"v{i}": np.eye(4)[i % 4] + 0.1 * i for i in range(6)})
        q = np.array([0.3, -0.2, 0.9, 0.1])
        a = query_topk(idx, q, 6)
        b = query_topk(idx, q * scale, 6)
        assert [x[0] for x in a] == [x[0] for x in b]

    def test_every_entry_retrieves_itself(self):
        rng = np.random.default_rng(4)
        idx = make_index({f"m{i}": rng.normal(size=8) for i in range(20)})
        for e in idx.entries:
            assert query_topk(idx, e.vector, 1)[0][0] == e.id


class TestSelectMaterial:
    def _material_index(self, n=20, dim=8, seed=1):
        rng = np.random.default_rng(seed)
        return make_index({f"mat{i:02d}": rng.normal(size=dim) for i in range(n)},
                          kind=KIND_MATERIAL)

    def test_low_cosine_falls_back(self):
        idx = make_index({"matA": [1, 0, 0, 0], "matB": [0, 1, 0, 0]},
                         kind=KIND_MATERIAL)
        # best cosine ~0.2 < 0.25 threshold
        q = unit(np.array([0.2, 0.0, 0.97979589711, 0]))
        assert select_material([q], idx) is None

    def test_voting_prefers_shared_material(self):
        idx = self._material_index()
        shared = idx.entries[3].vector
        crop1 = unit(shared + 0.05 * idx.entries[7].vector)
        crop2 = unit(shared + 0.05 * idx.entries[11].vector)
        winner = select_material([crop1, crop2], idx, k=10)
        assert winner == idx.entries[3].id

    def test_single_crop_degenerates_to_top1(self):
        idx = self._material_index()
        q = idx.entries[5].vector
        assert select_material([q], idx) == idx.entries[5].id

    def test_constructed_voting_case(self):
        # material M in both top-10 lists with high mean; others single-listed
        dim = 6
        m = unit([1, 1, 0, 0, 0, 0])
        others = {f"x{i}": unit(np.eye(dim)[i]) for i in range(dim)}
        vectors = {"mm": m, **others}
        idx = make_index(vectors, kind=KIND_MATERIAL)
        c1 = unit(m + 0.3 * np.eye(dim)[2])
        c2 = unit(m + 0.3 * np.eye(dim)[3])
        assert select_material([c1, c2], idx, k=3) == "mm"

    def test_empty_index(self):
        idx = make_index({"model": [1, 0]}, kind=KIND_MODEL)
        with pytest.raises(EmptyIndex):
            select_material([np.array([1.0, 0.0])], idx)

    def test_permutation_invariance(self):
        idx = self._material_index()
        rev = AssetIndex(dim=idx.dim, entries=list(reversed(idx.entries)))
        q = [unit(idx.entries[2].vector + 0.1)]
        assert select_material(q, idx) == select_material(q, rev)
