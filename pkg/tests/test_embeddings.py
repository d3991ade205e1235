import json

import numpy as np
import pytest

from cornet.annotations import ClassVocabulary
from cornet.embeddings import (EmbeddingError, SemanticSpace, cosine_matrix, load_semantic_space,
                               synthetic_semantic_space)


def brute_cosine(u, v):
    return sum(a * b for a, b in zip(u, v)) / (sum(a * a for a in u) ** 0.5 * sum(b * b for b in v) ** 0.5)


@pytest.fixture
def vocab():
    return ClassVocabulary(("pick up", "put down", "walk", "sit down"))


def write(tmp_path, mapping):
    path = tmp_path / "emb.json"
    path.write_text(json.dumps(mapping))
    return path


class TestLoad:
    def test_width_768(self, tmp_path, vocab):
        rng = np.random.default_rng(0)
        rows = {lab: rng.standard_normal(768).tolist() for lab in vocab.labels}
        space = load_semantic_space(write(tmp_path, rows), vocab)
        assert space.matrix.shape == (4, 768) and space.dim == 768
        np.testing.assert_array_equal(space.matrix[2], rows["walk"])
        assert space.provenance == "file"

    def test_missing_label_named(self, tmp_path, vocab):
        rows = {lab: [1.0, 2.0] for lab in vocab.labels if lab != "walk"}
        with pytest.raises(EmbeddingError, match="walk"):
            load_semantic_space(write(tmp_path, rows), vocab)

    def test_permuted_rows_align(self, tmp_path, vocab):
        rng = np.random.default_rng(1)
        rows = {lab: rng.standard_normal(5).tolist() for lab in vocab.labels}
        a = load_semantic_space(write(tmp_path, rows), vocab)
        b = load_semantic_space(write(tmp_path, dict(reversed(list(rows.items())))), vocab)
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_inconsistent_widths(self, tmp_path, vocab):
        rows = {lab: [1.0, 2.0] for lab in vocab.labels}
        rows["walk"] = [1.0, 2.0, 3.0]
        with pytest.raises(EmbeddingError, match="inconsistent"):
            load_semantic_space(write(tmp_path, rows), vocab)

    def test_non_finite(self, tmp_path, vocab):
        path = tmp_path / "emb.json"
        rows = {lab: [1.0, 2.0] for lab in vocab.labels}
        path.write_text(json.dumps(rows).replace("[1.0, 2.0]", "[1.0, NaN]", 1))
        with pytest.raises(EmbeddingError, match="non-finite"):
            load_semantic_space(path, vocab)

    def test_zero_row_rejected(self):
        with pytest.raises(EmbeddingError, match="all-zero"):
            SemanticSpace(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_normalize_flag(self, tmp_path, vocab):
        rows = {lab: [3.0, 4.0 + i] for i, lab in enumerate(vocab.labels)}
        space = load_semantic_space(write(tmp_path, rows), vocab, normalize=True)
        np.testing.assert_allclose(np.linalg.norm(space.matrix, axis=1), 1.0, rtol=1e-15)

    def test_save_load_idempotent(self, tmp_path, vocab):
        space = synthetic_semantic_space(vocab, 6, seed=3)
        space.save(tmp_path / "e.json", vocab)
        again = load_semantic_space(tmp_path / "e.json", vocab)
        np.testing.assert_array_equal(again.matrix, space.matrix)


class TestSynthetic:
    def test_deterministic(self, vocab):
        a = synthetic_semantic_space(vocab, 8, seed=11, affinity=[(0, 1)])
        b = synthetic_semantic_space(vocab, 8, seed=11, affinity=[(0, 1)])
        assert a.matrix.tobytes() == b.matrix.tobytes()
        assert a.provenance == "synthetic"

    def test_width_must_be_at_least_two(self, vocab):
        with pytest.raises(EmbeddingError):
            synthetic_semantic_space(vocab, 1, seed=0)

    def test_affinity_pair_more_similar_than_median(self):
        vocab = ClassVocabulary(tuple(f"l{i}" for i in range(8)))
        wins = 0
        for seed in range(20):
            m = synthetic_semantic_space(vocab, 32, seed=seed, affinity=[(2, 5)]).matrix
            cos = [[brute_cosine(m[i], m[j]) for j in range(8)] for i in range(8)]
            pairwise = [cos[i][j] for i in range(8) for j in range(i + 1, 8)]
            wins += cos[2][5] > np.median(pairwise)
        assert wins == 20

    def test_no_affinity_mean_cosine_near_zero(self):
        vocab = ClassVocabulary(tuple(f"l{i}" for i in range(10)))
        means = []
        for seed in range(200):
            c = cosine_matrix(synthetic_semantic_space(vocab, 64, seed=seed).matrix)
            means.append(c[np.triu_indices(10, 1)].mean())
        se = np.std(means, ddof=1) / np.sqrt(len(means))
        assert abs(np.mean(means)) < 3 * se

    def test_cosine_helper_matches_brute_force(self):
        m = np.random.default_rng(4).standard_normal((4, 7))
        c = cosine_matrix(m)
        for i in range(4):
            for j in range(4):
                assert c[i, j] == pytest.approx(brute_cosine(m[i], m[j]), abs=1e-12)
