import gzip
import json

import numpy as np
import pytest

from coordwatch.embed import (
    DegenerateVocabulary,
    DimensionMismatch,
    EmbeddingMatrix,
    MalformedVectors,
    MissingRows,
    RowMismatch,
    SgnsConfig,
    concat_align,
    load_external_embeddings,
    pca,
    pca_reduce,
    pv_dbow,
    reduce_normalize,
    tokenize,
    train_sgns,
)

from .conftest import make_dataset
from .oracles import pca_eigh_oracle


def cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def clique_walks(n_walks=400, length=20, seed=0):
    """Uniform random walks on two disjoint 5-cliques (nodes 0..4 and 5..9)."""
    rng = np.random.default_rng(seed)
    walks = []
    for i in range(n_walks):
        node = i % 10
        walk = [node]
        for _ in range(length - 1):
            base = 0 if node < 5 else 5
            node = base + int(rng.choice([j for j in range(5) if base + j != node]))
            walk.append(node)
        walks.append([f"n{v}" for v in walk])
    return walks


# -- SGNS ------------------------------------------------------------------------


def test_co_occurring_tokens_align():
    corpus = [["alpha", "beta"]] * 200 + [["gamma", "delta"]] * 200
    m = train_sgns(corpus, SgnsConfig(dim=16, epochs=10, seed=3)).word_matrix()
    assert cos(m.row("alpha"), m.row("beta")) > 0.9
    assert cos(m.row("gamma"), m.row("delta")) > 0.9


def test_two_cliques_separate():
    m = train_sgns(clique_walks(), SgnsConfig(dim=16, window=3, epochs=3, seed=1)).word_matrix()
    a = [m.row(f"n{i}") for i in range(5)]
    b = [m.row(f"n{i}") for i in range(5, 10)]
    intra = np.mean([cos(x, y) for grp in (a, b) for i, x in enumerate(grp) for y in grp[i + 1:]])
    inter = np.mean([cos(x, y) for x in a for y in b])
    assert intra > inter + 0.2


@pytest.mark.parametrize("corpus", [[], [["only"]], [["same", "same"]]])
def test_degenerate_vocabulary(corpus):
    with pytest.raises(DegenerateVocabulary):
        train_sgns(corpus, SgnsConfig(dim=4))


def test_sgns_config_validation():
    for bad in ({"dim": 1}, {"window": 0}, {"negatives": 0}, {"epochs": 0}, {"learning_rate": 0}):
        with pytest.raises(ValueError):
            SgnsConfig(**bad)


def test_sgns_bitwise_deterministic():
    cfg = SgnsConfig(dim=8, epochs=2, seed=11)
    a = train_sgns(clique_walks(50), cfg)
    b = train_sgns(clique_walks(50), cfg)
    assert np.array_equal(a.input_vectors, b.input_vectors)
    assert np.array_equal(a.output_vectors, b.output_vectors)
    assert a.epoch_losses == b.epoch_losses


def test_loss_trend_non_increasing_when_smoothed():
    model = train_sgns(clique_walks(300), SgnsConfig(dim=16, window=3, epochs=8, seed=2))
    losses = np.asarray(model.epoch_losses)
    smooth = np.convolve(losses, np.ones(3) / 3, mode="valid")
    # converged plateau wobbles at the SGD noise level
    assert np.all(np.diff(smooth) <= 1e-3 * smooth[:-1])
    assert losses[-1] < losses[0]


def test_one_row_per_token():
    model = train_sgns([["a", "b", "c"], ["c", "d"]], SgnsConfig(dim=4, epochs=1))
    assert model.word_matrix().row_ids == ("a", "b", "c", "d")


# -- PV-DBOW ----------------------------------------------------------------------


def docs_dataset():
    texts = ["white helmets staged the attack again", "white helmets staged the attack again",
             "election fraud in the county", "vaccine trial results published today",
             "cat pictures are the best", ""]
    posts = [(f"p{i}", f"u{i}", i, t, "v") for i, t in enumerate(texts)]
    return make_dataset(posts, [("v", "c")], [("c", 1)])


def test_duplicate_documents_close_and_empty_is_zero():
    ds = docs_dataset()
    m = pv_dbow(ds, SgnsConfig(dim=16, epochs=40, seed=5))
    assert m.row_ids == tuple(ds.post_ids)
    assert cos(m.row("p0"), m.row("p1")) > 0.9
    assert not np.any(m.row("p5"))


def test_pv_dbow_deterministic():
    cfg = SgnsConfig(dim=8, epochs=3, seed=9)
    assert np.array_equal(pv_dbow(docs_dataset(), cfg).values, pv_dbow(docs_dataset(), cfg).values)


def test_tokenize_strips_urls_keeps_hashtags():
    assert tokenize("Watch https://youtu.be/abc NOW #WhiteHelmets www.x.com/y") == ["watch", "now", "#whitehelmets"]


# -- external vectors -------------------------------------------------------------


def write_text_vectors(path, rows, dim=None, count=None):
    dim = dim if dim is not None else len(rows[0][1])
    count = count if count is not None else len(rows)
    body = f"dim={dim} count={count}\n" + "".join(rid + " " + " ".join(map(str, v)) + "\n" for rid, v in rows)
    if str(path).endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            fh.write(body)
    else:
        path.write_text(body, encoding="utf-8")
    return path


def test_external_384_dim(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"p{i}", rng.normal(size=384)) for i in range(5)]
    path = write_text_vectors(tmp_path / "v.txt.gz", rows)
    m = load_external_embeddings(path, ["p3", "p0", "p1", "p2", "p4"])
    assert m.dim == 384
    assert m.row_ids[0] == "p3"
    np.testing.assert_allclose(m.values[0], rows[3][1])


def test_external_missing_row(tmp_path):
    path = write_text_vectors(tmp_path / "v.txt", [("a", [1.0, 2.0]), ("b", [3.0, 4.0])])
    with pytest.raises(MissingRows) as info:
        load_external_embeddings(path, ["a", "b", "c"])
    assert info.value.ids == ["c"]


def test_external_inconsistent_widths(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("dim=2 count=2\na 1 2\nb 1 2 3\n")
    with pytest.raises(DimensionMismatch):
        load_external_embeddings(path, ["a", "b"])
    jl = tmp_path / "v.jsonl"
    jl.write_text(json.dumps({"id": "a", "vector": [1, 2]}) + "\n" + json.dumps({"id": "b", "vector": [1]}) + "\n")
    with pytest.raises(DimensionMismatch):
        load_external_embeddings(jl, ["a", "b"])


def test_external_json_lines(tmp_path):
    jl = tmp_path / "v.jsonl"
    jl.write_text("".join(json.dumps({"id": i, "vector": [float(n), 1.0]}) + "\n" for n, i in enumerate("xyz")))
    m = load_external_embeddings(jl, ["z", "x"])
    assert m.values.tolist() == [[2.0, 1.0], [0.0, 1.0]]


@pytest.mark.parametrize("body", ["dims 2\na 1 2\n", "dim=2 count=3\na 1 2\n", "dim=2 count=1\na 1 x\n",
                                  '{"id": "a"}\n'])
def test_external_malformed(tmp_path, body):
    path = tmp_path / "v.txt"
    path.write_text(body)
    with pytest.raises(MalformedVectors):
        load_external_embeddings(path, ["a"])


def test_embedding_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = EmbeddingMatrix(("a", "b", "c"), rng.normal(size=(3, 4)))
    m.save(tmp_path / "m.txt")
    back = EmbeddingMatrix.load(tmp_path / "m.txt")
    assert back.row_ids == m.row_ids
    assert np.array_equal(back.values, m.values)


def test_embedding_matrix_rejects_nan_and_duplicates():
    with pytest.raises(ValueError):
        EmbeddingMatrix(("a",), np.array([[np.nan]]))
    with pytest.raises(ValueError):
        EmbeddingMatrix(("a", "a"), np.zeros((2, 1)))


# -- PCA ---------------------------------------------------------------------------


def test_pca_rank_one():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(30, 1)) * rng.normal(size=(1, 6))
    res = pca(EmbeddingMatrix(tuple(map(str, range(30))), values), 3)
    assert res.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)
    assert res.rank == 1 and res.padded
    assert not np.any(res.matrix.values[:, 1:])


def test_pca_identity_preserves_distances():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(12, 5))
    out = pca_reduce(EmbeddingMatrix(tuple(map(str, range(12))), values), 5).values
    d_in = np.linalg.norm(values[:, None] - values[None], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d_out, d_in, atol=1e-6)


@pytest.mark.parametrize("k", [1, 3, 7, 20])
def test_pca_matches_eigh_oracle(k):
    rng = np.random.default_rng(42 + k)
    values = rng.normal(size=(100, 20)) @ rng.normal(size=(20, 20))
    res = pca(EmbeddingMatrix(tuple(map(str, range(100))), values), k)
    expected = pca_eigh_oracle(values, k)
    np.testing.assert_allclose(res.matrix.values, expected, atol=1e-6)
    centered = values - values.mean(axis=0)
    err = np.linalg.norm(centered - res.matrix.values @ res.components) ** 2
    oracle_err = np.linalg.norm(centered - expected @ np.linalg.pinv(expected) @ centered) ** 2
    assert err == pytest.approx(oracle_err, abs=1e-6)


def test_pca_columns_orthogonal_and_ratios_sorted():
    rng = np.random.default_rng(3)
    res = pca(EmbeddingMatrix(tuple(map(str, range(50))), rng.normal(size=(50, 10))), 6)
    gram = res.matrix.values.T @ res.matrix.values
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-6
    assert np.all(np.diff(res.explained_variance_ratio) <= 1e-15)


def test_pca_pads_beyond_rows():
    res = pca(EmbeddingMatrix(("a", "b", "c"), np.random.default_rng(0).normal(size=(3, 10))), 64)
    assert res.matrix.dim == 64
    assert res.rank == 2
    assert not np.any(res.matrix.values[:, 2:])


# -- concat_align ------------------------------------------------------------------


def random_pair(n=40, seed=0):
    rng = np.random.default_rng(seed)
    ids = tuple(f"p{i}" for i in range(n))
    return EmbeddingMatrix(ids, rng.normal(size=(n, 100))), EmbeddingMatrix(ids, rng.normal(size=(n, 90)))


def test_concat_dims():
    text, net = random_pair(80)
    assert concat_align(text, net, 64).dim == 128


def test_concat_zero_network():
    text, net = random_pair()
    zero = EmbeddingMatrix(net.row_ids, np.zeros_like(net.values))
    out = concat_align(text, zero, 16).values
    assert not np.any(out[:, 16:])
    np.testing.assert_allclose(out[:, :16], reduce_normalize(text, 16).values, atol=1e-12)


def test_concat_pythagorean():
    text, net = random_pair()
    out = concat_align(text, net, 16).values
    a, b = out[:, :16], out[:, 16:]
    for i, j in [(0, 1), (3, 17), (20, 39)]:
        full = np.sum((out[i] - out[j]) ** 2)
        assert full == pytest.approx(np.sum((a[i] - a[j]) ** 2) + np.sum((b[i] - b[j]) ** 2), abs=1e-9)


def test_concat_permutation_equivariant():
    text, net = random_pair()
    out = concat_align(text, net, 8)
    perm = list(np.random.default_rng(5).permutation(len(text)))
    ids = [text.row_ids[i] for i in perm]
    shuffled = concat_align(text.take(ids), net.take(ids), 8)
    assert shuffled.row_ids == tuple(ids)
    np.testing.assert_allclose(np.abs(shuffled.values), np.abs(out.take(ids).values), atol=1e-9)


def test_concat_matches_rows_by_id():
    text, net = random_pair()
    reversed_net = net.take(list(reversed(net.row_ids)))
    np.testing.assert_allclose(concat_align(text, reversed_net, 8).values, concat_align(text, net, 8).values)


def test_concat_row_mismatch():
    text, net = random_pair()
    with pytest.raises(RowMismatch):
        concat_align(text, EmbeddingMatrix(("x",) + net.row_ids[1:], net.values), 8)
