import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbd_loopclosure import evaluator as ev
from rgbd_loopclosure.labeler import GroundTruthMatrix

IDS5 = list("abcde")
# upper-triangle (label, similarity), enumerated by hand
HAND = {
    (0, 1): (1, 0.9), (0, 2): (0, 0.6), (0, 3): (2, 0.95), (0, 4): (0, 0.1), (1, 2): (1, 0.7),
    (1, 3): (0, 0.3), (1, 4): (1, 0.4), (2, 3): (0, 0.8), (2, 4): (2, 0.2), (3, 4): (1, 0.5),
}
# threshold -> (tp, fp, tn, fn, precision, recall)
EXPECTED = {
    0.0: (4, 4, 0, 0, 0.5, 1.0),
    0.25: (4, 3, 1, 0, 4 / 7, 1.0),
    0.5: (2, 2, 2, 2, 0.5, 0.5),
    0.75: (1, 1, 3, 3, 0.5, 0.25),
    1.0: (0, 0, 4, 4, 1.0, 0.0),
}


def hand_instance():
    g, s = np.eye(5, dtype=int), np.eye(5)
    for (i, j), (lab, sim) in HAND.items():
        g[i, j] = g[j, i] = lab
        s[i, j] = s[j, i] = sim
    return ev.SimilarityMatrix(IDS5, s), GroundTruthMatrix(IDS5, g)


def test_hand_enumerated_sweep():
    s, g = hand_instance()
    curve = ev.pr_sweep(s, g, steps=5)
    for p in curve.points:
        assert (p.tp, p.fp, p.tn, p.fn, p.precision, p.recall) == EXPECTED[p.threshold]


def test_label2_excluded():
    s, g = hand_instance()
    base = ev.pr_sweep(s, g, steps=5)
    for v in (-1.0, 0.0, 1.0):
        s2 = s.entries.copy()
        s2[0, 3] = s2[3, 0] = s2[2, 4] = s2[4, 2] = v
        other = ev.pr_sweep(ev.SimilarityMatrix(IDS5, s2), g, steps=5)
        assert other.points == base.points


def test_all_ones_similarity():
    g = GroundTruthMatrix(list("abc"), [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    s = ev.similarity_matrix(np.ones((3, 4)), list("abc"))
    assert np.all(s.entries == 1.0)
    curve = ev.pr_sweep(s, g, steps=11)
    for p in curve.points[:-1]:
        assert (p.tp, p.fp, p.recall) == (1, 2, 1.0) and p.precision == pytest.approx(1 / 3)
    assert curve.points[-1].tp == 0 and curve.points[-1].precision == 1.0


def test_orthogonal_blocks_perfect():
    z = np.array([[1.0, 0], [2.0, 0], [0, 1.0], [0, 3.0]])
    g = GroundTruthMatrix(list("abcd"), [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
    s = ev.similarity_matrix(z, list("abcd"))
    np.testing.assert_array_equal(s.entries, [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
    assert ev.pr_sweep(s, g).max_recall_at_precision(1.0) == 1.0


def test_hand_vectors():
    z = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, -1.0]])
    s = ev.similarity_matrix(z).entries
    assert s[0, 1] == pytest.approx(0.7071067811865475, abs=1e-15)
    assert s[0, 2] == 0.0
    assert s[1, 2] == pytest.approx(-0.7071067811865475, abs=1e-15)
    assert np.array_equal(s, s.T) and np.all(np.diag(s) == 1.0)


def test_similarity_equals_ground_truth():
    g = GroundTruthMatrix(list("abcd"), [[1, 1, 0, 1], [1, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 1]])
    curve = ev.pr_sweep(ev.SimilarityMatrix(g.ids, g.entries.astype(float)), g, steps=3)
    assert [(p.precision, p.recall) for p in curve.points] == [(1.0, 1.0), (1.0, 1.0), (1.0, 0.0)]


def test_zero_norm_row():
    s = ev.similarity_matrix(np.array([[1.0, 0], [0, 0], [1.0, 1]])).entries
    assert np.all(s[1] == -1) and np.all(s[:, 1] == -1)
    assert s[0, 2] == pytest.approx(2 ** -0.5)


def test_errors():
    s, g = hand_instance()
    with pytest.raises(ValueError, match="ids"):
        ev.pr_sweep(ev.SimilarityMatrix(list("vwxyz"), s.entries), g)
    with pytest.raises(ValueError, match="positive"):
        ev.pr_sweep(s, GroundTruthMatrix(IDS5, np.eye(5, dtype=int)))
    with pytest.raises(ValueError):
        ev.export_pr(ev.PRCurve([]), "unused.csv")


def test_export_three_thresholds(tmp_path):
    s, g = hand_instance()
    curve = ev.pr_sweep(s, g, steps=3)
    ev.export_pr(curve, tmp_path / "pr.csv")
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "threshold,precision,recall,tp,fp,tn,fn"
    assert len(lines) == 4
    assert lines[2] == "0.5,0.5,0.5,2,2,2,2"
    assert ev.read_pr(tmp_path / "pr.csv").points == curve.points


def test_embeddings_round_trip(tmp_path):
    z = np.random.default_rng(0).normal(size=(4, 6))
    ev.write_embeddings(tmp_path / "e.txt", list("abcd"), z)
    ids, z2 = ev.read_embeddings(tmp_path / "e.txt")
    assert ids == list("abcd") and np.array_equal(z, z2)


@st.composite
def instances(draw):
    n = draw(st.integers(2, 9))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 3, (n, n))
    g = np.triu(g, 1)
    g = g + g.T + np.eye(n, dtype=int)
    g[0, 1] = g[1, 0] = 1
    z = rng.normal(size=(n, 3))
    return ev.similarity_matrix(z, [f"f{k}" for k in range(n)]), GroundTruthMatrix([f"f{k}" for k in range(n)], g), rng


@settings(max_examples=150, deadline=None)
@given(instances())
def test_sweep_invariants(inst):
    s, g, _ = inst
    curve = ev.pr_sweep(s, g, steps=51)
    totals = {p.tp + p.fp + p.tn + p.fn for p in curve.points}
    upper = g.entries[np.triu_indices(len(g), 1)]
    assert totals == {int((upper != 2).sum())}
    tps = [p.tp for p in curve.points]
    fps = [p.fp for p in curve.points]
    assert tps == sorted(tps, reverse=True) and fps == sorted(fps, reverse=True)
    assert all(0 <= p.precision <= 1 and 0 <= p.recall <= 1 for p in curve.points)


@settings(max_examples=100, deadline=None)
@given(instances())
def test_permutation_invariant(inst):
    s, g, rng = inst
    perm = rng.permutation(len(g))
    ids = [g.ids[k] for k in perm]
    s2 = ev.SimilarityMatrix(ids, s.entries[np.ix_(perm, perm)])
    g2 = GroundTruthMatrix(ids, g.entries[np.ix_(perm, perm)])
    a, b = ev.pr_sweep(s, g, steps=21), ev.pr_sweep(s2, g2, steps=21)
    assert [(p.tp, p.fp, p.tn, p.fn) for p in a.points] == [(p.tp, p.fp, p.tn, p.fn) for p in b.points]
