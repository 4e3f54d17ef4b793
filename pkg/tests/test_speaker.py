"""Tests for speaker module."""

import numpy as np
import pytest

from steersep.speaker import (
    Embedder,
    MetricError,
    SpeakerTable,
    ema_update,
    export_embeddings,
    ince_identity_checks,
    nearest_other,
    read_embeddings,
    reg_loss,
    roc_metrics,
    sv_score,
    token_embedding_baseline,
    tune_ince_loss,
)
from steersep.tensor import ShapeError, Tensor


def _table(rng, rows=4, features=6, epsilon=0.05):
    return SpeakerTable(rows, features, rng, epsilon=epsilon)


def test_tune_ince_single_speaker_is_zero(rng):
    """Test that a one-row table has nothing to contrast against."""
    table = _table(rng, rows=1)
    z = [Tensor(rng.normal(size=6))]
    assert tune_ince_loss(z, [0], table).item() == 0.0


def test_tune_ince_flat_kernel_is_log_n(rng):
    """Test that alpha -> 0 makes every speaker equally likely."""
    table = _table(rng, rows=5)
    table.alpha_raw.data[:] = np.log(1e-12)
    z = [Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))]
    assert tune_ince_loss(z, [0, 3], table).item() == pytest.approx(np.log(5), abs=1e-6)


def test_tune_ince_two_speaker_closed_form(rng):
    """Test log(1 + exp(-d^2)) when Z sits on its own centroid."""
    table = _table(rng, rows=2, features=3)
    table.E.data[:] = [[0.0, 0.0, 0.0], [0.6, 0.0, 0.8]]
    loss = tune_ince_loss([Tensor(np.zeros(3))], [0], table).item()
    assert loss == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-12)


def test_tune_ince_does_not_train_rows(rng):
    """Test that Tune-InCE leaves E to the EMA while the baseline learns it."""
    table = _table(rng)
    z = Tensor(rng.normal(size=6), requires_grad=True)
    tune_ince_loss([z], [2], table).backward()
    assert table.E.grad is None
    assert table.alpha_raw.grad is not None
    assert z.grad is not None

    table.zero_grad()
    token_embedding_baseline([z], [2], table).backward()
    assert table.E.grad is not None
    assert np.any(table.E.grad != 0)


def test_speaker_id_out_of_range(rng):
    """Test that an unknown speaker id is an IndexError."""
    table = _table(rng)
    with pytest.raises(IndexError):
        tune_ince_loss([Tensor(np.zeros(6))], [4], table)
    with pytest.raises(IndexError):
        ema_update(table, np.zeros(6), -1)


def test_ince_identities_hold(rng):
    """Test the decomposition, rescaling and Gaussian-ratio identities to 1e-9."""
    rows = rng.normal(0.0, 0.5, (5, 4))
    z = rng.normal(0.0, 0.5, (3, 4))
    report = ince_identity_checks(rows, z, [0, 2, 4], alpha=0.7)
    assert report.decomposition_error < 1e-9
    assert report.infonce_rescaling_error < 1e-9
    assert report.gaussian_ratio_error < 1e-9


def test_ema_converges_to_speaker_mean():
    """Test that noisy EMA updates settle within 5 stationary deviations of the mean."""
    rng = np.random.default_rng(7)
    epsilon, sigma = 0.05, 0.2
    table = SpeakerTable(3, 8, rng, epsilon=epsilon)
    untouched = table.E.data[[0, 2]].copy()
    mean = rng.normal(size=8)
    for _ in range(2000):
        ema_update(table, mean + rng.normal(0.0, sigma, 8), 1)
    spread = sigma * np.sqrt(epsilon / (2 - epsilon))
    assert np.all(np.abs(table.E.data[1] - mean) < 5 * spread)
    assert np.array_equal(table.E.data[[0, 2]], untouched)


def test_ema_rejects_wrong_shape(rng):
    """Test that the EMA input must be a D-vector."""
    with pytest.raises(ShapeError):
        ema_update(_table(rng), np.zeros(5), 0)


def test_reg_loss_pushes_nearest_rows_apart(rng):
    """Test the value and that a gradient step increases the L1 gap."""
    table = _table(rng, rows=3, features=2)
    table.E.data[:] = [[0.0, 0.0], [np.e / 2, np.e / 2], [3.0, 3.0]]
    assert nearest_other(table.E.data, 0) == 1
    loss = reg_loss(table, [0], gamma=3.0)
    assert loss.item() == pytest.approx(-1.0 / 3.0, abs=1e-12)
    loss.backward()
    table.E.data -= 0.1 * table.E.grad
    assert np.abs(table.E.data[0] - table.E.data[1]).sum() > np.e


def test_reg_loss_needs_two_rows(rng):
    """Test that a single-row table has no neighbour."""
    with pytest.raises(ShapeError):
        reg_loss(_table(rng, rows=1), [0])


def test_tune_ince_is_translation_invariant(rng):
    """Test that shifting every Z_j and every row by one vector keeps the loss."""
    table = _table(rng, rows=5)
    z = [rng.normal(size=6) for _ in range(3)]
    ids = [4, 0, 2]
    before = tune_ince_loss([Tensor(v) for v in z], ids, table).item()
    shift = rng.normal(0.0, 10.0, size=6)
    table.E.data += shift
    after = tune_ince_loss([Tensor(v + shift) for v in z], ids, table).item()
    assert after == pytest.approx(before, rel=1e-9, abs=1e-12)


def test_token_baseline_matches_explicit_cross_entropy(rng):
    """Test the baseline against a row-by-row softmax cross-entropy in float64."""
    table = _table(rng, rows=4)
    table.alpha_raw.data[:] = np.log(0.7)
    z = [rng.normal(size=6) for _ in range(3)]
    ids = [1, 3, 1]
    loss = token_embedding_baseline([Tensor(v) for v in z], ids, table)
    assert loss.dtype == np.float64

    total = 0.0
    for zj, i in zip(z, ids):
        logits = [-0.7 * np.sum((zj - row) ** 2) for row in table.E.data]
        total -= np.log(np.exp(logits[i]) / np.sum(np.exp(logits)))
    assert loss.item() == pytest.approx(total / len(ids), rel=1e-12)
    loss.backward()
    assert table.E.grad is not None and np.any(table.E.grad != 0)


def test_nearest_other_matches_exhaustive_scan(rng):
    """Test the nearest L1 neighbour of every row against a full pairwise scan."""
    rows = rng.normal(size=(20, 5))
    for index in range(len(rows)):
        best, best_dist = None, np.inf
        for other in range(len(rows)):
            if other == index:
                continue
            dist = sum(abs(a - b) for a, b in zip(rows[index], rows[other]))
            if dist < best_dist:
                best, best_dist = other, dist
        assert nearest_other(rows, index) == best


def test_embedder_splits_sources(rng):
    """Test C speaker features of D x S_j."""
    embedder = Embedder(6, 2, rng)
    feats = embedder(Tensor(rng.normal(size=(6, 5, 4))))
    assert [f.shape for f in feats] == [(6, 5), (6, 5)]
    with pytest.raises(ShapeError):
        embedder(Tensor(np.ones((5, 5, 4))))


def test_sv_score_is_symmetric():
    """Test identity and symmetry of the verification score."""
    a, b = np.array([1.0, 2.0]), np.array([0.0, 1.0])
    assert sv_score(a, a, 0.5) == 1.0
    assert sv_score(a, b, 0.5) == sv_score(b, a, 0.5) == pytest.approx(np.exp(-1.0))


def test_roc_metrics():
    """Test AUC as the pairwise ranking rate and the interpolated EER."""
    scores = [0.9, 0.8, 0.3, 0.7, 0.2, 0.1]
    same = [True, True, True, False, False, False]
    report = roc_metrics(scores, same)
    assert report.auc == pytest.approx(8 / 9)
    assert report.eer == pytest.approx(1 / 3, abs=1e-9)
    assert len(report.rows()) == len(report.thresholds)


def test_roc_perfect_separation():
    """Test AUC 1 and EER 0 for separable scores."""
    report = roc_metrics([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert report.auc == 1.0
    assert report.eer == 0.0


def test_roc_single_class():
    """Test that one-class trials have no ROC."""
    with pytest.raises(MetricError):
        roc_metrics([0.1, 0.2], [True, True])
    with pytest.raises(MetricError):
        roc_metrics([0.1, 0.2], [False, False])


def test_embeddings_csv_round_trip(tmp_path, rng):
    """Test that exported embeddings are sorted by speaker and reload exactly."""
    vectors = rng.normal(size=(3, 4))
    export_embeddings(vectors, [7, 2, 5], tmp_path / "emb.csv")
    loaded, ids = read_embeddings(tmp_path / "emb.csv")
    assert ids == [2, 5, 7]
    assert np.array_equal(loaded, vectors[[1, 2, 0]])
