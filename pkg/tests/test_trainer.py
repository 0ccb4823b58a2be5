import numpy as np
import pytest

from eignn import model as model_mod
from eignn import trainer
from eignn.errors import CacheCorruptError, EmptyMaskError, NonFiniteLossError
from eignn.graphs import ChainsSpec, generate_chains
from eignn.model import EignnModel, spectral_forward
from eignn.trainer import (
    TrainConfig,
    build_or_load_cache,
    compute_cache,
    edge_set_hash,
    evaluate,
    init_params,
    load_cache,
    save_cache,
    train,
)


def small_chains(seed=0, length=10, classes=2, dim=16):
    return generate_chains(
        ChainsSpec(classes=classes, chains_per_class=5, length=length, feature_dim=dim, seed=seed)
    )


def test_edge_set_hash_order_independent():
    a = edge_set_hash([(0, 1), (1, 2)])
    b = edge_set_hash([(1, 2), (0, 1)])
    assert a == b
    assert a != edge_set_hash([(0, 1), (1, 3)])


def test_cache_round_trip(tmp_path):
    g = small_chains()
    cache = compute_cache(g)
    path = tmp_path / "s.eigs"
    save_cache(cache, path)
    loaded = load_cache(path)
    assert loaded.n == cache.n
    assert loaded.content_hash == cache.content_hash
    assert np.array_equal(loaded.eigenvalues, cache.eigenvalues)
    assert np.array_equal(loaded.eigenvectors, cache.eigenvectors)


def test_cache_round_trip_identical_logits(tmp_path):
    g = small_chains()
    cache = compute_cache(g)
    path = tmp_path / "s.eigs"
    save_cache(cache, path)
    loaded = load_cache(path)
    F, B = init_params(g.feature_dim, g.num_classes, 0)
    model = EignnModel(F, B)
    a = spectral_forward(model, g.X, cache).logits
    b = spectral_forward(model, g.X, loaded).logits
    assert np.max(np.abs(a - b)) <= 1e-12


def test_cache_corruption(tmp_path):
    g = small_chains()
    path = tmp_path / "s.eigs"
    save_cache(compute_cache(g), path)
    blob = path.read_bytes()
    path.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CacheCorruptError):
        load_cache(path)
    path.write_bytes(blob[:20])
    with pytest.raises(CacheCorruptError):
        load_cache(path)


def test_build_or_load_cache_recomputes_on_graph_change(tmp_path):
    g = small_chains()
    path = str(tmp_path / "s.eigs")
    first = build_or_load_cache(g, path)
    # Same graph: the persisted cache is reused as-is.
    again = build_or_load_cache(g, path)
    assert again.content_hash == first.content_hash
    # One edge dropped: the hash no longer matches and S is recomputed.
    edited = generate_chains(
        ChainsSpec(classes=2, chains_per_class=5, length=9, feature_dim=16)
    )
    fresh = build_or_load_cache(edited, path)
    assert fresh.content_hash != first.content_hash
    assert fresh.n == edited.n
    assert load_cache(path).content_hash == fresh.content_hash


def test_init_params_deterministic_and_bounded():
    F1, B1 = init_params(8, 3, seed=5)
    F2, B2 = init_params(8, 3, seed=5)
    assert np.array_equal(F1, F2) and np.array_equal(B1, B2)
    F3, _ = init_params(8, 3, seed=6)
    assert not np.array_equal(F1, F3)
    bound = 1.0 / np.sqrt(8)
    assert np.max(np.abs(F1)) <= bound and np.max(np.abs(B1)) <= bound
    F, B = init_params(1, 1, seed=0)
    assert np.max(np.abs(F)) <= 1.0


def test_init_params_mean_near_zero():
    F, _ = init_params(100, 1, seed=0)
    bound = 1.0 / np.sqrt(100)
    sigma = bound / np.sqrt(3.0)  # stdev of U(-bound, bound)
    assert abs(F.mean()) <= 3.0 * sigma / np.sqrt(F.size)


def test_evaluate_perfect_and_tied():
    g = small_chains()
    cache = compute_cache(g)
    # A model is not needed to check the accuracy rule itself.
    logits = np.zeros((2, g.n))
    logits[g.labels, np.arange(g.n)] = 1.0
    assert trainer._masked_accuracy(logits, g.labels, g.test_mask) == 1.0
    uniform = np.zeros((2, g.n))
    base_rate = float(np.mean(g.labels[g.test_mask] == 0))
    assert trainer._masked_accuracy(uniform, g.labels, g.test_mask) == base_rate
    with pytest.raises(EmptyMaskError):
        trainer._masked_accuracy(logits, g.labels, np.zeros(g.n, dtype=bool))


def test_train_reaches_full_accuracy_on_short_chains():
    g = generate_chains(ChainsSpec(classes=2, chains_per_class=20, length=10))
    model, report = train(g, TrainConfig(epochs=500, patience=500))
    assert report.test_acc_at_best_val == 1.0
    cache = compute_cache(g)
    acc, _ = evaluate(model, g, cache, g.test_mask)
    assert acc == report.test_acc_at_best_val
    assert report.best_val_acc == max(report.val_acc)
    assert len(report.train_loss) == len(report.val_acc) == len(report.epoch_ms)


def test_train_deterministic():
    g = small_chains()
    cfg = TrainConfig(epochs=40, patience=40, seed=3)
    _, r1 = train(g, cfg)
    _, r2 = train(g, cfg)
    assert np.max(np.abs(np.array(r1.train_loss) - np.array(r2.train_loss))) <= 1e-10


def test_train_cache_equivalence(tmp_path):
    g = small_chains()
    path = str(tmp_path / "s.eigs")
    m1, r1 = train(g, TrainConfig(epochs=30, patience=30, cache_path=path))
    # Second run loads the persisted cache instead of recomputing.
    m2, r2 = train(g, TrainConfig(epochs=30, patience=30, cache_path=path))
    assert np.max(np.abs(m1.F - m2.F)) <= 1e-10
    assert np.max(np.abs(m1.B - m2.B)) <= 1e-10
    assert np.max(np.abs(np.array(r1.train_loss) - np.array(r2.train_loss))) <= 1e-10


def test_train_loss_monotone_with_tiny_lr():
    g = small_chains()
    _, report = train(
        g, TrainConfig(epochs=100, patience=100, learning_rate=1e-3, weight_decay=0.0)
    )
    losses = np.array(report.train_loss)
    assert np.all(np.diff(losses) <= 1e-12)


def test_train_divergence_raises():
    g = small_chains()
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteLossError):
        train(
            g,
            TrainConfig(
                epochs=2000,
                patience=2000,
                learning_rate=1e6,
                stop_at_perfect_val=False,
            ),
        )


def test_stop_at_perfect_val_returns_same_snapshot():
    g = generate_chains(ChainsSpec(classes=2, chains_per_class=20, length=10))
    m_fast, fast = train(g, TrainConfig(epochs=500, patience=500))
    m_slow, slow = train(g, TrainConfig(epochs=500, patience=500, stop_at_perfect_val=False))
    assert fast.epochs_run <= slow.epochs_run
    assert np.array_equal(m_fast.F, m_slow.F)
    assert np.array_equal(m_fast.B, m_slow.B)


def test_train_gradient_matches_model_backward():
    # One epoch of the trainer's eigenbasis fast path must produce the same
    # update the reference backward pass would.
    g = small_chains(dim=8)
    cache = compute_cache(g)
    F, B = init_params(g.feature_dim, g.num_classes, 0)
    model = EignnModel(F.copy(), B.copy())
    trace = model_mod.spectral_forward(model, g.X, cache)
    _, D = model_mod.loss_and_output_grad(trace.logits, g.labels, g.train_mask)
    ref_F, ref_B = model_mod.backward(model, g.X, cache, trace, D)

    eig_f, g_norm, G, W, logits_q = trainer._epoch_pass(
        F, B, 1.0, 1e-6, g.X @ cache.eigenvectors, cache.eigenvalues
    )
    fast_trace = model_mod.ForwardTrace(
        eig_f=eig_f, g_norm=g_norm, G=G, W=W,
        Z=np.empty((g.feature_dim, 0)), logits=trace.logits,
    )
    fast_F, fast_B = model_mod.grads_from_coeffs(
        F, B, 1.0, 1e-6, fast_trace, D @ cache.eigenvectors, cache.eigenvalues
    )
    assert np.max(np.abs(fast_F - ref_F)) <= 1e-12
    assert np.max(np.abs(fast_B - ref_B)) <= 1e-12


def test_train_requires_masks():
    g = small_chains()
    empty = np.zeros(g.n, dtype=bool)
    broken = type(g)(
        n=g.n, edges=g.edges, X=g.X, labels=g.labels,
        train_mask=empty, val_mask=g.val_mask, test_mask=g.test_mask,
        num_classes=g.num_classes,
    )
    with pytest.raises(EmptyMaskError):
        train(broken, TrainConfig(epochs=1))


def test_report_csv(tmp_path):
    g = small_chains()
    _, report = train(g, TrainConfig(epochs=5, patience=5))
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_acc,epoch_ms"
    assert len(lines) == report.epochs_run + 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(weight_decay=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")


def test_adam_optimizer_trains():
    g = small_chains()
    cfg = TrainConfig(epochs=400, patience=400, optimizer="adam", learning_rate=0.03)
    model, rep = train(g, cfg)
    assert rep.train_loss[-1] < rep.train_loss[0]
    assert rep.best_val_acc >= 0.9


def test_adam_deterministic():
    g = small_chains()
    cfg = dict(epochs=60, patience=60, optimizer="adam", learning_rate=0.03, seed=3)
    m1, r1 = train(g, TrainConfig(**cfg))
    m2, r2 = train(g, TrainConfig(**cfg))
    np.testing.assert_array_equal(m1.F, m2.F)
    np.testing.assert_array_equal(m1.B, m2.B)
    assert r1.train_loss == r2.train_loss
