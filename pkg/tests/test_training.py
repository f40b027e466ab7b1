import numpy as np
import pytest

from sulcal_ssl import training as tr
from sulcal_ssl.augment import AugmentSpec, Strategy
from sulcal_ssl.autodiff import Tensor
from sulcal_ssl.errors import ContractError, FormatError, TrainingDivergedError
from sulcal_ssl.network import HeadKind
from sulcal_ssl.synth import SynthConfig, generate_crop
from sulcal_ssl.training import (
    Adam,
    EmbeddingSet,
    TrainConfig,
    collapse_metric,
    cosine_sim,
    embed,
    nt_xent_loss,
    read_embeddings,
    read_loss_curve,
    train,
    write_embeddings,
    write_loss_curve,
)


def nt_xent_ref(z, tau):
    """Literal double-sum oracle: one term per anchor, scalar similarities."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)

    def sim(a, b):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(a @ b) / (na * nb)

    total = 0.0
    for i in range(n):
        j = i + 1 if i % 2 == 0 else i - 1
        denom = 0.0
        for k in range(n):
            if k != i:
                denom += np.exp(sim(z[i], z[k]) / tau)
        total += -np.log(np.exp(sim(z[i], z[j]) / tau) / denom)
    return total


def test_cosine_sim_basics():
    v = np.array([1.0, 2.0, -3.0])
    assert cosine_sim(v, v) == pytest.approx(1.0)
    assert cosine_sim(v, -v) == pytest.approx(-1.0)
    assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    with pytest.raises(ContractError):
        cosine_sim(np.ones(3), np.ones(4))


def test_cosine_sim_zero_vector_warns():
    with pytest.warns(UserWarning):
        assert cosine_sim(np.zeros(3), np.ones(3)) == 0.0


def test_nt_xent_single_pair_is_exactly_zero():
    rng = np.random.default_rng(0)
    for _ in range(10):
        z = rng.normal(size=(2, 5))
        assert nt_xent_loss(Tensor(z), 0.5).item() == 0.0


def test_nt_xent_orthonormal_two_pairs():
    # pairs (e1, e1), (e2, e2), tau 1: each anchor contributes ln(1 + 2/e)
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    want = 4.0 * np.log(1.0 + 2.0 / np.e)
    assert nt_xent_loss(Tensor(z), 1.0).item() == pytest.approx(want, abs=1e-14)


def test_nt_xent_matches_double_sum_oracle():
    rng = np.random.default_rng(1)
    for tau in (0.1, 0.5, 1.0):
        for rows in (2, 4, 6, 8):
            for _ in range(10):
                z = rng.normal(size=(rows, rng.integers(2, 9)))
                got = nt_xent_loss(Tensor(z), tau).item()
                assert abs(got - nt_xent_ref(z, tau)) <= 1e-12


def test_nt_xent_zero_row_is_finite_and_matches_oracle():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(4, 3))
    z[2] = 0.0
    got = nt_xent_loss(Tensor(z), 0.5).item()
    assert np.isfinite(got)
    assert abs(got - nt_xent_ref(z, 0.5)) <= 1e-12


def test_nt_xent_scale_invariance():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(6, 4))
    base = nt_xent_loss(Tensor(z), 0.5).item()
    assert abs(nt_xent_loss(Tensor(z * 37.0), 0.5).item() - base) < 1e-9
    row_scales = rng.uniform(0.1, 10.0, size=(6, 1))
    assert abs(nt_xent_loss(Tensor(z * row_scales), 0.5).item() - base) < 1e-9


def test_nt_xent_pair_permutation_invariance():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(8, 3))
    base = nt_xent_loss(Tensor(z), 0.7).item()
    perm = np.array([4, 5, 0, 1, 6, 7, 2, 3])  # reorder pairs, keep partners
    assert abs(nt_xent_loss(Tensor(z[perm]), 0.7).item() - base) < 1e-9
    swap = np.array([1, 0, 3, 2, 5, 4, 7, 6])  # swap views inside each pair
    assert abs(nt_xent_loss(Tensor(z[swap]), 0.7).item() - base) < 1e-9


def test_nt_xent_contract_errors():
    z = Tensor(np.ones((4, 2)))
    with pytest.raises(ContractError):
        nt_xent_loss(z, 0.0)
    with pytest.raises(ContractError):
        nt_xent_loss(z, -1.0)
    with pytest.raises(ContractError):
        nt_xent_loss(Tensor(np.ones((3, 2))), 0.5)
    with pytest.raises(ContractError):
        nt_xent_loss(Tensor(np.ones(4)), 0.5)


def test_nt_xent_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for rows, d in ((4, 3), (8, 8), (6, 5)):
        z = Tensor(rng.normal(size=(rows, d)), requires_grad=True)
        loss = nt_xent_loss(z, 0.5)
        loss.backward()
        eps = 1e-6
        flat = z.data.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = nt_xent_loss(Tensor(z.data), 0.5).item()
            flat[i] = keep - eps
            lo = nt_xent_loss(Tensor(z.data), 0.5).item()
            flat[i] = keep
            fd = (hi - lo) / (2 * eps)
            assert abs(z.grad.ravel()[i] - fd) / max(abs(fd), 1e-5) < 1e-5


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(tau=0.0)
    with pytest.raises(ContractError):
        TrainConfig(batch_size=1)
    with pytest.raises(ContractError):
        TrainConfig(lr=0.0)
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)


def test_adam_first_step_is_signed_lr():
    from sulcal_ssl.network import ConvNetConfig, ModelParams

    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    params = ModelParams(ConvNetConfig(), HeadKind.LINEAR, {"p": p})
    opt = Adam(params, lr=0.1)
    p.grad = np.array([10.0, -0.5, 1e-12])
    before = p.data.copy()
    opt.step()
    step = before - p.data
    # bias corrections cancel at t=1: step = lr * g / (|g| + eps)
    assert step[0] == pytest.approx(0.1, rel=1e-6)
    assert step[1] == pytest.approx(-0.1, rel=1e-6)
    assert abs(step[2]) < 0.1  # eps keeps tiny gradients from full-size steps


def _tiny_corpus(n=8, dims_cfg=None):
    cfg = dims_cfg or SynthConfig(n_subjects=n, prevalence=0.5, seed=3)
    crops = []
    for i in range(n):
        crop = generate_crop(100 + i, i % 2, cfg)
        crops.append(crop)
    return crops


def _tiny_train_cfg(**kw):
    base = dict(
        lr=1e-3,
        batch_size=4,
        tau=0.5,
        epochs=2,
        latent_dim=4,
        head=HeadKind.LINEAR,
        augment=AugmentSpec(Strategy.CUTOUT),
        dropout_p=0.05,
        seed=11,
        channels=(2, 2, 2, 2, 2, 2),
        strides=(2, 2, 2, 1, 1, 1),
    )
    base.update(kw)
    return TrainConfig(**base)


def test_train_smoke_and_determinism():
    corpus = _tiny_corpus(8)
    cfg = _tiny_train_cfg()
    seen = []
    params1, curve1 = train(corpus, cfg, on_epoch=lambda e, l: seen.append((e, l)))
    params2, curve2 = train(corpus, cfg)
    assert len(curve1) == cfg.epochs
    assert all(np.isfinite(v) for v in curve1)
    assert curve1 == curve2
    assert seen == list(enumerate(curve1, start=1))
    for name, t in params1.parameters():
        assert np.array_equal(t.data, params2.tensors[name].data)


def test_train_seed_changes_outcome():
    corpus = _tiny_corpus(8)
    _, curve1 = train(corpus, _tiny_train_cfg(seed=1))
    _, curve2 = train(corpus, _tiny_train_cfg(seed=2))
    assert curve1 != curve2


def test_train_rejects_small_corpus():
    with pytest.raises(ContractError):
        train(_tiny_corpus(3), _tiny_train_cfg(batch_size=4))


def test_train_aborts_on_nonfinite_loss(monkeypatch):
    corpus = _tiny_corpus(4)

    def bad_loss(z, tau):
        return Tensor(np.array(np.nan))

    monkeypatch.setattr(tr, "nt_xent_loss", bad_loss)
    with pytest.raises(TrainingDivergedError, match="epoch 1, batch 0"):
        train(corpus, _tiny_train_cfg(batch_size=4, epochs=1))


def test_embed_contract():
    corpus = _tiny_corpus(6)
    cfg = _tiny_train_cfg(epochs=1)
    params, _ = train(corpus, cfg)
    es = embed(params, corpus, source="ckpt-1")
    assert len(es.entries) == 6
    assert es.dim == 4
    assert es.source == "ckpt-1"
    # pure function: same crop under two ids embeds identically
    import dataclasses

    twin = dataclasses.replace(corpus[0], subject_id="twin")
    es2 = embed(params, [corpus[0], twin])
    assert np.array_equal(es2.entries[corpus[0].subject_id], es2.entries["twin"])
    # deterministic across calls
    es3 = embed(params, corpus)
    for sid in es.entries:
        assert np.array_equal(es.entries[sid], es3.entries[sid])
    # head switch changes the vectors
    es_head = embed(params, corpus, apply_head=True)
    assert any(
        not np.array_equal(es.entries[s], es_head.entries[s]) for s in es.entries
    )


def test_embed_rejects_dim_mismatch():
    corpus = _tiny_corpus(4)
    cfg = _tiny_train_cfg(epochs=1, batch_size=4)
    params, _ = train(corpus, cfg)
    import dataclasses

    small = generate_crop(7, 0, SynthConfig(n_subjects=1, prevalence=0.5, seed=1, dims=(9, 20, 19)))
    with pytest.raises(ContractError):
        embed(params, [small])


def test_collapse_metric_values():
    flat = EmbeddingSet({f"s{i}": np.array([1.0, 2.0, 3.0]) for i in range(5)})
    assert collapse_metric(flat) == 0.0
    n = 4
    eye = EmbeddingSet({f"s{i}": np.eye(n)[i] for i in range(n)})
    # each dim is a one-hot column: sd = sqrt(n - 1) / n
    assert collapse_metric(eye) == pytest.approx(np.sqrt(n - 1) / n)
    with pytest.raises(ContractError):
        collapse_metric(EmbeddingSet({"one": np.ones(3)}))


def test_embedding_set_validation():
    with pytest.raises(ContractError):
        EmbeddingSet({"a": np.ones(3), "b": np.ones(4)})
    with pytest.raises(ContractError):
        EmbeddingSet({"a": np.array([np.inf, 1.0])})


def test_loss_curve_roundtrip(tmp_path):
    curve = [3.14159, 2.0 / 3.0, 1e-17]
    p = tmp_path / "loss.csv"
    write_loss_curve(curve, p)
    text = p.read_text()
    assert text.startswith("epoch,loss\n1,")
    assert read_loss_curve(p) == curve  # 17 significant digits: exact float64
    (tmp_path / "bad.csv").write_text("step,val\n1,2\n")
    with pytest.raises(FormatError):
        read_loss_curve(tmp_path / "bad.csv")


def test_embeddings_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    es = EmbeddingSet({f"sub-{i:03d}": rng.normal(size=6) for i in range(10)}, source="ck")
    p = tmp_path / "embeddings.csv"
    write_embeddings(es, p)
    header = p.read_text().splitlines()[0]
    assert header == "subject_id,z0,z1,z2,z3,z4,z5"
    back = read_embeddings(p, source="ck")
    assert list(back.entries) == list(es.entries)
    for sid in es.entries:
        assert np.array_equal(back.entries[sid], es.entries[sid])


def test_embeddings_reject_bad_files(tmp_path):
    (tmp_path / "h.csv").write_text("id,z0\nx,1\n")
    with pytest.raises(FormatError):
        read_embeddings(tmp_path / "h.csv")
    (tmp_path / "w.csv").write_text("subject_id,z0,z1\nx,1\n")
    with pytest.raises(FormatError):
        read_embeddings(tmp_path / "w.csv")
    (tmp_path / "v.csv").write_text("subject_id,z0\nx,notafloat\n")
    with pytest.raises(FormatError):
        read_embeddings(tmp_path / "v.csv")
