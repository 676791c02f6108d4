import numpy as np
import pytest

from flowcond import (
    BatchInputs,
    ConditionBundle,
    LrSchedule,
    ModelConfig,
    OptimizerState,
    PathConfig,
    TemporalMask,
    TrainingDivergedError,
    VectorFieldModel,
    embed_phonemes,
    load_checkpoint,
    make_flow_sample,
    save_checkpoint,
    train_step,
)
from flowcond.seqmodel import masked_batch_loss_grad, param_names

SMALL = ModelConfig(
    n_layers=2, n_heads=2, d_model=16, d_ffn=24, d_phn=4, n_phonemes=6, feature_dim=3
)


def make_cond(T, F, rng, cfg=SMALL):
    bits = np.zeros(T, dtype=np.uint8)
    bits[T // 3 : T // 3 + max(1, T // 2)] = 1
    return ConditionBundle(
        phonemes=rng.integers(0, cfg.n_phonemes, T),
        nv=rng.standard_normal((32, T)) * 0.3,
        emo=rng.uniform(-0.5, 0.5, (2, T)),
        context=rng.standard_normal((F, T)),
        mask=TemporalMask(bits),
    )


def make_batch(B, T, cfg, rng):
    F = cfg.feature_dim
    conds = [make_cond(T, F, rng, cfg) for _ in range(B)]
    x_t = [rng.standard_normal((F, T)) for _ in range(B)]
    ts = list(rng.uniform(0, 1, B))
    return BatchInputs.from_examples(x_t, ts, conds), conds


# -- config and embedding ------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(d_nv=16)
    with pytest.raises(ValueError):
        ModelConfig(d_emo=3)
    with pytest.raises(ValueError):
        ModelConfig(n_layers=0)


def test_embed_same_token_same_column():
    table = np.random.default_rng(0).standard_normal((6, 4))
    out = embed_phonemes(np.array([2, 2, 2]), table)
    assert out.shape == (4, 3)
    assert np.array_equal(out[:, 0], out[:, 1])
    assert np.array_equal(out[:, 0], table[2])


def test_embed_empty_sequence():
    table = np.zeros((6, 4))
    out = embed_phonemes(np.zeros(0, dtype=np.int64), table)
    assert out.shape == (4, 0)


def test_embed_one_hot_table_gives_basis_vectors():
    table = np.eye(6)
    out = embed_phonemes(np.array([3]), table)
    expected = np.zeros(6)
    expected[3] = 1.0
    assert np.array_equal(out[:, 0], expected)


def test_embed_out_of_vocab():
    table = np.zeros((6, 4))
    with pytest.raises(IndexError):
        embed_phonemes(np.array([6]), table)
    with pytest.raises(IndexError):
        embed_phonemes(np.array([-1]), table)


# -- forward -------------------------------------------------------------------


def test_forward_deterministic_and_shaped():
    rng = np.random.default_rng(1)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    cond = make_cond(7, 3, rng)
    x_t = rng.standard_normal((3, 7))
    a = model.forward(x_t, 0.4, cond, params)
    b = model.forward(x_t, 0.4, cond, params)
    assert a.shape == (3, 7)
    assert np.array_equal(a, b)
    assert np.isfinite(a).all()


def test_forward_output_shape_tracks_length():
    rng = np.random.default_rng(2)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    for T in (1, 2, 5, 13):
        cond = make_cond(T, 3, rng)
        out = model.forward(rng.standard_normal((3, T)), 0.5, cond, params)
        assert out.shape == (3, T)


def test_forward_zero_output_projection_gives_zero_field():
    rng = np.random.default_rng(3)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=True)
    cond = make_cond(6, 3, rng)
    out = model.forward(rng.standard_normal((3, 6)), 0.7, cond, params)
    assert np.all(out == 0.0)


def test_forward_rejects_nonfinite_input():
    rng = np.random.default_rng(4)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng)
    cond = make_cond(5, 3, rng)
    x = rng.standard_normal((3, 5))
    x[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        model.forward(x, 0.5, cond, params)


def test_forward_permutation_equivariant_without_positions():
    cfg = ModelConfig(
        n_layers=2, n_heads=2, d_model=16, d_ffn=24, d_phn=4,
        n_phonemes=6, feature_dim=3, use_positional=False,
    )
    rng = np.random.default_rng(5)
    model = VectorFieldModel(cfg)
    params = model.init_params(rng, zero_output=False)
    T = 9
    cond = make_cond(T, 3, rng, cfg)
    x_t = rng.standard_normal((3, T))
    out = model.forward(x_t, 0.3, cond, params)

    perm = rng.permutation(T)
    cond_p = ConditionBundle(
        phonemes=cond.phonemes[perm],
        nv=cond.nv[:, perm],
        emo=cond.emo[:, perm],
        context=cond.context[:, perm],
        mask=TemporalMask(cond.mask.bits[perm]),
    )
    out_p = model.forward(x_t[:, perm], 0.3, cond_p, params)
    assert np.allclose(out_p, out[:, perm], atol=1e-12)


def test_forward_sensitive_to_emo_stream():
    rng = np.random.default_rng(6)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    cond = make_cond(6, 3, rng)
    x_t = rng.standard_normal((3, 6))
    base = model.forward(x_t, 0.5, cond, params)
    bumped = ConditionBundle(
        phonemes=cond.phonemes,
        nv=cond.nv,
        emo=np.clip(cond.emo + 0.2, -0.5, 0.5),
        context=cond.context,
        mask=cond.mask,
    )
    out = model.forward(x_t, 0.5, bumped, params)
    assert np.max(np.abs(out - base)) > 0.0


# -- backward ------------------------------------------------------------------


def fd_check(model, params, inputs, u_target, names, coords_per_tensor, rng, h=1e-4):
    """Central-difference oracle; returns worst relative error per tensor."""

    def loss_fn():
        v, _ = model.forward_batch(inputs, params)
        loss, _ = masked_batch_loss_grad(v, u_target, inputs.mask_bits)
        return loss

    v, cache = model.forward_batch(inputs, params, want_cache=True)
    _, dv = masked_batch_loss_grad(v, u_target, inputs.mask_bits)
    grads = model.backward_batch(dv, cache, params)

    worst = {}
    for name in names:
        g = grads[name]
        errs = []
        for _ in range(coords_per_tensor):
            idx = tuple(int(rng.integers(0, s)) for s in g.shape)
            orig = params[name][idx]
            params[name][idx] = orig + h
            lp = loss_fn()
            params[name][idx] = orig - h
            lm = loss_fn()
            params[name][idx] = orig
            fd = (lp - lm) / (2 * h)
            errs.append(abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
        worst[name] = max(errs)
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    inputs, _ = make_batch(2, 5, SMALL, rng)
    u_target = rng.standard_normal((2, 3, 5))
    worst = fd_check(
        model, params, inputs, u_target, param_names(SMALL), 3, np.random.default_rng(0)
    )
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    assert not bad, f"gradient mismatch: {bad}"


def test_backward_zero_loss_grad_gives_zero_grads():
    rng = np.random.default_rng(8)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    inputs, _ = make_batch(2, 4, SMALL, rng)
    _, cache = model.forward_batch(inputs, params, want_cache=True)
    grads = model.backward_batch(np.zeros((2, 3, 4)), cache, params)
    for g in grads.values():
        assert np.all(g == 0.0)


def test_gradient_of_loss_at_minimum_is_zero():
    rng = np.random.default_rng(9)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    inputs, _ = make_batch(2, 4, SMALL, rng)
    v, cache = model.forward_batch(inputs, params, want_cache=True)
    loss, dv = masked_batch_loss_grad(v, v.copy(), inputs.mask_bits)
    assert loss == 0.0
    grads = model.backward_batch(dv, cache, params)
    for g in grads.values():
        assert np.all(g == 0.0)


def test_backward_requires_cache():
    model = VectorFieldModel(SMALL)
    params = model.init_params(np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        model.backward_batch(np.zeros((1, 3, 4)), None, params)


# -- schedule and training step --------------------------------------------------


def test_lr_schedule_warmup_hand_value():
    sched = LrSchedule(peak=7.5e-5, warmup_steps=10, total_steps=100)
    assert sched.at(5) == pytest.approx(3.75e-5, rel=1e-12)
    assert sched.at(10) == pytest.approx(7.5e-5, rel=1e-12)


def test_lr_schedule_linear_decay_to_zero():
    sched = LrSchedule(peak=1e-3, warmup_steps=10, total_steps=110)
    assert sched.at(60) == pytest.approx(0.5e-3, rel=1e-12)
    assert sched.at(110) == 0.0
    assert sched.at(500) == 0.0


def test_train_step_zero_lr_leaves_params_bitwise():
    rng = np.random.default_rng(10)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    before = {k: v.copy() for k, v in params.items()}
    batch = make_training_batch(rng, 3, 5)
    state = OptimizerState(schedule=LrSchedule(peak=0.0, warmup_steps=1, total_steps=10))
    params, loss, lr = train_step(model, batch, params, state)
    assert lr == 0.0
    assert loss > 0.0
    for k in params:
        assert np.array_equal(params[k], before[k])


def make_training_batch(rng, B, T, cfg=SMALL):
    path_cfg = PathConfig(sigma_min=1e-5)
    batch = []
    for _ in range(B):
        x1 = rng.standard_normal((cfg.feature_dim, T))
        sample = make_flow_sample(x1, rng, path_cfg)
        batch.append((sample, make_cond(T, cfg.feature_dim, rng, cfg)))
    return batch


def test_train_step_rejects_empty_batch():
    model = VectorFieldModel(SMALL)
    params = model.init_params(np.random.default_rng(0))
    state = OptimizerState(schedule=LrSchedule(1e-3, 1, 10))
    with pytest.raises(ValueError):
        train_step(model, [], params, state)


def test_train_step_diverged_loss_raises():
    rng = np.random.default_rng(11)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    params["out_b"][:] = np.inf
    batch = make_training_batch(rng, 2, 4)
    state = OptimizerState(schedule=LrSchedule(1e-3, 1, 10))
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDivergedError):
        train_step(model, batch, params, state)


def test_overfit_single_batch_loss_decreases():
    rng = np.random.default_rng(12)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng)
    batch = make_training_batch(rng, 4, 6)
    state = OptimizerState(schedule=LrSchedule(peak=3e-3, warmup_steps=10, total_steps=10_000))
    losses = []
    for _ in range(200):
        params, loss, _ = train_step(model, batch, params, state)
        losses.append(loss)
    ma = np.convolve(losses, np.ones(20) / 20, mode="valid")
    assert all(b < a for a, b in zip(ma, ma[1:]))
    assert ma[-1] < 0.5 * ma[0]


# -- checkpoints -----------------------------------------------------------------


def test_checkpoint_round_trip_forward_bitwise(tmp_path):
    rng = np.random.default_rng(13)
    model = VectorFieldModel(SMALL)
    # fresh params are exactly float32-representable, so save/load is lossless
    params = model.init_params(rng, zero_output=False)
    cond = make_cond(6, 3, rng)
    x_t = rng.standard_normal((3, 6))
    before = model.forward(x_t, 0.25, cond, params)

    p = tmp_path / "model.fmck"
    save_checkpoint(p, SMALL, params)
    cfg2, params2 = load_checkpoint(p)
    assert cfg2 == SMALL
    after = VectorFieldModel(cfg2).forward(x_t, 0.25, cond, params2)
    assert np.array_equal(before, after)


def test_checkpoint_file_byte_stable(tmp_path):
    rng = np.random.default_rng(14)
    model = VectorFieldModel(SMALL)
    params = model.init_params(rng, zero_output=False)
    # perturb past float32 so quantization really happens once
    params["in_w"] += 1e-9
    p1, p2 = tmp_path / "a.fmck", tmp_path / "b.fmck"
    save_checkpoint(p1, SMALL, params)
    cfg, loaded = load_checkpoint(p1)
    save_checkpoint(p2, cfg, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.fmck"
    p.write_bytes(b"JUNKJUNKJUNK")
    from flowcond import FormatError

    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_truncation(tmp_path):
    rng = np.random.default_rng(15)
    params = VectorFieldModel(SMALL).init_params(rng)
    p = tmp_path / "x.fmck"
    save_checkpoint(p, SMALL, params)
    blob = p.read_bytes()
    p.write_bytes(blob[: len(blob) - 10])
    from flowcond import FormatError

    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(p)


def test_param_order_is_stable():
    names = param_names(SMALL)
    assert names[0] == "phn_emb"
    assert names[-1] == "out_b"
    assert len(names) == len(set(names))
    params = VectorFieldModel(SMALL).init_params(np.random.default_rng(0))
    assert list(params.keys()) == names
