import numpy as np
import pytest

from flowcond import (
    GuidanceConfig,
    PathConfig,
    PromptAssembly,
    assemble_prompt,
    conditional_vector_field,
    guided_field,
    integrate,
    integrate_batch,
    interpolate_stream,
)


def make_prompt(F=3, t_spk=4, t_text=6, rng=None, seed=0):
    rng = rng or np.random.default_rng(seed)
    return assemble_prompt(
        spk_features=rng.standard_normal((F, t_spk)),
        spk_phonemes=rng.integers(1, 5, t_spk),
        spk_nv=rng.standard_normal((32, t_spk)),
        spk_emo=rng.uniform(-0.5, 0.5, (2, t_spk)),
        text_phonemes=rng.integers(1, 5, t_text),
        nv_prompt=rng.standard_normal((32, t_text)),
        emo_prompt=rng.uniform(-0.5, 0.5, (2, t_text)),
    )


# -- interpolate_stream ----------------------------------------------------


def test_interpolate_identity_when_lengths_match():
    src = np.random.default_rng(0).standard_normal((4, 7))
    out = interpolate_stream(src, 7)
    assert np.array_equal(out, src)
    assert out is not src


def test_interpolate_hand_example():
    out = interpolate_stream(np.array([[0.0, 1.0]]), 3)
    assert np.array_equal(out, np.array([[0.0, 0.5, 1.0]]))


def test_interpolate_constant_rows_preserved():
    src = np.full((3, 4), 2.5)
    for t in (1, 2, 5, 9):
        assert np.array_equal(interpolate_stream(src, t), np.full((3, t), 2.5))


def test_interpolate_single_column_broadcast():
    out = interpolate_stream(np.array([[3.0], [-1.0]]), 5)
    assert np.array_equal(out, np.array([[3.0] * 5, [-1.0] * 5]))


def test_interpolate_endpoints_exhaustive_small():
    rng = np.random.default_rng(1)
    for L in range(1, 9):
        for T in range(1, 9):
            src = rng.standard_normal((2, L))
            out = interpolate_stream(src, T)
            assert out.shape == (2, T)
            assert np.allclose(out[:, 0], src[:, 0], atol=0)
            if T > 1:
                assert np.allclose(out[:, -1], src[:, -1], atol=0)


def test_interpolate_domain_errors():
    with pytest.raises(ValueError):
        interpolate_stream(np.zeros((2, 0)), 3)
    with pytest.raises(ValueError):
        interpolate_stream(np.zeros((2, 3)), 0)


# -- assemble_prompt ---------------------------------------------------------


def test_assemble_lengths_and_region():
    p = make_prompt(t_spk=4, t_text=6)
    assert p.total_length == 10
    assert p.generated_region == (4, 10)
    assert p.features.shape == (3, 10)


def test_assemble_text_features_zero():
    p = make_prompt()
    lo, hi = p.generated_region
    assert np.all(p.features[:, lo:hi] == 0.0)


def test_assemble_prompt_streams_pass_through_when_aligned():
    rng = np.random.default_rng(3)
    nv = rng.standard_normal((32, 6))
    p = assemble_prompt(
        spk_features=rng.standard_normal((3, 4)),
        spk_phonemes=rng.integers(1, 5, 4),
        spk_nv=rng.standard_normal((32, 4)),
        spk_emo=rng.uniform(-0.5, 0.5, (2, 4)),
        text_phonemes=rng.integers(1, 5, 6),
        nv_prompt=nv,
        emo_prompt=rng.uniform(-0.5, 0.5, (2, 6)),
    )
    assert np.array_equal(p.nv[:, 4:], nv)


def test_assemble_prompt_interpolates_short_streams():
    rng = np.random.default_rng(4)
    p = assemble_prompt(
        spk_features=rng.standard_normal((3, 2)),
        spk_phonemes=rng.integers(1, 5, 2),
        spk_nv=rng.standard_normal((32, 2)),
        spk_emo=rng.uniform(-0.5, 0.5, (2, 2)),
        text_phonemes=rng.integers(1, 5, 5),
        nv_prompt=rng.standard_normal((32, 3)),
        emo_prompt=np.array([[-0.5, -0.5], [0.0, 0.0]]),
    )
    assert p.nv.shape == (32, 7)
    assert p.emo.shape == (2, 7)


def test_assemble_empty_text_rejected():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        assemble_prompt(
            spk_features=rng.standard_normal((3, 4)),
            spk_phonemes=rng.integers(1, 5, 4),
            spk_nv=rng.standard_normal((32, 4)),
            spk_emo=rng.uniform(-0.5, 0.5, (2, 4)),
            text_phonemes=np.zeros(0, dtype=np.int64),
            nv_prompt=rng.standard_normal((32, 4)),
            emo_prompt=rng.uniform(-0.5, 0.5, (2, 4)),
        )


def test_prompt_assembly_rejects_nonzero_text_block():
    with pytest.raises(ValueError):
        PromptAssembly(
            features=np.ones((2, 5)),
            phonemes=np.zeros(5, dtype=np.int64),
            nv=np.zeros((32, 5)),
            emo=np.zeros((2, 5)),
            generated_region=(2, 5),
        )


def test_empty_speaker_prompt_allowed():
    rng = np.random.default_rng(6)
    p = assemble_prompt(
        spk_features=np.zeros((3, 0)),
        spk_phonemes=np.zeros(0, dtype=np.int64),
        spk_nv=np.zeros((32, 0)),
        spk_emo=np.zeros((2, 0)),
        text_phonemes=rng.integers(1, 5, 4),
        nv_prompt=np.zeros((32, 4)),
        emo_prompt=np.zeros((2, 4)),
    )
    assert p.generated_region == (0, 4)


# -- guided_field ------------------------------------------------------------


def test_guided_strength_zero_is_conditional_bitwise():
    rng = np.random.default_rng(7)
    v_cond = rng.standard_normal((4, 6))
    v_uncond = rng.standard_normal((4, 6))
    assert np.array_equal(guided_field(v_cond, v_uncond, 0.0), v_cond)


def test_guided_equal_fields_any_strength():
    v = np.random.default_rng(8).standard_normal((3, 5))
    for w in (0.0, 0.5, 1.0, 3.0):
        assert np.allclose(guided_field(v, v.copy(), w), v, atol=1e-15)


def test_guided_hand_value():
    c = np.full((2, 2), 1.5)
    z = np.zeros((2, 2))
    assert np.array_equal(guided_field(c, z, 1.0), 2.0 * c)


def test_guided_shape_mismatch():
    with pytest.raises(ValueError):
        guided_field(np.zeros((2, 3)), np.zeros((2, 4)), 1.0)


# -- integrate ---------------------------------------------------------------


def analytic_field_toward(x1, cfg_path):
    """Field callable that ignores conditions and flows toward a fixed x1."""

    def field(x, t, conds):
        return np.stack(
            [conditional_vector_field(x[i], x1, t, cfg_path) for i in range(x.shape[0])]
        )

    return field


def test_integrate_analytic_euler_exact_any_nfe():
    rng = np.random.default_rng(9)
    path_cfg = PathConfig(sigma_min=1e-5)
    prompt = make_prompt(F=3, t_spk=4, t_text=6, seed=2)
    x1 = rng.standard_normal((3, 10))
    field = analytic_field_toward(x1, path_cfg)
    for nfe in (1, 4, 32):
        out = integrate(
            field,
            prompt,
            GuidanceConfig(strength=0.0, nfe=nfe, solver="euler"),
            np.random.default_rng(100),
        )
        # reconstruct the expected endpoint from the same noise draw
        x0 = np.random.default_rng(100).standard_normal((1, 3, 10))[0]
        target = (x1 + path_cfg.sigma_min * x0)[:, 4:]
        assert np.max(np.abs(out - target)) < 1e-10


def test_integrate_speaker_region_preserved_in_full_mode():
    path_cfg = PathConfig(sigma_min=1e-5)
    prompt = make_prompt(F=3, t_spk=4, t_text=6, seed=3)
    x1 = np.random.default_rng(10).standard_normal((3, 10))
    out = integrate(
        analytic_field_toward(x1, path_cfg),
        prompt,
        GuidanceConfig(strength=0.0, nfe=8),
        np.random.default_rng(0),
        return_full=True,
    )
    assert np.array_equal(out[:, :4], prompt.features[:, :4])


def test_integrate_fixed_seed_bitwise_identical():
    path_cfg = PathConfig(sigma_min=1e-5)
    prompt = make_prompt(seed=4)
    x1 = np.random.default_rng(11).standard_normal((3, 10))
    field = analytic_field_toward(x1, path_cfg)
    cfg = GuidanceConfig(strength=0.0, nfe=8)
    a = integrate(field, prompt, cfg, np.random.default_rng(42))
    b = integrate(field, prompt, cfg, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_integrate_evaluation_count_under_guidance():
    prompt = make_prompt(seed=5)
    calls = {"n": 0}

    def counting_field(x, t, conds):
        calls["n"] += 1
        return np.zeros_like(x)

    integrate(
        counting_field,
        prompt,
        GuidanceConfig(strength=1.0, nfe=32, solver="euler"),
        np.random.default_rng(0),
    )
    assert calls["n"] == 64

    calls["n"] = 0
    integrate(
        counting_field,
        prompt,
        GuidanceConfig(strength=0.0, nfe=32, solver="euler"),
        np.random.default_rng(0),
    )
    assert calls["n"] == 32


def test_integrate_nonfinite_state_reports_step():
    prompt = make_prompt(seed=6)

    def exploding_field(x, t, conds):
        return np.full_like(x, np.inf)

    with pytest.raises(FloatingPointError, match="step 1"):
        integrate(
            exploding_field,
            prompt,
            GuidanceConfig(strength=0.0, nfe=4),
            np.random.default_rng(0),
        )


def test_midpoint_at_least_as_accurate_as_euler():
    # Smooth time-dependent field with a known reference: the marginal
    # flow of a Gaussian path with time-varying mean and scale.
    mu = np.array([[1.0, -2.0, 0.5]]).T  # (3,1) broadcast over frames

    def gaussian_field(x, t, conds):
        s = 1.0 - 0.999 * t
        ds = -0.999
        m = t * mu
        dm = mu
        return (ds / s) * (x - m) + dm

    def run(solver, nfe, seed=3):
        return integrate_batch(
            gaussian_field,
            [make_prompt(F=3, t_spk=1, t_text=5, seed=7)],
            GuidanceConfig(strength=0.0, nfe=nfe, solver=solver),
            np.random.default_rng(seed),
        )[0]

    ref = run("euler", 10_000)
    err_euler = np.max(np.abs(run("euler", 16) - ref))
    err_mid = np.max(np.abs(run("midpoint", 16) - ref))
    assert err_mid <= err_euler


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(strength=-1.0)
    with pytest.raises(ValueError):
        GuidanceConfig(nfe=0)
    with pytest.raises(ValueError):
        GuidanceConfig(solver="rk4")
