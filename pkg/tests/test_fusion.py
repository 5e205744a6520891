import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from samplefusion.errors import DimensionError, InvalidLabelError
from samplefusion.fusion import (CONFUSION_ONLY, FULL, WEIGHTS_ONLY, FusionInputs, batch_fusion_loss_grad,
                                 clean_label, diag_penalty, fuse_target, fusion_loss, fusion_loss_grad, kl_divergence)
from samplefusion.linalg import PermutationBasis, random_permutation_basis, reconstruct_confusion, softmax

SWAP2 = PermutationBasis.from_matrices([np.eye(2), np.eye(2)[::-1]])


def logit(p):
    """Logits whose softmax is p (p strictly positive)."""
    return np.log(np.asarray(p, float))


def reference_loss(inp: FusionInputs, basis, lam):
    """Straight transcription with explicit matrices; independent of the vectorised code path."""
    R = len(inp.w_logits)
    w = softmax(inp.w_logits)
    Ps = [reconstruct_confusion(softmax(inp.c_logits[r]), basis) for r in range(R)]
    cleans = np.array([clean_label(P, y) for P, y in zip(Ps, inp.annotator_labels)])
    target = fuse_target(cleans, w)
    pred = softmax(inp.f_logits)
    kl = sum(t * math.log(t / q) for t, q in zip(target, pred) if t > 0)
    return kl + lam / R * sum(diag_penalty(P) for P in Ps)


def random_inputs(rng, K, R, M, scale=1.5):
    return FusionInputs(rng.normal(scale=scale, size=K), rng.normal(scale=scale, size=R),
                        rng.normal(scale=scale, size=(R, M)), rng.integers(0, K, size=R))


def test_clean_label_examples():
    np.testing.assert_allclose(clean_label([[0.9, 0.2], [0.1, 0.8]], 1), [0.2, 0.8])
    np.testing.assert_allclose(clean_label([[0.7, 0.3], [0.3, 0.7]], 0), [0.7, 0.3])
    for y in range(4):
        np.testing.assert_array_equal(clean_label(np.eye(4), y), np.eye(4)[y])
    with pytest.raises(InvalidLabelError):
        clean_label(np.eye(2), 2)
    with pytest.raises(DimensionError):
        clean_label(np.ones((2, 3)), 0)


def test_fuse_target_examples():
    np.testing.assert_allclose(fuse_target([[0.2, 0.8], [0.6, 0.4]], [0.5, 0.5]), [0.4, 0.6])
    cleans = np.array([[0.1, 0.9], [0.6, 0.4], [0.5, 0.5]])
    np.testing.assert_array_equal(fuse_target(cleans, [1.0, 0.0, 0.0]), cleans[0])
    np.testing.assert_allclose(fuse_target([[0.3, 0.7]] * 3, [0.2, 0.5, 0.3]), [0.3, 0.7])
    with pytest.raises(DimensionError):
        fuse_target(cleans, [0.5, 0.5])


@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**31))
def test_fuse_target_on_simplex(R, K, seed):
    rng = np.random.default_rng(seed)
    cleans = softmax(rng.normal(scale=4, size=(R, K)))
    t = fuse_target(cleans, softmax(rng.normal(scale=4, size=R)))
    assert np.all(t >= 0) and abs(t.sum() - 1) < 1e-12


def test_fuse_target_simplex_bulk(rng):
    cleans = softmax(rng.normal(scale=3, size=(100_000, 3, 4)))
    w = softmax(rng.normal(scale=3, size=(100_000, 3)))
    t = np.einsum("nr,nrk->nk", w, cleans)
    assert t.min() >= 0
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)
    # spot check the scalar routine against the vectorised one
    for n in range(0, 100_000, 9973):
        np.testing.assert_allclose(fuse_target(cleans[n], w[n]), t[n], atol=1e-15)


def test_diag_penalty_examples():
    assert diag_penalty(np.eye(3)) == 0
    assert diag_penalty([[0.7, 0.3], [0.3, 0.7]]) == pytest.approx(0.18)
    assert diag_penalty(np.full((3, 3), 1 / 3)) == pytest.approx(4 / 3)


def test_kl_examples():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0
    assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(5), abs=1e-12)
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.5108, abs=1e-4)
    # a zero prediction is floored rather than producing inf
    assert np.isfinite(kl_divergence([0.5, 0.5], [1.0, 0.0]))


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_kl_nonnegative(K, seed):
    rng = np.random.default_rng(seed)
    t, p = softmax(rng.normal(scale=3, size=(2, K)))
    assert kl_divergence(t, p) >= -1e-15


def test_loss_perfect_agreement_limit():
    b = random_permutation_basis(3, 4, 0)
    c = np.full((3, 4), -40.0)
    c[:, 0] = 40.0  # picks the identity
    inp = FusionInputs(f_logits=[0.0, 60.0, 0.0], w_logits=np.zeros(3), c_logits=c, annotator_labels=[1, 1, 1])
    assert fusion_loss(inp, b, 0.0) < 1e-12


def test_loss_penalty_only_example():
    # c = (0.7, 0.3) over {I, swap}, R = 1, label 0 -> target (0.7, 0.3); f reproduces it exactly
    inp = FusionInputs(f_logits=logit([0.7, 0.3]), w_logits=[0.0], c_logits=[logit([0.7, 0.3])], annotator_labels=[0])
    assert fusion_loss(inp, SWAP2, 1.0) == pytest.approx(0.18, abs=1e-12)


def test_collapsed_configuration_is_charged():
    # every clean label forced to class 0 while one annotator said 1: KL is zero, penalty is not
    c = np.array([logit([0.999999, 1e-6]), logit([1e-6, 0.999999])])
    inp = FusionInputs(f_logits=[30.0, -30.0], w_logits=[0.0, 0.0], c_logits=c, annotator_labels=[0, 1])
    fwd, _ = batch_fusion_loss_grad(inp.f_logits[None], inp.w_logits[None], inp.c_logits[None],
                                    inp.annotator_labels[None], SWAP2, 1.0)
    assert fwd.kl[0] < 1e-4
    assert fusion_loss(inp, SWAP2, 1.0) > 0.9  # (1/2) * 2 * (1 - 1e-6)^2


@given(st.integers(2, 5), st.integers(1, 4), st.integers(1, 6), st.floats(0, 3), st.integers(0, 2**31))
def test_loss_matches_reference(K, R, M, lam, seed):
    M = min(M, math.factorial(K))
    rng = np.random.default_rng(seed)
    b = random_permutation_basis(K, M, seed)
    inp = random_inputs(rng, K, R, M)
    ref = reference_loss(inp, b, lam)
    assert fusion_loss(inp, b, lam) == pytest.approx(ref, rel=1e-10, abs=1e-12)
    assert ref >= -1e-12


def _fd_grad(fn, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def _assert_close_fd(inp, basis, lam):
    _, g = fusion_loss_grad(inp, basis, lam)
    for name, analytic, arg in (("f", g.d_f_logits, 0), ("w", g.d_w_logits, 1), ("c", g.d_c_logits, 2)):
        fields = [inp.f_logits, inp.w_logits, inp.c_logits]

        def fn(v):
            args = list(fields)
            args[arg] = v
            return fusion_loss(FusionInputs(*args, inp.annotator_labels), basis, lam)

        fd = _fd_grad(fn, fields[arg])
        err = np.abs(analytic - fd) / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
        # entries whose true value is ~0 only carry FD round-off
        err = np.where(np.maximum(np.abs(analytic), np.abs(fd)) < 1e-7, 0.0, err)
        assert err.max() < 1e-4, (name, err.max())


def test_grad_random_instance_k5_r3_m6():
    rng = np.random.default_rng(0)
    _assert_close_fd(random_inputs(rng, 5, 3, 6), random_permutation_basis(5, 6, 0), 1.0)


def test_grad_hundred_instances():
    rng = np.random.default_rng(7)
    for i in range(100):
        K = int(rng.choice([2, 3, 5, 10]))
        R = int(rng.choice([1, 2, 3, 5]))
        M = int(rng.integers(2, min(10, math.factorial(K)) + 1))
        basis = random_permutation_basis(K, M, i, include_identity=bool(i % 3))
        _assert_close_fd(random_inputs(rng, K, R, M), basis, float(rng.uniform(0, 3)))


def test_grad_zero_at_global_minimum():
    c = np.array([[60.0, -60.0], [60.0, -60.0]])
    inp = FusionInputs(f_logits=[0.0, 0.0], w_logits=[0.0, 0.0], c_logits=c, annotator_labels=[0, 1])
    loss, g = fusion_loss_grad(inp, SWAP2, 1.0)
    assert loss < 1e-12
    for block in (g.d_f_logits, g.d_w_logits, g.d_c_logits):
        np.testing.assert_allclose(block, 0.0, atol=1e-12)


def test_zero_weight_blocks_confusion_gradient():
    rng = np.random.default_rng(3)
    b = random_permutation_basis(4, 5, 3)
    inp = FusionInputs(rng.normal(size=4), [60.0, -60.0, -60.0], rng.normal(size=(3, 5)), [0, 2, 3])
    _, g = fusion_loss_grad(inp, b, 0.0)
    np.testing.assert_allclose(g.d_c_logits[1:], 0.0, atol=1e-20)
    assert np.abs(g.d_c_logits[0]).max() > 1e-6


@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**31))
def test_annotator_permutation_equivariance(K, R, seed):
    rng = np.random.default_rng(seed)
    M = min(4, math.factorial(K))
    b = random_permutation_basis(K, M, seed)
    inp = random_inputs(rng, K, R, M)
    perm = rng.permutation(R)
    swapped = FusionInputs(inp.f_logits, inp.w_logits[perm], inp.c_logits[perm], inp.annotator_labels[perm])
    l1, g1 = fusion_loss_grad(inp, b, 1.0)
    l2, g2 = fusion_loss_grad(swapped, b, 1.0)
    assert l1 == pytest.approx(l2, rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(g2.d_w_logits, g1.d_w_logits[perm], atol=1e-13)
    np.testing.assert_allclose(g2.d_c_logits, g1.d_c_logits[perm], atol=1e-13)
    np.testing.assert_allclose(g2.d_f_logits, g1.d_f_logits, atol=1e-13)


def test_batch_mean_matches_per_sample(rng):
    b = random_permutation_basis(3, 4, 1)
    items = [random_inputs(rng, 3, 2, 4) for _ in range(6)]
    stack = lambda attr: np.stack([getattr(i, attr) for i in items])
    fwd, g = batch_fusion_loss_grad(stack("f_logits"), stack("w_logits"), stack("c_logits"),
                                    stack("annotator_labels"), b, 0.5)
    singles = [fusion_loss_grad(i, b, 0.5) for i in items]
    assert fwd.loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
    np.testing.assert_allclose(g.d_f_logits, np.stack([s[1].d_f_logits for s in singles]) / 6, atol=1e-14)
    np.testing.assert_allclose(g.d_c_logits, np.stack([s[1].d_c_logits for s in singles]) / 6, atol=1e-14)


def test_modes_substitute_fixed_quantities(rng):
    b = random_permutation_basis(3, 4, 2)
    inp = random_inputs(rng, 3, 2, 4)
    args = (inp.f_logits[None], inp.w_logits[None], inp.c_logits[None], inp.annotator_labels[None], b, 1.0)
    fwd_w, g_w = batch_fusion_loss_grad(*args, mode=WEIGHTS_ONLY)
    np.testing.assert_array_equal(g_w.d_c_logits, 0.0)
    assert fwd_w.penalty[0] == 0.0
    np.testing.assert_array_equal(fwd_w.coeffs[0, :, 0], 1.0)
    fwd_c, g_c = batch_fusion_loss_grad(*args, mode=CONFUSION_ONLY)
    np.testing.assert_array_equal(g_c.d_w_logits, 0.0)
    np.testing.assert_allclose(fwd_c.weights, 0.5)
    fwd_f, _ = batch_fusion_loss_grad(*args, mode=FULL)
    assert fwd_f.loss != fwd_w.loss != fwd_c.loss


def test_dimension_checks():
    b = random_permutation_basis(3, 2, 0)
    with pytest.raises(DimensionError):
        FusionInputs(np.zeros(3), np.zeros(2), np.zeros((3, 2)), [0, 1])
    with pytest.raises(DimensionError):
        fusion_loss(FusionInputs(np.zeros(4), np.zeros(2), np.zeros((2, 2)), [0, 1]), b, 1.0)
    with pytest.raises(InvalidLabelError):
        fusion_loss(FusionInputs(np.zeros(3), np.zeros(2), np.zeros((2, 2)), [0, 3]), b, 1.0)
