import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from usdrl.mgfd import (LossWeights, ProjectionSet, Projectors, loss_con, loss_fd, loss_sep, loss_total,
                        term_autocov, term_variance, term_xcorr)

W = LossWeights()
WD = W.to_dict()


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def test_con_hand_values():
    z1, z2 = t([[1.0, 0.0]]), t([[0.0, 1.0]])
    assert loss_con([z1, z2], 5.0, 0.0).item() == pytest.approx(5 * math.sqrt(2) / 2, abs=1e-12)
    assert loss_con([z1, z2], 5.0, 0.0).item() == pytest.approx(3.53553, abs=1e-5)
    assert loss_con([z1, z2], 0.0, 1.0).item() == pytest.approx(1.0, abs=1e-12)
    assert loss_con([z1, z1.clone()], 5.0, 1.0).item() == 0.0


def test_con_zero_norm_row():
    with pytest.raises(ValueError, match="zero-norm"):
        loss_con([t([[0.0, 0.0]]), t([[1.0, 0.0]])], 1.0, 1.0)


def test_variance_examples():
    assert term_variance(t(np.zeros((4, 3))), 1.0, 1e-4).item() == pytest.approx(0.99, abs=1e-12)
    z = t([[1.0, -1.0], [-1.0, 1.0]])
    assert term_variance(z, 1.0, 0.0).item() == 0.0
    assert term_variance(z, 1.0, 1e-4).item() == 0.0


def test_autocov_examples():
    orth = t([[1, 1], [-1, 1], [1, -1], [-1, -1]])
    assert term_autocov(orth).item() == 0.0
    assert term_autocov(t([[1, 1], [-1, -1]])).item() == pytest.approx(4.0, abs=1e-12)
    assert term_autocov(t([[1.0], [2.0], [5.0]])).item() == 0.0


def test_xcorr_examples():
    orth = t([[1, 1], [-1, 1], [1, -1], [-1, -1]])
    assert term_xcorr(orth, orth).item() == pytest.approx(0.0, abs=1e-15)
    z = t([[1, 1], [-1, -1]])
    assert term_xcorr(z, z).item() == pytest.approx(2.0, abs=1e-12)
    assert term_xcorr(orth, -orth).item() == pytest.approx(0.0, abs=1e-15)


def test_xcorr_collapsed_column():
    z = t([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]])
    with pytest.raises(ValueError, match="zero-norm column"):
        term_xcorr(z, z)
    with pytest.raises(ValueError, match="equal shapes"):
        term_xcorr(z, z[:, :1])


def test_sep_and_fd_composition():
    rng = np.random.default_rng(3)
    za, zb = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    want = oracles.loss_sep([za.tolist(), zb.tolist()], WD)
    assert loss_sep([t(za), t(zb)], W).item() == pytest.approx(want, rel=1e-12)
    assert loss_sep([t(za)], W).item() == pytest.approx(
        W.mu * oracles.variance(za.tolist(), W.gamma, W.epsilon) + oracles.autocov(za.tolist()), rel=1e-12)
    no_xc = LossWeights(lam=0.0)
    assert loss_sep([t(za), t(zb)], no_xc).item() == pytest.approx(
        sum(loss_sep([t(z)], no_xc).item() for z in (za, zb)), rel=1e-12)
    assert loss_fd([t(za), t(zb)], W).item() == pytest.approx(
        oracles.loss_fd([za.tolist(), zb.tolist()], WD), rel=1e-12)


def test_fd_isolation_and_identical_views():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, 3)) * 10
    only_mu = LossWeights(kappa=0, eta=0, lam=0, autocov=0, mu=2.0)
    assert loss_fd([t(z), t(z)], only_mu).item() == pytest.approx(2 * 2 * term_variance(t(z), 1.0, 1e-4).item())
    assert loss_fd([t(z), t(z)], W).item() == pytest.approx(loss_sep([t(z), t(z)], W).item(), rel=1e-12)


def _ps(rng, n, d):
    return ProjectionSet(t(rng.normal(size=(n, d))), t(rng.normal(size=(n, d))), t(rng.normal(size=(n, 2 * d))))


def test_total_domains():
    rng = np.random.default_rng(5)
    sets = [_ps(rng, 6, 3) for _ in range(2)]
    br = loss_total(sets, W)
    recomposed = (loss_fd([s.z for s in sets], W) + W.tau * (loss_fd([s.z_s for s in sets], W)
                                                             + loss_fd([s.z_t for s in sets], W)))
    assert br.total.item() == recomposed.item()
    parts = br.con + br.var + br.autocov + br.xcorr
    assert parts.item() == pytest.approx(br.total.item(), rel=1e-12)
    z = [s.z for s in sets]
    same = [ProjectionSet(a, a, a) for a in z]
    assert loss_total(same, W).total.item() == pytest.approx((1 + 2 * W.tau) * loss_fd(z, W).item(), rel=1e-12)


def test_tau_zero_is_instance_only():
    rng = np.random.default_rng(6)
    sets = [_ps(rng, 5, 4) for _ in range(3)]
    br = loss_total(sets, LossWeights(tau=0.0))
    assert br.total.item() == br.fd_instance.item()


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(epsilon=0.0)
    with pytest.raises(ValueError):
        LossWeights(mu=-1.0)


def test_projectors_shapes_and_guards():
    proj = Projectors(8, 16).double()
    ps = proj(t(np.random.default_rng(0).normal(size=(4, 8))), t(np.ones((4, 8))))
    assert ps.z.shape == (4, 32) and ps.z_t.shape == (4, 16) and ps.z_s.shape == (4, 16)
    with pytest.raises(ValueError):
        proj(t(np.ones((1, 8))), t(np.ones((1, 8))))
    same = proj(t(np.ones((2, 8))), t(np.ones((2, 8))))
    assert torch.equal(same.z[0], same.z[1])


def test_projector_affine_without_batch_norm():
    torch.manual_seed(0)
    proj = Projectors(3, 3, batch_norm=False).double()
    p = proj.temporal
    with torch.no_grad():
        for lin in (p.net[0], p.net[3], p.net[6]):
            lin.weight.copy_(torch.eye(3, dtype=torch.float64))
            lin.bias.fill_(0.5)
    h = np.abs(np.random.default_rng(1).normal(size=(4, 3)))
    out = proj(t(h), t(h)).z_t.detach().numpy()
    assert np.allclose(out, h + 1.5, atol=1e-9)


# -- properties ---------------------------------------------------------------

mats = st.integers(2, 6).flatmap(lambda n: st.integers(1, 4).flatmap(
    lambda d: arrays(np.float64, (n, d), elements=st.floats(-5, 5, allow_nan=False, width=64))))


def _generic(z):
    return np.all(np.abs(z - z.mean(axis=0)).sum(axis=0) > 1e-3) and np.all(np.linalg.norm(z, axis=1) > 1e-3)


@settings(max_examples=60, deadline=None)
@given(mats, st.randoms(use_true_random=False))
def test_row_permutation_invariance(z, rnd):
    if not _generic(z):
        return
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    z2 = z + rng.normal(size=z.shape)
    perm = rng.permutation(z.shape[0])
    a = loss_fd([t(z), t(z2)], W).item()
    b = loss_fd([t(z[perm]), t(z2[perm])], W).item()
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(mats, arrays(np.float64, 4, elements=st.floats(-10, 10)))
def test_shift_invariance(z, shift):
    shifted = z + shift[: z.shape[1]]
    assert term_variance(t(shifted), 1.0, 1e-4).item() == pytest.approx(
        term_variance(t(z), 1.0, 1e-4).item(), abs=1e-9)
    assert term_autocov(t(shifted)).item() == pytest.approx(term_autocov(t(z)).item(), rel=1e-7, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(mats, st.integers(0, 2**31))
def test_xcorr_symmetry_and_nonnegativity(z, seed):
    if not _generic(z):
        return
    zb = z + np.random.default_rng(seed).normal(size=z.shape)
    ab, ba = term_xcorr(t(z), t(zb)).item(), term_xcorr(t(zb), t(z)).item()
    assert abs(ab - ba) <= 1e-12 * max(1.0, abs(ab))
    assert ab >= 0
    assert loss_con([t(z), t(zb)], W.kappa, W.eta).item() >= 0
    assert loss_con([t(z), t(z.copy())], W.kappa, W.eta).item() == 0.0
    assert loss_sep([t(z), t(zb)], W).item() >= 0


@settings(max_examples=60, deadline=None)
@given(mats)
def test_scaling_clears_variance(z):
    var = z.var(axis=0, ddof=1)
    if var.min() <= 1e-6:
        return
    c = 1.0 / math.sqrt(var.min()) * 1.001
    assert term_variance(t(c * z), 1.0, 1e-4).item() == 0.0


def test_loss_total_gradient_wrt_z():
    rng = np.random.default_rng(7)
    sets = [ProjectionSet(*(torch.tensor(rng.normal(size=s), requires_grad=True) for s in ((4, 3), (4, 3), (4, 6))))
            for _ in range(2)]
    loss_total(sets, W).total.backward()
    h = 1e-6
    for ps in sets:
        for z in (ps.z_t, ps.z_s, ps.z):
            for idx in [(0, 0), (3, 2), (1, 1)]:
                with torch.no_grad():
                    orig = z[idx].item()
                    z[idx] = orig + h
                    up = loss_total(sets, W).total.item()
                    z[idx] = orig - h
                    down = loss_total(sets, W).total.item()
                    z[idx] = orig
                num = (up - down) / (2 * h)
                assert z.grad[idx].item() == pytest.approx(num, rel=1e-5, abs=1e-8)
