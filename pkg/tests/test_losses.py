import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from moves import losses as L

TOL = 1e-9


@pytest.fixture(autouse=True, scope="module")
def float64_default():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


class TagDisc:
    """Stub discriminator: score looked up from the candidate's first coordinate."""

    def __init__(self, table):
        self.table = table

    def __call__(self, candidate, reference=None):
        tags = candidate[:, 0].tolist()
        return torch.tensor([self.table[int(t)] for t in tags], dtype=torch.float64)


REAL, FAKE, TARGET = 1.0, 2.0, 3.0


def tagged(tag, n=4, dim=3):
    z = torch.zeros(n, dim)
    z[:, 0] = tag
    return z


def pair_on_line(d):
    a = torch.zeros(1, 3)
    b = torch.zeros(1, 3)
    b[0, 1] = d
    return a, b


# -- triplet -----------------------------------------------------------------


def test_triplet_hinge_inactive():
    a = torch.zeros(1, 3)
    neg = torch.tensor([[0.0, 2.0, 0.0]])
    assert float(L.triplet_loss(a, a.clone(), neg, alpha=1.0)) == 0.0


def test_triplet_hand_value():
    a = torch.zeros(1, 3)
    pos = torch.tensor([[3.0, 0, 0]])
    neg = torch.tensor([[0, 1.0, 0]])
    assert abs(float(L.triplet_loss(a, pos, neg, alpha=0.5)) - 2.5) < TOL


def test_triplet_hinge_boundary():
    a = torch.zeros(1, 3)
    pos = torch.tensor([[1.0, 0, 0]])
    neg = torch.tensor([[0, 1.0, 0]])
    assert float(L.triplet_loss(a, pos, neg, alpha=0.0)) == 0.0


def test_triplet_dimension_mismatch():
    with pytest.raises(ValueError):
        L.triplet_loss(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(2, 3))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_triplet_isometry_invariant(seed):
    g = torch.Generator().manual_seed(seed)
    a, p, n = (torch.randn(5, 4, generator=g) for _ in range(3))
    q, _ = torch.linalg.qr(torch.randn(4, 4, generator=g))
    t = torch.randn(4, generator=g)
    f = lambda x: x @ q.T + t  # noqa: E731
    base = L.triplet_loss(a, p, n, 0.7)
    assert abs(float(base - L.triplet_loss(f(a), f(p), f(n), 0.7))) < 1e-9


# -- discriminator / generator ---------------------------------------------------


@pytest.mark.parametrize("real,fake,expected", [(1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.0, 1.0, 2.0)])
def test_disc_adv_hand_values(real, fake, expected):
    d = TagDisc({1: real, 2: fake})
    val = L.disc_adv_loss(d, tagged(REAL), tagged(0), tagged(FAKE))
    assert abs(float(val) - expected) < TOL


def test_disc_total_is_sum_and_switch():
    d = TagDisc({1: 0.5, 2: 0.5})
    r_si = torch.zeros(1, 3)
    r_sj = torch.tensor([[REAL, 3.0, 0]])  # |r_si - r_sj| = sqrt(10)
    r_di = torch.tensor([[FAKE, 0, 0]])    # |r_di - r_si| = 2
    w = L.LossWeights(alpha=0.5)
    tri = math.sqrt(10) - 2 + 0.5
    total = L.disc_total_loss(d, r_si, r_sj, r_di, w)
    assert abs(float(total) - (0.5 + tri)) < TOL
    w0 = L.LossWeights(w_tri=0.0)
    assert float(L.disc_total_loss(d, r_si, r_sj, r_di, w0)) == float(
        L.disc_adv_loss(d, r_sj, r_si, r_di))
    assert set(L.disc_loss_terms(d, r_si, r_sj, r_di, w0)) == {"adv_D"}


def test_disc_total_additivity_example():
    # adv = 0.5 with D = 0.5 everywhere, triplet = 2.5 from the hand example
    d = TagDisc({0: 0.5, 3: 0.5})
    r_si = torch.zeros(1, 3)
    r_sj = torch.tensor([[3.0, 0, 0]])
    r_di = torch.tensor([[0, 1.0, 0]])
    total = L.disc_total_loss(d, r_si, r_sj, r_di, L.LossWeights(alpha=0.5))
    assert abs(float(total) - 3.0) < TOL


def _images(n=2, h=2, w=4):
    return torch.full((n, h, w), 5.0), torch.ones(n, h, w, dtype=torch.bool)


def test_recon_examples():
    t, v = _images()
    assert float(L.recon_loss(t.clone(), t, v)) == 0.0
    assert abs(float(L.recon_loss(t + 0.5, t, v)) - 0.5) < TOL
    p = t.clone()
    p[:, :, :2] += 1.0
    assert abs(float(L.recon_loss(p, t, v)) - 0.5) < TOL


def test_recon_invalid_side_counts_as_r_max():
    t, v = _images(1)
    v[0, 0, 0] = False
    # target has no return in one of 8 cells, prediction says 5 m; counted as |5 - 40|
    val = float(L.recon_loss(t.clone(), t, v, r_max=40.0))
    assert abs(val - 35.0 / 8) < TOL


@pytest.mark.parametrize("d_fake,recon_err,expected", [(1.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                                                       (0.5, 0.3, 0.55)])
def test_gen_total_hand_values(d_fake, recon_err, expected):
    d = TagDisc({2: d_fake})
    t, v = _images()
    val = L.gen_total_loss(d, tagged(FAKE, 2), tagged(0, 2), t + recon_err, t, v, L.LossWeights())
    assert abs(float(val) - expected) < TOL


# -- MMD ---------------------------------------------------------------------------


def test_mmd_identical_sets_zero():
    a = torch.randn(6, 5, generator=torch.Generator().manual_seed(0))
    assert abs(float(L.mmd(a, a.clone()))) < 1e-9


def test_mmd_singleton_closed_form():
    x, y = pair_on_line(1.0)
    assert abs(float(L.mmd(x, y, sigma=1.0)) - (2 - 2 * math.exp(-0.5))) < TOL
    assert abs(2 - 2 * math.exp(-0.5) - 0.78693868) < 1e-8


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_mmd_linear_equals_mean_gap(seed, na, nb):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(na, 3, generator=g), torch.randn(nb, 3, generator=g) + 1
    direct = sum(float(x @ y) for x in a for y in a) / na**2 \
        + sum(float(x @ y) for x in b for y in b) / nb**2 \
        - 2 * sum(float(x @ y) for x in a for y in b) / (na * nb)
    gap = float(((a.mean(0) - b.mean(0)) ** 2).sum())
    val = float(L.mmd(a, b, kernel="linear"))
    assert abs(val - gap) < 1e-9
    assert abs(val - direct) < 1e-9


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_mmd_symmetric_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(4, 3, generator=g), torch.randn(7, 3, generator=g)
    ab, ba = float(L.mmd(a, b)), float(L.mmd(b, a))
    assert abs(ab - ba) < 1e-12
    assert ab >= -1e-12


def test_mmd_empty_rejected():
    with pytest.raises(ValueError):
        L.mmd(torch.zeros(0, 3), torch.zeros(2, 3))


def test_disc_mmd_examples():
    w = L.LossWeights(w_tri=0.0)
    zero_target = TagDisc({1: 1.0, 2: 0.0, 3: 0.0})
    args = (tagged(0), tagged(REAL), tagged(FAKE), tagged(TARGET))
    assert float(L.disc_total_loss_mmd(zero_target, *args, w)) == float(
        L.disc_total_loss(zero_target, *args[:3], w))
    assert abs(float(L.disc_total_loss_mmd(TagDisc({1: 1.0, 2: 0.0, 3: 1.0}), *args, w)) - 1.0) < TOL
    half = TagDisc({1: 0.5, 2: 0.5, 3: 0.5})
    assert abs(float(L.disc_total_loss_mmd(half, *args, w)) - 0.75) < TOL


def test_gen_mmd_additivity_and_switch():
    d = TagDisc({2: 0.5})
    t, v = _images()
    r_kl, r_sj = pair_on_line(0.0)
    kwargs = dict(disc=d, r_di=tagged(FAKE, 2), r_si=tagged(0, 2), pred=t + 0.3, s_i=t,
                  s_i_valid=v, target_pred=t + 0.2, k_l=t, k_l_valid=v, r_kl=r_kl, r_sj=r_sj)
    total = L.gen_total_loss_mmd(weights=L.LossWeights(), sigma=1.0, **kwargs)
    assert abs(float(total) - (0.55 + 0.2 + 0.0)) < TOL
    x, y = pair_on_line(1.0)
    kwargs.update(r_kl=x, r_sj=y)
    expect_mmd = 2 - 2 * math.exp(-0.5)
    total = L.gen_total_loss_mmd(weights=L.LossWeights(), sigma=1.0, **kwargs)
    assert abs(float(total) - (0.75 + expect_mmd)) < TOL
    off = L.gen_total_loss_mmd(weights=L.LossWeights(w_mmd=0.0), sigma=1.0, **kwargs)
    assert abs(float(off) - 0.75) < TOL
    # the target self-reconstruction weight scales only its own term
    half = L.gen_total_loss_mmd(weights=L.LossWeights(w_recon_target=0.5), sigma=1.0, **kwargs)
    assert abs(float(half) - (0.55 + 0.1 + expect_mmd)) < TOL
    terms = L.gen_loss_terms_mmd(weights=L.LossWeights(w_recon_target=0.0), sigma=1.0, **kwargs)
    assert "recon_target" not in terms and abs(float(terms["recon"]) - 0.3) < TOL


def test_weights_validation():
    with pytest.raises(ValueError):
        L.LossWeights(w_tri=-1.0)
    with pytest.raises(ValueError):
        L.LossWeights(alpha=float("nan"))


# -- finite-difference gradient checks (float64) -------------------------------------


class SmoothDisc(torch.nn.Module):
    def __init__(self, dim, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.w = torch.nn.Parameter(torch.randn(2 * dim, generator=g) * 0.3)

    def logits(self, a, b=None):
        return torch.cat([a, b], -1) @ self.w

    def forward(self, a, b=None):
        return torch.sigmoid(self.logits(a, b))


def _fd_check(fn, *inputs):
    inputs = tuple(x.detach().clone().requires_grad_(True) for x in inputs)
    assert torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=1e-8, rtol=1e-4)


def test_fd_triplet_away_from_hinge():
    g = torch.Generator().manual_seed(1)
    a, p = torch.randn(4, 5, generator=g), torch.randn(4, 5, generator=g)
    n = a + 0.05 * torch.randn(4, 5, generator=g)
    assert torch.all(L.euclidean(a, p) - L.euclidean(n, a) + 1.0 > 0.1)
    _fd_check(lambda a, p, n: L.triplet_loss(a, p, n, 1.0), a, p, n)


def test_fd_disc_and_gen_losses():
    g = torch.Generator().manual_seed(2)
    d = SmoothDisc(5)
    r = [torch.randn(3, 5, generator=g) for _ in range(4)]
    _fd_check(lambda a, b, c: L.disc_adv_loss(d, b, a, c), *r[:3])
    _fd_check(lambda a, b, c: L.disc_adv_loss(d, b, a, c, relativistic=True), *r[:3])
    t = torch.rand(3, 2, 4, generator=g) * 10 + 1
    v = torch.rand(3, 2, 4, generator=g) > 0.2
    pred = t + torch.rand(3, 2, 4, generator=g) + 0.1  # keep |pred - t| away from 0
    _fd_check(lambda rd, p: L._total(L.gen_loss_terms(d, rd, r[0], p, t, v, L.LossWeights(), 40.0),
                                     p), r[2], pred)


def test_fd_mmd():
    g = torch.Generator().manual_seed(3)
    a, b = torch.randn(4, 3, generator=g), torch.randn(5, 3, generator=g)
    _fd_check(lambda a, b: L.mmd(a, b, sigma=1.3), a, b)
    _fd_check(lambda a, b: L.mmd(a, b, kernel="linear"), a, b)
