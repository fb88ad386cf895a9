import pytest
import torch
import torch.nn.functional as F
from hypothesis import given
from hypothesis import strategies as st

from hardnet_cws.norms import IBN, BatchNorm, InstanceNorm, PReLU, SwitchNorm

from oracles import central_diff_grad, rel_error

SHAPE = (2, 4, 5, 5)


def _randomise(module):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn_like(p) * 0.5 + (1.0 if p.dim() == 1 and p.numel() > 3 else 0.0))
    return module


def reference_ibn(x, ibn: IBN):
    half = ibn.half
    a = F.instance_norm(x[:, :half], weight=ibn.IN.weight, bias=ibn.IN.bias, eps=ibn.IN.eps)
    b = F.batch_norm(x[:, half:], None, None, ibn.BN.weight, ibn.BN.bias, training=True, eps=ibn.BN.eps)
    return torch.cat([a, b], 1)


def test_ibn_matches_reference():
    x = torch.randn(*SHAPE, dtype=torch.float64) * 3 + 1
    ibn = _randomise(IBN(4).double())
    assert (ibn(x) - reference_ibn(x, ibn)).abs().max().item() < 1e-6


def test_ibn_odd_split():
    ibn = IBN(5)
    assert ibn.half == 2
    assert ibn(torch.randn(2, 5, 3, 3)).shape == (2, 5, 3, 3)
    with pytest.raises(ValueError):
        IBN(1)
    with pytest.raises(ValueError):
        ibn(torch.randn(2, 4, 3, 3))


def test_batchnorm_matches_torch_including_running_stats():
    x = torch.randn(*SHAPE, dtype=torch.float64)
    ours = BatchNorm(4).double()
    ref = torch.nn.BatchNorm2d(4).double()
    for _ in range(3):
        torch.testing.assert_close(ours(x), ref(x))
    torch.testing.assert_close(ours.running_mean, ref.running_mean)
    torch.testing.assert_close(ours.running_var, ref.running_var)
    ours.eval()
    ref.eval()
    torch.testing.assert_close(ours(x), ref(x))


def test_instancenorm_matches_torch():
    x = torch.randn(*SHAPE, dtype=torch.float64)
    ours = _randomise(InstanceNorm(4).double())
    ref = F.instance_norm(x, weight=ours.weight, bias=ours.bias, eps=ours.eps)
    torch.testing.assert_close(ours(x), ref)


def _one_hot(sn: SwitchNorm, idx: int):
    logits = torch.full((3,), -60.0, dtype=sn.mean_logits.dtype)
    logits[idx] = 60.0
    with torch.no_grad():
        sn.mean_logits.copy_(logits)
        sn.var_logits.copy_(logits)


@pytest.mark.parametrize("idx,kind", [(0, "in"), (1, "ln"), (2, "bn")])
def test_switchnorm_one_hot_reductions(idx, kind):
    x = torch.randn(*SHAPE, dtype=torch.float64) * 2 - 0.5
    sn = SwitchNorm(4).double()
    _one_hot(sn, idx)
    if kind == "in":
        ref = F.instance_norm(x, eps=sn.eps)
    elif kind == "ln":
        ref = F.layer_norm(x, x.shape[1:], eps=sn.eps)
    else:
        ref = F.batch_norm(x, None, None, training=True, eps=sn.eps)
    assert (sn(x) - ref).abs().max().item() < 1e-5


def test_switchnorm_initial_weights_uniform():
    wm, wv = SwitchNorm(3).mixture_weights()
    torch.testing.assert_close(wm, torch.full((3,), 1 / 3))
    torch.testing.assert_close(wv, torch.full((3,), 1 / 3))


def test_switchnorm_eval_uses_running_batch_stats():
    sn = SwitchNorm(4).double()
    _one_hot(sn, 2)
    x = torch.randn(*SHAPE, dtype=torch.float64)
    sn(x)
    sn.eval()
    ref = F.batch_norm(x, sn.running_mean, sn.running_var, training=False, eps=sn.eps)
    assert (sn(x) - ref).abs().max().item() < 1e-5


def test_prelu_zero_slope_is_relu():
    x = torch.randn(*SHAPE)
    p = PReLU(4, init=0.0)
    assert torch.equal(p(x), torch.relu(x))


def test_prelu_default_slope_and_channels():
    p = PReLU(4)
    assert torch.all(p.weight == 0.25)
    x = -torch.ones(1, 4, 2, 2)
    assert torch.all(p(x) == -0.25)
    with pytest.raises(ValueError):
        p(torch.ones(1, 3, 2, 2))


@given(st.floats(-3, 3))
def test_prelu_identity_on_positive(a):
    p = PReLU(2, init=a)
    x = torch.rand(2, 2, 3, 3) + 0.01
    assert torch.equal(p(x), x)


def _gradcheck(module, seed):
    torch.manual_seed(seed)
    module = _randomise(module.double())
    x = (torch.randn(*SHAPE, dtype=torch.float64) * 1.5).requires_grad_(True)
    probe = torch.randn(*SHAPE, dtype=torch.float64)
    if isinstance(module, PReLU):
        with torch.no_grad():  # keep finite differences away from the kink
            x[x.abs() < 1e-3] += 1e-2
    params = [p for p in module.parameters()]
    loss = (module(x) * probe).sum()
    analytic = torch.autograd.grad(loss, [x] + params)
    numeric = central_diff_grad(lambda: (module(x) * probe).sum(), [x] + params)
    return [rel_error(a, n) for a, n in zip(analytic, numeric)]


@pytest.mark.parametrize("make", [lambda: IBN(4), lambda: SwitchNorm(4), lambda: PReLU(4)],
                         ids=["ibn", "switchnorm", "prelu"])
def test_finite_difference_gradients(make):
    errs = _gradcheck(make(), 3)
    assert max(errs) < 1e-4, errs


def test_running_stats_track_momentum():
    bn = BatchNorm(2, momentum=0.5)
    x = torch.randn(4, 2, 3, 3)
    bn(x)
    mean = x.mean(dim=(0, 2, 3))
    var = x.var(dim=(0, 2, 3), unbiased=True)
    torch.testing.assert_close(bn.running_mean, 0.5 * mean)
    torch.testing.assert_close(bn.running_var, 0.5 + 0.5 * var)
    assert bn.num_batches_tracked.item() == 1
