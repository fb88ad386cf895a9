import cv2
import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hardnet_cws.decoder import DecoderOutput
from hardnet_cws.losses import edge_target, seg_loss, soft_dice_loss, total_loss

from oracles import seg_loss_loop


def _square(n=8, lo=2, hi=6):
    gt = torch.zeros(1, 1, n, n)
    gt[..., lo:hi, lo:hi] = 1
    return gt


def test_perfect_prediction_is_zero():
    gt = _square()
    assert seg_loss(gt.clone(), gt).item() == pytest.approx(0.0, abs=1e-7)


def test_inverted_prediction_is_near_max():
    gt = _square()
    bad = seg_loss(1 - gt, gt).item()
    # torch clamps log at -100, so BCE saturates at 100
    assert bad == pytest.approx(0.5 * (100 + 1 - 1 / (gt.numel() + 1)), rel=1e-4)
    assert bad > seg_loss(torch.full_like(gt, 0.5), gt).item()


def test_half_map_matches_loop():
    gt = torch.zeros(1, 1, 4, 4)
    gt[..., :2, :] = 1
    pred = torch.full_like(gt, 0.5)
    assert seg_loss(pred, gt).item() == pytest.approx(seg_loss_loop(pred.numpy(), gt.numpy()), rel=1e-6)


def test_random_map_matches_loop(rng):
    pred = torch.from_numpy(rng.uniform(0.01, 0.99, (1, 1, 6, 5))).double()
    gt = torch.from_numpy((rng.random((1, 1, 6, 5)) > 0.5).astype(float))
    assert seg_loss(pred, gt).item() == pytest.approx(seg_loss_loop(pred.numpy(), gt.numpy()), rel=1e-10)


def test_dice_is_per_sample_mean():
    gt = torch.stack([_square()[0], torch.zeros(1, 8, 8)])
    pred = torch.stack([_square()[0], torch.ones(1, 8, 8)])
    assert soft_dice_loss(pred, gt).item() == pytest.approx(0.5 * (1 - 1 / 65))


def test_size_mismatch():
    with pytest.raises(ValueError):
        seg_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5))


def test_edge_target_matches_opencv(rng):
    mask = np.zeros((12, 12), np.uint8)
    mask[3:9, 2:7] = 1
    mask[0:2, 10:12] = 1
    kernel = np.ones((3, 3), np.uint8)
    ref = cv2.dilate(mask, kernel) - cv2.erode(mask, kernel)
    got = edge_target(torch.from_numpy(mask).float())[0, 0].numpy()
    np.testing.assert_array_equal(got, ref)


def test_total_loss_zero_companions_no_edge():
    gt = _square()
    main = torch.full_like(gt, 0.3)
    out = DecoderOutput(main, [], torch.zeros_like(gt))
    assert total_loss(out, gt, edge_weight=0).item() == pytest.approx(seg_loss(main, gt).item())


def test_total_loss_sums_heads():
    gt = _square()
    main, c1, c2 = (torch.full_like(gt, v) for v in (0.3, 0.6, 0.8))
    a, b, c = (seg_loss(t, gt).item() for t in (c1, c2, main))
    out = DecoderOutput(main, [c1, c2], torch.full_like(gt, 0.5))
    assert total_loss(out, gt, edge_weight=0).item() == pytest.approx(a + b + c, rel=1e-6)
    e = seg_loss(torch.full_like(gt, 0.5), edge_target(gt)).item()
    assert total_loss(out, gt, edge_weight=2.0).item() == pytest.approx(a + b + c + 2 * e, rel=1e-6)


def test_total_loss_perfect_heads():
    gt = _square()
    out = DecoderOutput(gt.clone(), [gt.clone(), gt.clone()], edge_target(gt))
    assert total_loss(out, gt).item() == pytest.approx(0.0, abs=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_total_loss_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    gt = (torch.rand(2, 1, 6, 6, generator=g) > 0.5).float()
    maps = [torch.rand(2, 1, 6, 6, generator=g) for _ in range(4)]
    out = DecoderOutput(maps[0], maps[1:3], maps[3])
    assert total_loss(out, gt).item() >= 0.0
