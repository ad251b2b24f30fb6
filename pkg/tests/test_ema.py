import pytest
import torch

from doublematch.ema import EmaState, copy_shadow_to, ema_init, ema_update
from doublematch.model import build_model
from doublematch.schedule_optim import NesterovSgd


def _scalar_params(value, dtype=torch.float64):
    return [("w", torch.tensor(value, dtype=dtype))]


def test_init_is_bitwise_copy():
    params = [("a", torch.randn(3, 4)), ("b", torch.randn(7))]
    state = ema_init(params)
    assert state.momentum == 0.999
    for name, p in params:
        assert torch.equal(state.shadow[name], p)
        assert state.shadow[name] is not p


def test_fresh_ema_evaluates_like_raw_model():
    bundle = build_model("desk-cnn", num_classes=3, feature_dim=16)
    state = ema_init(bundle.named_trainable())
    clone = bundle.clone()
    copy_shadow_to(state, clone)
    bundle.train_mode(False)
    clone.train_mode(False)
    x = torch.randn(4, 3, 32, 32)
    with torch.no_grad():
        torch.testing.assert_close(clone.head_g(clone.backbone(x)),
                                   bundle.head_g(bundle.backbone(x)))


def test_scalar_recurrence_half_momentum():
    state = ema_init(_scalar_params(0.0), momentum=0.5)
    expected = [0.5, 0.75, 0.875]
    for want in expected:
        ema_update(state, _scalar_params(1.0))
        assert float(state.shadow["w"]) == pytest.approx(want, abs=1e-12)


def test_geometric_decay_closed_form():
    m = 0.9
    state = ema_init(_scalar_params(1.0), momentum=m)
    theta = 0.0
    for n in range(1, 200):
        ema_update(state, _scalar_params(theta))
        assert abs(float(state.shadow["w"]) - m ** n) < 1e-12


def test_zero_momentum_tracks_params():
    state = ema_init(_scalar_params(5.0), momentum=0.0)
    ema_update(state, _scalar_params(-3.0))
    assert float(state.shadow["w"]) == -3.0


def test_update_is_affine_in_inputs():
    m = 0.7
    for s0, a in [(0.0, 1.0), (2.0, -1.0), (1.5, 0.25)]:
        state = ema_init(_scalar_params(s0), momentum=m)
        ema_update(state, _scalar_params(a))
        assert float(state.shadow["w"]) == pytest.approx(m * s0 + (1 - m) * a, abs=1e-12)


def test_shadow_untouched_by_optimizer_step():
    bundle = build_model("desk-cnn", num_classes=2, feature_dim=8)
    state = ema_init(bundle.named_trainable(), momentum=0.99)
    before = {k: v.clone() for k, v in state.shadow.items()}
    opt = NesterovSgd(momentum=0.9)
    grads = {name: torch.ones_like(p) for name, p in bundle.named_trainable()}
    opt.step(bundle.named_trainable(), grads, lr=0.1)
    for name, snap in before.items():
        assert torch.equal(state.shadow[name], snap)


def test_shape_drift_detected():
    state = ema_init([("w", torch.zeros(3))])
    with pytest.raises(ValueError):
        ema_update(state, [("w", torch.zeros(4))])
    with pytest.raises(KeyError):
        ema_update(state, [("v", torch.zeros(3))])


def test_state_dict_round_trip():
    state = ema_init([("w", torch.randn(5))], momentum=0.95)
    clone = EmaState.from_state_dict(state.state_dict())
    assert clone.momentum == 0.95
    assert torch.equal(clone.shadow["w"], state.shadow["w"])
