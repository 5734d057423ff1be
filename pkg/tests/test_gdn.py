import math

import numpy as np
import pytest
import torch

from percsim.errors import DimensionError, NumericError, ParameterError
from percsim.gdn import GDN, GdnParams, gdn_forward


def _params(c, beta=1.0, gamma=0.0, dtype=torch.float64):
    return GdnParams(torch.full((c,), beta, dtype=dtype), torch.full((c, c), gamma, dtype=dtype))


def test_identity_when_gamma_zero():
    x = torch.randn(4, 5, 6, dtype=torch.float64)
    np.testing.assert_array_equal(gdn_forward(x, _params(4)).numpy(), x.numpy())


def test_scalar_evaluation():
    x = torch.full((1, 1, 1), 3.0, dtype=torch.float64)
    y = gdn_forward(x, _params(1, 1.0, 1.0))
    assert float(y) == pytest.approx(3.0 / math.sqrt(10.0), abs=1e-12)
    assert float(y) == pytest.approx(0.94868, abs=1e-5)


def test_zero_input_maps_to_zero():
    g = torch.rand(3, 3, dtype=torch.float64)
    p = GdnParams(torch.rand(3, dtype=torch.float64) + 0.1, g)
    for inverse in (False, True):
        y = gdn_forward(torch.zeros(3, 4, 4, dtype=torch.float64), p, inverse=inverse)
        assert torch.count_nonzero(y) == 0


def test_diagonal_gdn_has_closed_form_inverse():
    # per channel y = x / sqrt(b + g x^2), so x = y * sqrt(b / (1 - g y^2))
    torch.manual_seed(1)
    c = 5
    beta = torch.rand(c, dtype=torch.float64) + 0.5
    g = torch.rand(c, dtype=torch.float64)
    x = torch.randn(c, 6, 6, dtype=torch.float64)
    y = gdn_forward(x, GdnParams(beta, torch.diag(g)))
    b, gg = beta.view(-1, 1, 1), g.view(-1, 1, 1)
    x_rec = y * torch.sqrt(b / (1 - gg * y * y))
    np.testing.assert_allclose(x_rec.numpy(), x.numpy(), rtol=1e-5)


def test_igdn_inverts_gdn_in_small_signal_regime():
    # per channel igdn(gdn(x)) = x * sqrt((b + g x'^2) / (b + g x^2)) with x' = gdn(x);
    # for diagonal gamma and small gamma this is within 1e-5 relative
    torch.manual_seed(2)
    c = 4
    p = GdnParams(torch.ones(c, dtype=torch.float64), torch.diag(torch.full((c,), 1e-6, dtype=torch.float64)))
    x = torch.randn(c, 8, 8, dtype=torch.float64)
    back = gdn_forward(gdn_forward(x, p), p, inverse=True)
    np.testing.assert_allclose(back.numpy(), x.numpy(), rtol=1e-5)


def test_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        gdn_forward(torch.zeros(3, 2, 2), _params(4, dtype=torch.float32))
    with pytest.raises(DimensionError):
        gdn_forward(torch.zeros(3, 2), _params(3, dtype=torch.float32))


def test_non_finite_input_raises():
    x = torch.zeros(2, 2, 2)
    x[0, 0, 0] = float("nan")
    with pytest.raises(NumericError):
        gdn_forward(x, _params(2, dtype=torch.float32))


def test_param_validation():
    with pytest.raises(ParameterError):
        _params(2, beta=0.0).validate()
    with pytest.raises(ParameterError):
        _params(2, gamma=-1.0).validate()
    _params(2, gamma=0.5).validate()


def test_layer_matches_functional_form():
    torch.manual_seed(0)
    layer = GDN(3).double()
    with torch.no_grad():
        layer.gamma_p.add_(0.1 * torch.rand(3, 3, dtype=torch.float64))
    x = torch.randn(2, 3, 5, 5, dtype=torch.float64)
    p = layer.params()
    p.validate()
    np.testing.assert_allclose(layer(x).detach().numpy(), gdn_forward(x, p).detach().numpy(), rtol=1e-12)
    inv = GDN(3, inverse=True).double()
    inv.load_state_dict(layer.state_dict())
    np.testing.assert_allclose(inv(x).detach().numpy(), gdn_forward(x, p, inverse=True).detach().numpy(),
                               rtol=1e-12)


def test_gradient_matches_finite_differences():
    torch.manual_seed(3)
    x = torch.randn(8, 4, 4, dtype=torch.float64, requires_grad=True)
    beta = (torch.rand(8, dtype=torch.float64) + 0.5).requires_grad_()
    gamma = (0.1 * torch.rand(8, 8, dtype=torch.float64)).requires_grad_()
    for inverse in (False, True):
        assert torch.autograd.gradcheck(
            lambda a, b, g: gdn_forward(a, GdnParams(b, g), inverse=inverse),
            (x, beta, gamma), eps=1e-6, atol=1e-9, rtol=1e-4)
