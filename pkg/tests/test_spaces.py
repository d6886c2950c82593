import math
import warnings

import numpy as np
import pytest

from deltabose.errors import DomainError, ShapeError
from deltabose.spaces import (
    AccuracyWarning,
    Diagram,
    GridFunction,
    PairIdx,
    WeightedNormSpec,
    YEpsPoint,
    YPoint,
    embed_s_alpha,
    embed_s_eps_alpha,
    enumerate_diagrams,
    enumerate_pairs,
    iter_diagrams,
    log_weight,
    s_alpha,
    uniform_axis,
    weight_conjugate,
    weighted_norm,
)


def test_pairs_are_ordered_and_counted():
    for n in range(2, 6):
        pairs = enumerate_pairs(n)
        assert len(pairs) == n * (n - 1) // 2
        assert all(p.i < p.j for p in pairs)
    with pytest.raises(DomainError):
        PairIdx(2, 1)
    with pytest.raises(DomainError):
        PairIdx(1, 1)
    assert str(PairIdx(1, 3)) == "13"
    assert PairIdx(2, 4).others(5) == (1, 3, 5)


@pytest.mark.parametrize("n,mmax", [(2, 3), (3, 4), (4, 3)])
def test_diagram_counts(n, mmax):
    P = n * (n - 1) // 2
    ds = enumerate_diagrams(n, mmax)
    expected = sum(P * (P - 1) ** (m - 1) for m in range(1, mmax + 1))
    assert len(ds) == expected
    assert len({str(d) for d in ds}) == expected
    for d in ds:
        assert all(a != b for a, b in zip(d, list(d)[1:]))
    assert [str(d) for d in iter_diagrams(n, mmax)] == [str(d) for d in ds]


def test_diagram_rejects_repeats():
    with pytest.raises(DomainError):
        Diagram((PairIdx(1, 2), PairIdx(1, 2)))


def test_embeddings_place_particles():
    a = PairIdx(2, 3)
    y = YPoint(a, 4, [0.5, -1.0], [[1.0, 2.0], [3.0, 4.0]])
    x = embed_s_alpha(a, y)
    np.testing.assert_array_equal(x, [[1, 2], [0.5, -1], [0.5, -1], [3, 4]])
    ye = YEpsPoint(a, 4, [1.0, 0.0], [0.5, -1.0], [[1.0, 2.0], [3.0, 4.0]])
    xe = embed_s_eps_alpha(a, 0.2, ye)
    np.testing.assert_allclose(xe[1], [0.6, -1.0])
    np.testing.assert_allclose(xe[2], [0.4, -1.0])
    np.testing.assert_allclose(0.5 * (xe[1] + xe[2]), y.yc)
    with pytest.raises(ShapeError):
        embed_s_alpha(PairIdx(1, 2), y)
    with pytest.raises(ShapeError):
        YPoint(a, 4, [0.0, 0.0], [[1.0, 2.0]])


def test_s_alpha_broadcasts():
    a = PairIdx(1, 3)
    yc = np.random.default_rng(0).normal(size=(5, 2))
    rest = np.zeros((5, 1, 2))
    x = s_alpha(a, 3, yc, rest)
    assert x.shape == (5, 3, 2)
    np.testing.assert_array_equal(x[:, 0], x[:, 2])


def test_log_weights():
    x = np.array([[1.0, -2.0], [0.5, 0.0]])
    assert log_weight(WeightedNormSpec(0.5, "X"), {"x": x}) == pytest.approx(1.75)
    spec_y = WeightedNormSpec(1.0, "Y", PairIdx(1, 2))
    assert log_weight(spec_y, {"yc": np.array([1.0, -1.0])}) == pytest.approx(4.0)
    spec_e = WeightedNormSpec(1.0, "YEps", PairIdx(1, 2), eps=0.1)
    # pair weight equals the X weight of the embedded configuration
    yr, yc = np.array([3.0, -2.0]), np.array([0.1, 0.05])
    val = log_weight(spec_e, {"yr": yr, "yc": yc})
    xe = np.array([yc + 0.05 * yr, yc - 0.05 * yr])
    assert val == pytest.approx(np.abs(xe).sum())
    with pytest.raises(DomainError):
        WeightedNormSpec(1.0, "YEps")


def test_uniform_axis_avoids_origin():
    ax = uniform_axis(3.0, 0.25)
    assert len(ax) % 2 == 0
    assert np.min(np.abs(ax)) > 0
    assert ax[0] > -3 and ax[-1] < 3
    np.testing.assert_allclose(np.diff(ax), 0.25)


def test_weighted_norm_of_gaussian():
    # |exp(-|x|^2/2) e^{a|x|_1}|^2 on R^2 factorizes into 1-d integrals
    a = 0.5
    ax = uniform_axis(9.0, 0.05)
    f = GridFunction.from_callable(lambda b: np.exp(-np.sum(b["x"] ** 2, axis=(-1, -2)) / 2),
                                   (ax, ax), chart="x")
    # int exp(-x^2 + 2a|x|) dx = sqrt(pi) e^{a^2} (1 + erf a); two directions
    one_d = math.sqrt(math.pi) * math.exp(a * a) * (1 + math.erf(a))
    exact = one_d
    val = weighted_norm(f, WeightedNormSpec(a, "X"))
    # the weight has a kink at 0, so the trapezoid rule is only O(h^2)
    assert val == pytest.approx(exact, rel=2e-4)
    assert val.warning is None


def test_weighted_norm_warns_when_truncated():
    ax = uniform_axis(1.0, 0.05)
    f = GridFunction.from_callable(lambda b: np.exp(-np.sum(b["x"] ** 2, axis=(-1, -2)) / 2),
                                   (ax, ax), chart="x")
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        val = weighted_norm(f, WeightedNormSpec(0.0, "X"))
    assert val.warning is not None
    assert any(issubclass(r.category, AccuracyWarning) for r in rec)


def test_cr_chart_is_unit_jacobian():
    ax = uniform_axis(12.0, 0.6)
    g = GridFunction.from_callable(
        lambda b: np.exp(-np.sum(b["x"] ** 2, axis=(-1, -2)) / 2), (ax, ax, ax, ax), chart="cr", n=2)
    assert g.integral() == pytest.approx((2 * math.pi) ** 2, rel=1e-8)


class _Diag:
    """Minimal operator: diagonal multiplication on a 1-block X grid."""

    def __init__(self, pts, d=None):
        self.in_points = self.out_points = {"x": pts}
        self.d = np.ones(len(pts)) if d is None else d

    def with_diagonals(self, d_out, d_in):
        d = self.d.copy()
        if d_out is not None:
            d = d * d_out
        if d_in is not None:
            d = d * d_in
        return _Diag(self.in_points["x"], d)


def test_weight_conjugate_cancels_for_diagonal_operator():
    pts = np.random.default_rng(1).normal(size=(10, 1, 2))
    spec = WeightedNormSpec(0.7, "X")
    W = weight_conjugate(_Diag(pts), spec, spec)
    np.testing.assert_allclose(W.d, 1.0)
    W2 = weight_conjugate(_Diag(pts), WeightedNormSpec(0.0, "X"), spec)
    np.testing.assert_allclose(W2.d, np.exp(0.7 * np.abs(pts).sum(axis=(-1, -2))))
