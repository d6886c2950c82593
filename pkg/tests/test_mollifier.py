import math

import numpy as np
import pytest

from deltabose import mollifier
from deltabose.errors import DomainError


def test_normalized_and_supported(bump):
    assert bump.mass == pytest.approx(1.0, abs=1e-9)
    pts = np.array([[1.0, 0.0], [0.0, -1.0], [0.8, 0.8], [3.0, 2.0]])
    assert np.all(mollifier.phi_eval(bump, pts) == 0.0)
    rng = np.random.default_rng(0)
    assert np.all(bump(rng.uniform(-1.5, 1.5, (1000, 2))) >= 0.0)


def test_rescaled_mass_and_origin(bump):
    eps = 0.1
    x = np.linspace(-eps, eps, 401)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    mass = mollifier.phi_eval(bump, np.stack([X, Y], -1), eps=eps).sum() * h * h
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mollifier.phi_eval(bump, [0.0, 0.0], eps=eps) == pytest.approx(bump([0.0, 0.0]) / eps**2)


def test_sqrt_squares_back(bump):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, (2000, 2))
    phi = mollifier.phi_eval(bump, pts, sqrt=True)
    assert np.max(np.abs(phi**2 - bump(pts))) < 1e-12


def test_finite_differences_bounded(bump):
    x = np.linspace(-1.2, 1.2, 2401)
    h = x[1] - x[0]
    f = bump(np.stack([x, np.zeros_like(x)], -1))
    for k in (1, 2, 3):
        f = np.diff(f) / h
        assert np.all(np.isfinite(f)) and np.max(np.abs(f)) < 1e3


def test_kphi_negative_and_refinement_stable(bump):
    k = bump.k_phi
    assert k < 0
    fine = mollifier.standard_bump(grid_n=240, cheb_deg=128, n_angles=8)
    assert abs(fine.k_phi - k) < 1e-5 * abs(k)


def _write_table(path, fn, n=81, lim=1.0):
    xs = np.linspace(-lim, lim, n)
    with open(path, "w") as fh:
        fh.write("x1,x2,value\n")
        for a in xs:
            fh.writelines(f"{float(a)!r},{float(b)!r},{float(fn(a, b))!r}\n" for b in xs)


def test_kphi_reflection_invariant(tmp_path):
    def prof(a, b):
        r2 = ((a - 0.2) ** 2) / 0.3 + (b + 0.1) ** 2 / 0.5
        return math.exp(-1.0 / (1.0 - r2)) if r2 < 1 else 0.0

    _write_table(tmp_path / "p.csv", prof)
    _write_table(tmp_path / "q.csv", lambda a, b: prof(-a, -b))
    hp = mollifier.from_table(tmp_path / "p.csv", n_angles=32)
    hq = mollifier.from_table(tmp_path / "q.csv", n_angles=32)
    assert hp.mass == pytest.approx(1.0, abs=1e-9)
    assert hp.k_phi == pytest.approx(hq.k_phi, rel=1e-6)


def test_user_table_close_to_bump(tmp_path, bump):
    _write_table(tmp_path / "b.csv", lambda a, b: float(bump([a, b])), n=121)
    ht = mollifier.from_table(tmp_path / "b.csv")
    assert ht.k_phi == pytest.approx(bump.k_phi, rel=2e-3)


def test_beta_formula(bump):
    eps = math.exp(-10.0)
    const = -0.23186303131682  # 2 gamma - 2 log 2
    expected = 2 * math.pi / 10 + math.pi / 100 * (const + bump.k_phi)
    assert mollifier.beta_eps(eps, 0.0, bump) == pytest.approx(expected, abs=1e-12)


def test_beta_limits(bump):
    eps = np.geomspace(1e-12, 1e-3, 20)
    b = np.array([mollifier.beta_eps(e, 0.0, bump) for e in eps])
    assert np.all(np.diff(b) > 0)  # decreasing as eps -> 0
    gap = np.abs(b * np.abs(np.log(eps)) - 2 * math.pi)
    assert np.all(np.diff(gap) > 0)  # beta |log eps| -> 2 pi
    assert gap[0] < 0.2


@pytest.mark.parametrize("eps", [0.0, 1.0, 1.5, -0.1])
def test_beta_domain(bump, eps):
    with pytest.raises(DomainError):
        mollifier.beta_eps(eps, 0.0, bump)
