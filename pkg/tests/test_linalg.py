import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsme.errors import ValidationError
from qsme.linalg import (
    func_of_hermitian,
    herm_eig,
    herm_expm,
    hermitize,
    inv_sqrt_psd,
    kron,
)
from qsme.systems import pauli

from conftest import random_hermitian


def test_kron_identity():
    assert np.allclose(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_sigma_z_identity_ordering():
    # |g> first: sigma_z = diag(-1, +1), so sz (x) I = diag(-1, -1, +1, +1)
    out = kron(pauli("z"), np.eye(2))
    assert np.allclose(out, np.diag([-1, -1, 1, 1]))


def test_kron_sigma_x_squares_to_identity():
    u = kron(pauli("x"), pauli("x"))
    assert np.allclose(u @ u, np.eye(4))


def test_kron_entry_layout(rng):
    a = random_hermitian(rng, 2)
    b = random_hermitian(rng, 3)
    out = kron(a, b)
    for i in range(2):
        for j in range(2):
            for k in range(3):
                for l in range(3):
                    assert abs(out[i * 3 + k, j * 3 + l] - a[i, j] * b[k, l]) <= 1e-15 * abs(a[i, j] * b[k, l])


def test_kron_associativity(rng):
    for _ in range(10):
        a = random_hermitian(rng, 2)
        b = random_hermitian(rng, 3)
        c = random_hermitian(rng, 2)
        left = kron(kron(a, b), c)
        right = kron(a, kron(b, c))
        assert np.linalg.norm(left - right) <= 1e-12 * max(np.linalg.norm(left), 1)


def test_kron_dimension_budget():
    with pytest.raises(ValidationError, match="truncation budget"):
        kron(np.eye(100), np.eye(100), max_dim=4096)


def test_herm_eig_identity():
    eig = herm_eig(np.eye(3))
    assert np.allclose(eig.eigenvalues, 1.0)


def test_herm_eig_pauli_x_spectrum():
    eig = herm_eig(pauli("x"))
    assert np.allclose(eig.eigenvalues, [-1.0, 1.0])


def test_herm_eig_ascending():
    eig = herm_eig(np.diag([4.0, 1.0]))
    assert np.allclose(eig.eigenvalues, [1.0, 4.0])


def test_herm_eig_reconstruction_and_unitarity(rng):
    for dim in (2, 5, 8):
        a = random_hermitian(rng, dim, scale=3.0)
        eig = herm_eig(a)
        assert np.linalg.norm(eig.reconstruct() - a) <= 1e-10 * np.linalg.norm(a)
        u = eig.eigenvectors
        assert np.linalg.norm(u.conj().T @ u - np.eye(dim)) <= 1e-10


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(ValidationError, match="Hermitian"):
        herm_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_inv_sqrt_identity():
    assert np.allclose(inv_sqrt_psd(np.eye(3)), np.eye(3))


def test_inv_sqrt_diagonal():
    assert np.allclose(inv_sqrt_psd(np.diag([4.0, 1.0])), np.diag([0.5, 1.0]))


def test_inv_sqrt_step_normalization_residual():
    # S = M0†M0 + dt L†L with L = sigma_z, dt = 0.01
    dt = 0.01
    l = pauli("z")
    m0 = np.eye(2) - 0.5 * dt * (l.conj().T @ l)
    s = m0.conj().T @ m0 + dt * (l.conj().T @ l)
    b = inv_sqrt_psd(s)
    assert np.linalg.norm(b @ s @ b - np.eye(2)) <= 1e-12


def test_inv_sqrt_property(rng):
    floor = 1e-12
    for dim in (2, 4, 6):
        a = random_hermitian(rng, dim)
        a = a @ a.conj().T + 10 * floor * np.eye(dim)  # PSD, spectrum >= 10*floor
        b = inv_sqrt_psd(a, floor=floor)
        assert np.linalg.norm(b @ a @ b - np.eye(dim)) <= 1e-12 * max(np.linalg.norm(a), 1)


def test_inv_sqrt_rejects_negative():
    with pytest.raises(ValidationError, match="positive semidefinite"):
        inv_sqrt_psd(np.diag([1.0, -1e-3]))


def test_herm_expm_zero_scale():
    assert np.allclose(herm_expm(pauli("z"), 0.0), np.eye(2))


def test_herm_expm_diagonal():
    # exp(scale * diag(-1, 1)) = diag(e^{-scale}, e^{+scale})
    out = herm_expm(pauli("z"), -0.5j * np.pi)
    assert np.allclose(out, np.diag([np.exp(0.5j * np.pi), np.exp(-0.5j * np.pi)]))


def _expm_series(h, scale, nterms=60):
    acc = np.eye(h.shape[0], dtype=complex)
    term = np.eye(h.shape[0], dtype=complex)
    for k in range(1, nterms):
        term = term @ (scale * h) / k
        acc = acc + term
    return acc


def test_herm_expm_sigma_x_series_oracle():
    out = herm_expm(pauli("x"), -0.5j * np.pi)
    assert np.allclose(out, -1j * pauli("x"), atol=1e-12)
    assert np.allclose(out, _expm_series(pauli("x"), -0.5j * np.pi), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(min_value=0.0, max_value=10.0), seed=st.integers(0, 2**31 - 1))
def test_herm_expm_unitarity(t, seed):
    h = random_hermitian(np.random.default_rng(seed), 3)
    u = herm_expm(h, -1j * t)
    v = herm_expm(h, +1j * t)
    assert np.linalg.norm(u @ v - np.eye(3)) <= 1e-10


def test_func_identity():
    n = np.diag([0.0, 1.0, 2.0])
    assert np.allclose(func_of_hermitian(n, lambda x: x), n)


def test_func_cos_number_operator():
    theta = 0.7
    n = np.diag(np.arange(5.0))
    out = func_of_hermitian(n, lambda lam: np.cos(theta * np.sqrt(lam)))
    assert np.allclose(out, np.diag(np.cos(theta * np.sqrt(np.arange(5.0)))))


def test_func_sin_ratio_with_continuous_limit():
    theta = 0.9

    def f(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.full(lam.shape, theta)
        pos = lam > 0
        out[pos] = np.sin(theta * np.sqrt(lam[pos])) / np.sqrt(lam[pos])
        return out

    n = np.diag(np.arange(4.0))
    out = func_of_hermitian(n, f)
    expected = np.diag([theta, np.sin(theta), np.sin(theta * np.sqrt(2)) / np.sqrt(2),
                        np.sin(theta * np.sqrt(3)) / np.sqrt(3)])
    assert np.allclose(out, expected)
    # series oracle: sin(theta sqrt(lam))/sqrt(lam) -> theta - theta^3 lam/6 + ...
    for lam in (1e-6, 1e-4, 1e-2):
        series = theta - theta**3 * lam / 6 + theta**5 * lam**2 / 120
        assert abs(f(np.array([lam]))[0] - series) < 1e-8


def test_func_rejects_non_finite():
    with pytest.raises(ValidationError, match="non-finite"):
        func_of_hermitian(np.diag([0.0, 1.0]), lambda lam: np.log(lam))


def test_hermitize_matches_definition(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.allclose(hermitize(a), 0.5 * (a + a.conj().T))
