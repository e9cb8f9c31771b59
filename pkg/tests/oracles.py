"""Brute-force reference implementations, independent of the FFT code paths."""
import numpy as np


def dft_matrix(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n)


def naive_modes(n):
    m = np.arange(n)
    return 2 * np.pi * np.where(m <= n // 2, m, m - n) / n


def naive_derivative(f, order):
    """Differentiate by an O(n^2) DFT, multiplying mode m by (i omega_m)^order.

    For odd ``order`` the Nyquist multiplier is zeroed, matching the real-output
    convention.
    """
    f = np.asarray(f, dtype=float)
    n = len(f)
    F = dft_matrix(n)
    coef = F @ f
    mult = (1j * naive_modes(n)) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0
    return np.real(np.conj(F) @ (mult * coef)) / n


def verlet_mode_matrix(theta):
    """Per-mode transfer matrix of undamped velocity Verlet on (u, v/omega)."""
    return np.array([[1 - theta**2 / 2, theta], [-theta * (1 - theta**2 / 4), 1 - theta**2 / 2]])


def euler_mode_matrix(theta):
    return np.array([[1.0, theta], [-theta, 1.0]])


def laplacian_matrix(n):
    """Dense second-derivative operator built column by column from the naive DFT."""
    return np.column_stack([naive_derivative(e, 2) for e in np.eye(n)])


def dict_gradcheck(loss, params, analytic, eps=1e-5, order=2):
    """Max relative error between ``analytic`` and central differences of ``loss(params)``.

    ``params`` and ``analytic`` map names to arrays of matching shapes.
    """
    from wavefield.adjoint import central_differences, relative_error

    names = sorted(params)
    shapes = [np.shape(params[k]) for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    x0 = np.concatenate([np.ravel(params[k]) for k in names])

    def unflat(x):
        parts = np.split(x, np.cumsum(sizes)[:-1])
        return {k: p.reshape(s) for k, p, s in zip(names, parts, shapes)}

    numeric = central_differences(lambda x: loss(unflat(x)), x0, eps, order)
    exact = np.concatenate([np.ravel(analytic[k]) for k in names])
    return float(np.max(relative_error(exact, numeric)))
