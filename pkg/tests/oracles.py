"""Reference computations that share no code with the package.

Each oracle is written the slow, obvious way (explicit loops, inertia counts,
finite differences) so that agreement with the library is meaningful.
"""
import numpy as np


def negative_inertia(s, x):
    """Number of eigenvalues of symmetric ``s`` below ``x`` (LDL^T pivots, Sylvester's law)."""
    a = np.array(s, dtype=np.float64) - x * np.eye(len(s))
    n = len(a)
    count = 0
    for k in range(n):
        d = a[k, k]
        if d == 0.0:
            d = 1e-300
        if d < 0:
            count += 1
        if k + 1 < n:
            col = a[k + 1:, k] / d
            a[k + 1:, k + 1:] -= np.outer(col, a[k, k + 1:])
    return count


def min_eig_bracket(s, iters=200):
    """Smallest eigenvalue by bisection on the inertia count."""
    r = float(np.abs(s).sum())
    lo, hi = -r - 1.0, r + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if negative_inertia(s, mid) >= 1:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def max_eig_bracket(s, iters=200):
    return -min_eig_bracket(-np.asarray(s, dtype=np.float64), iters)


def direct_fir(kernels, bias, w):
    """y[:, t] = sum_j K_j w[:, t - j] + bias with zeros before t = 0."""
    c_out = kernels[0].shape[0]
    n = w.shape[1]
    y = np.zeros((c_out, n))
    for t in range(n):
        acc = np.array(bias, dtype=np.float64).copy()
        for j, k in enumerate(kernels):
            if t - j >= 0:
                for o in range(c_out):
                    for i in range(w.shape[0]):
                        acc[o] += k[o, i] * w[i, t - j]
        y[:, t] = acc
    return y


def toeplitz_loops(kernels, n):
    """Channel-major (row = o*n + t, col = i*n + s) matrix of the front-padded convolution."""
    c_out, c_in = kernels[0].shape
    m = np.zeros((c_out * n, c_in * n))
    for t in range(n):
        for s in range(n):
            j = t - s
            if 0 <= j < len(kernels):
                for o in range(c_out):
                    for i in range(c_in):
                        m[o * n + t, i * n + s] = kernels[j][o, i]
    return m


def avg_pool_matrix(size, n_windows=1):
    m = np.zeros((n_windows, size * n_windows))
    for k in range(n_windows):
        m[k, k * size:(k + 1) * size] = 1.0 / size
    return m


def fd_gradient(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g.ravel()[i] = (f(up.reshape(x.shape)) - f(dn.reshape(x.shape))) / (2 * h)
    return g


def nearest_centroid_accuracy(signals, labels):
    x = signals.reshape(len(signals), -1)
    classes = np.unique(labels)
    cents = np.stack([x[labels == c].mean(axis=0) for c in classes])
    d = ((x[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(classes[d.argmin(axis=1)] == labels))


def random_spd(rng, n, shift=1.0):
    a = rng.normal(size=(n, n))
    return a.T @ a + shift * np.eye(n)


def shift_pair(ell, c):
    """Block shift A and last-block selector B built entry by entry."""
    nx = (ell - 1) * c
    a = np.zeros((nx, nx))
    for i in range(nx - c):
        a[i, i + c] = 1.0
    b = np.zeros((nx, c))
    for j in range(c):
        if nx:
            b[nx - c + j, j] = 1.0
    return a, b


def lmi_conv_blocks(a, b, chat, p, lam, q_prev, q):
    """3x3 block matrix written out term by term."""
    nx = a.shape[0]
    c_mat, d_mat = chat[:, :nx], chat[:, nx:]
    L = np.diag(lam)
    return np.block([
        [p - a.T @ p @ a, -a.T @ p @ b, -c_mat.T @ L],
        [-b.T @ p @ a, q_prev - b.T @ p @ b, -d_mat.T @ L],
        [-L @ c_mat, -L @ d_mat, 2 * L - q],
    ])


def lmi_dense_blocks(w, lam, q_prev, q):
    L = np.diag(lam)
    return np.block([[q_prev, -w.T @ L], [-L @ w, 2 * L - q]])


def lmi_last_blocks(w, q_prev):
    return np.block([[q_prev, -w.T], [-w, np.eye(w.shape[0])]])


def min_eig(s):
    s = 0.5 * (s + s.T)
    return float(np.linalg.eigvalsh(s)[0])
