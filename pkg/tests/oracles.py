"""Straight-line scalar reference implementations used as test oracles.

Plain Python loops over lists of floats; nothing here shares code with the package.
"""

import math


def _col(Z, j):
    return [row[j] for row in Z]


def _mean(xs):
    return sum(xs) / len(xs)


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _norm(a):
    return math.sqrt(_dot(a, a))


def loss_con(zs, kappa, eta):
    K, N, D = len(zs), len(zs[0]), len(zs[0][0])
    total = 0.0
    for n in range(N):
        zbar = [sum(zs[a][n][d] for a in range(K)) / K for d in range(D)]
        row = 0.0
        for a in range(K):
            row += kappa * math.sqrt(sum((zs[a][n][d] - zbar[d]) ** 2 for d in range(D)))
            for b in range(K):
                if b != a:
                    cos = _dot(zs[a][n], zs[b][n]) / (_norm(zs[a][n]) * _norm(zs[b][n]))
                    row += eta * (1.0 - cos)
        total += row / K
    return total / N


def variance(Z, gamma, eps):
    N, D = len(Z), len(Z[0])
    acc = 0.0
    for j in range(D):
        c = _col(Z, j)
        m = _mean(c)
        var = sum((x - m) ** 2 for x in c) / (N - 1)
        acc += max(0.0, gamma - math.sqrt(var + eps))
    return acc / D


def covariance(Z):
    N, D = len(Z), len(Z[0])
    means = [_mean(_col(Z, j)) for j in range(D)]
    cov = [[0.0] * D for _ in range(D)]
    for i in range(D):
        for j in range(D):
            cov[i][j] = sum((Z[n][i] - means[i]) * (Z[n][j] - means[j]) for n in range(N)) / (N - 1)
    return cov


def autocov(Z):
    D = len(Z[0])
    cov = covariance(Z)
    return sum(cov[i][j] ** 2 for i in range(D) for j in range(D) if i != j) / D


def _standardize(Z):
    N, D = len(Z), len(Z[0])
    out = [[0.0] * D for _ in range(N)]
    for j in range(D):
        c = _col(Z, j)
        m = _mean(c)
        centered = [x - m for x in c]
        nrm = _norm(centered)
        for n in range(N):
            out[n][j] = centered[n] / nrm
    return out


def xcorr(Za, Zb):
    A, B = _standardize(Za), _standardize(Zb)
    N, D = len(A), len(A[0])
    acc = 0.0
    for i in range(D):
        for j in range(D):
            if i != j:
                acc += sum(A[n][i] * B[n][j] for n in range(N)) ** 2
    return acc


def loss_sep(zs, w):
    acc = 0.0
    for a in range(len(zs)):
        acc += w["mu"] * variance(zs[a], w["gamma"], w["epsilon"])
        acc += w.get("autocov", 1.0) * autocov(zs[a])
        for b in range(a + 1, len(zs)):
            acc += w["lam"] * xcorr(zs[a], zs[b])
    return acc


def loss_fd(zs, w):
    return loss_con(zs, w["kappa"], w["eta"]) + loss_sep(zs, w)


def loss_total(sets, w):
    """``sets`` is a list of ``(z_t, z_s, z)`` triples, one per copy."""
    inst = loss_fd([s[2] for s in sets], w)
    spat = loss_fd([s[1] for s in sets], w)
    temp = loss_fd([s[0] for s in sets], w)
    return inst + w["tau"] * (spat + temp)


def adam_step(theta, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, t=1, m=0.0, v=0.0):
    """One coupled-L2 Adam update of a scalar."""
    g = grad + weight_decay * theta
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return theta - lr * mhat / (math.sqrt(vhat) + eps)


def conv1d_same(rows, kernel, causal=False):
    """Depthwise sliding-window dot product along rows; ``kernel[c][k]`` per channel."""
    L, C, k = len(rows), len(rows[0]), len(kernel[0])
    left = k - 1 if causal else (k - 1) // 2
    out = [[0.0] * C for _ in range(L)]
    for i in range(L):
        for c in range(C):
            acc = 0.0
            for q in range(k):
                src = i + q - left
                if 0 <= src < L:
                    acc += kernel[c][q] * rows[src][c]
            out[i][c] = acc
    return out


def token_mix(F, W1, W2):
    """``F_h = ReLU(F^T W1) W2 + F^T`` returned as ``[L][C]``; ``F`` is ``[L][C]``."""
    L, C = len(F), len(F[0])
    out = [[0.0] * C for _ in range(L)]
    for c in range(C):
        hidden = [max(0.0, sum(F[i][c] * W1[i][j] for i in range(L))) for j in range(L)]
        for j in range(L):
            out[j][c] = sum(hidden[i] * W2[i][j] for i in range(L)) + F[j][c]
    return out


def resample(frames, T):
    """Linear interpolation at ``i*(n-1)/(T-1)`` of a list of flat frames."""
    n = len(frames)
    if T == 1 or n == 1:
        return [list(frames[0]) for _ in range(T)]
    out = []
    for i in range(T):
        pos = i * (n - 1) / (T - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n - 1)
        w = pos - lo
        out.append([(1 - w) * a + w * b for a, b in zip(frames[lo], frames[hi])])
    return out
