"""Independent reference implementations used as test oracles.

Deliberately naive: explicit loops, np.linalg.solve/inv, no shared code
with the package beyond plain numpy.
"""

import numpy as np


def rbf(a, b, amplitude=1.0, length_scale=1.0):
    out = np.empty((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            out[i, j] = amplitude * np.exp(-np.sum((a[i] - b[j]) ** 2) / (2 * length_scale ** 2))
    return out


def numerical_hessian(f, x, step=1e-4):
    """Central second differences of a scalar function of a flat vector."""
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            def at(di, dj):
                z = x.copy()
                z[i] += di
                z[j] += dj
                return f(z)
            h = (at(step, step) - at(step, -step) - at(-step, step) + at(-step, -step)) / (4 * step * step)
            H[i, j] = H[j, i] = h
    return H


def log_posterior_binary(beta, phi, y, tau):
    g = phi @ beta
    return -np.sum(y * g - np.logaddexp(0.0, g)) + beta @ beta / (2 * tau)


def log_posterior_multiclass(beta_flat, phi, y, tau, k):
    beta = beta_flat.reshape(phi.shape[1], k)
    g = phi @ beta
    lse = np.log(np.sum(np.exp(g - g.max(1, keepdims=True)), 1)) + g.max(1)
    return -np.sum(g[np.arange(len(y)), y] - lse) + beta_flat @ beta_flat / (2 * tau)


def log_posterior_regression(beta, phi, y, tau):
    r = y - phi @ beta
    return 0.5 * r @ r + beta @ beta / (2 * tau)


def dual_posterior(phi, y, phi_test, tau):
    """Kernel form with ridge r = 1/tau: m = k*^T (K + r I)^-1 y, v = (k - k*^T (K + r I)^-1 k*) / r."""
    r = 1.0 / tau
    K = phi @ phi.T
    A = np.linalg.inv(K + r * np.eye(len(K)))
    mean = np.empty(len(phi_test))
    var = np.empty(len(phi_test))
    for t, f in enumerate(phi_test):
        ks = phi @ f
        mean[t] = ks @ A @ y
        var[t] = (f @ f - ks @ A @ ks) / r
    return mean, var


def ece_brute(probs, labels, bins=15):
    n, k = probs.shape
    lo = 1.0 / k
    width = (1.0 - lo) / bins
    total = 0.0
    for m in range(bins):
        members = []
        for i in range(n):
            c = probs[i].max()
            # bin m covers (lo + m w, lo + (m+1) w]; confidence exactly 1/K joins bin 0
            left = lo + m * width
            right = lo + (m + 1) * width if m < bins - 1 else 1.0
            if (left < c <= right) or (m == 0 and c <= left):
                members.append(i)
        if members:
            acc = np.mean([probs[i].argmax() == labels[i] for i in members])
            conf = np.mean([probs[i].max() for i in members])
            total += len(members) / n * abs(acc - conf)
    return total


def auroc_brute(ind, ood):
    s = 0.0
    for a in ind:
        for b in ood:
            s += 1.0 if a > b else 0.5 if a == b else 0.0
    return s / (len(ind) * len(ood))


def aupr_brute(ind, ood):
    """Average precision with OOD positive, thresholding uncertainty = -confidence."""
    unc = np.concatenate([-np.asarray(ind), -np.asarray(ood)])
    pos = np.concatenate([np.zeros(len(ind)), np.ones(len(ood))])
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(unc), reverse=True):
        sel = unc >= t
        tp = np.sum(pos[sel])
        precision = tp / np.sum(sel)
        recall = tp / len(ood)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap
