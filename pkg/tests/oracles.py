"""Naive scalar-loop reference implementations.

These deliberately avoid numpy reductions so the vectorised code is checked
against an independent route.
"""

import math


def flat(x):
    if hasattr(x, "tolist"):
        x = x.tolist()
    if isinstance(x, (list, tuple)):
        out = []
        for v in x:
            out.extend(flat(v))
        return out
    return [float(x)]


def mse(a, b):
    a, b = flat(a), flat(b)
    s = 0.0
    for x, y in zip(a, b):
        s += (x - y) ** 2
    return s / len(a)


def mean_reference(preds):
    """preds: nested list [B][M][...]; returns [B] flat lists."""
    out = []
    for sample in preds:
        heads = [flat(h) for h in sample]
        M = len(heads)
        out.append([sum(h[j] for h in heads) / M for j in range(len(heads[0]))])
    return out


def sample_uncertainty_regression(preds):
    refs = mean_reference(preds)
    out = []
    for sample, ref in zip(preds, refs):
        total = 0.0
        for h in sample:
            total += mse(flat(h), ref)
        out.append(total / len(sample))
    return out


def sample_uncertainty_classification(preds):
    out = []
    for sample in preds:
        heads = [flat(h) for h in sample]
        M, C = len(heads), len(heads[0])
        acc = 0.0
        for j in range(C):
            mean = 0.0
            for m in range(M):
                mean += heads[m][j]
            mean /= M
            var = 0.0
            for m in range(M):
                var += (mean - heads[m][j]) ** 2
            acc += var / M
        out.append(acc / C)
    return out


def long_tailed_weights(u):
    top = max(u)
    if top < 1e-12:
        return [1.0] * len(u)
    return [1.0 / (x / top + 1.0) for x in u]


def head_uncertainty_regression(preds):
    refs = mean_reference(preds)
    M = len(preds[0])
    out = []
    for m in range(M):
        total = 0.0
        for sample, ref in zip(preds, refs):
            total += mse(flat(sample[m]), ref)
        out.append(total / len(preds))
    return out


def argmax(v):
    best, idx = v[0], 0
    for j, x in enumerate(v):
        if x > best:
            best, idx = x, j
    return idx


def head_uncertainty_classification(preds):
    refs = mean_reference(preds)
    M = len(preds[0])
    out = []
    for m in range(M):
        count = 0
        for sample, ref in zip(preds, refs):
            if argmax(flat(sample[m])) != argmax(ref):
                count += 1
        out.append(count / len(preds))
    return out


def softmax(v):
    top = max(v)
    e = [math.exp(x - top) for x in v]
    s = sum(e)
    return [x / s for x in e]


def ensemble_prediction(preds, w, tau, normalize=False):
    """Returns (ensemble [B] flat lists, mask [B])."""
    out, mask = [], []
    for sample in preds:
        heads = [flat(h) for h in sample]
        M, n = len(heads), len(heads[0])
        acc = [0.0] * n
        mass, any_pass = 0.0, False
        for m in range(M):
            weighted = [w[m] * x for x in heads[m]]
            if max(weighted) > tau:
                any_pass = True
                mass += w[m]
                for j in range(n):
                    acc[j] += weighted[j]
        acc = [x / M for x in acc]
        if normalize and any_pass:
            acc = [x / (mass / M) for x in acc]
        out.append(acc)
        mask.append(any_pass)
    return out, mask


def pearson(u, c):
    n = len(u)
    mu, mc = sum(u) / n, sum(c) / n
    num = sum((a - mu) * (b - mc) for a, b in zip(u, c))
    du = math.sqrt(sum((a - mu) ** 2 for a in u))
    dc = math.sqrt(sum((b - mc) ** 2 for b in c))
    return num / (du * dc)
