"""Independent reference computations used as test oracles.

Plain Python loops and math.fsum only; nothing here imports the package.
"""
import math


def rmse(a, p):
    return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, p)) / len(a))


def r2(a, p, eps=1e-12):
    mu = math.fsum(a) / len(a)
    ss_res = math.fsum((x - y) ** 2 for x, y in zip(a, p))
    if ss_res == 0:
        return 1.0
    ss_tot = math.fsum((x - mu) ** 2 for x in a)
    return 1.0 - ss_res / (ss_tot + eps)


def pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def enumerate_windows(n, w, h):
    """Every start that is a multiple of h and whose input+target fits in n."""
    starts = []
    s = 0
    while s + w + h <= n:
        starts.append(s)
        s += h
    return starts


def lstm_param_count(input_dim, hidden, horizon):
    # four gates, one bias each, then a dense head
    return 4 * (input_dim * hidden + hidden * hidden + hidden) + (hidden * horizon + horizon)


def sample_std(values):
    n = len(values)
    mu = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (n - 1))
