"""Scalar-loop reference implementations used as test oracles.

Everything here works on plain nested loops over float64 numpy arrays and
never touches the autodiff engine.
"""

import math

import numpy as np


def relu(v):
    return v if v > 0 else 0.0


def leaky(v, slope=0.01):
    return v if v > 0 else slope * v


def elu(v):
    return v if v > 0 else math.exp(v) - 1.0


def gelu(v):
    return 0.5 * v * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v**3)))


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_list(vals):
    m = max(vals)
    ex = [math.exp(v - m) for v in vals]
    tot = sum(ex)
    return [e / tot for e in ex]


def layer_norm_vec(v, gain, shift, eps=1e-5):
    n = len(v)
    mu = sum(v) / n
    var = sum((x - mu) ** 2 for x in v) / n
    return [(v[i] - mu) / math.sqrt(var + eps) * gain[i] + shift[i] for i in range(n)]


def correspondence(E1, E2):
    prod = matmul(E1, E2)
    n = prod.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        row = softmax_list([relu(prod[i, j]) for j in range(n)])
        for j in range(n):
            out[i, j] = row[j] + (1.0 if i == j else 0.0)
    return out


def top_k(row, i, k, pool):
    cands = [j for j in pool if j != i]
    cands.sort(key=lambda j: (-row[j], j))
    return cands[:k]


def ia(x, E1, E2, W, score_w, score_b, missing, k):
    """Recovered features for one sample ``x`` (N x C)."""
    n, _ = x.shape
    cout = W.shape[1]
    missing = set(int(m) for m in missing)
    normal = [j for j in range(n) if j not in missing]
    xz = np.array(x, dtype=float)
    for m in missing:
        xz[m, :] = 0.0
    proj = matmul(xz, W)
    A = correspondence(E1, E2)
    out = np.zeros((n, cout))
    for i in range(n):
        if i not in missing or not normal:
            for c in range(cout):
                out[i, c] = relu(proj[i, c])
            continue
        nb = top_k(A[i], i, k, normal)
        logits = []
        for j in nb:
            s = score_b[0]
            for c in range(cout):
                s += proj[j, c] * score_w[c, 0]
            logits.append(leaky(s))
        alpha = softmax_list(logits)
        for c in range(cout):
            out[i, c] = relu(sum(alpha[t] * proj[j, c] for t, j in enumerate(nb)))
    return out


def fuse(x_ia, E_A, W_x, W_e, fc_w, fc_b):
    a = matmul(x_ia, W_x)
    b = matmul(E_A, W_e)
    cat = np.concatenate([a, b], axis=1)
    out = matmul(cat, fc_w)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] += fc_b[j]
    return out


def adaptive(E):
    g = matmul(E, E.T)
    n = g.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        row = softmax_list([gelu(g[i, j]) for j in range(n)])
        for j in range(n):
            out[i, j] = row[j] + (1.0 if i == j else 0.0)
    return out


def agcn(x, A_pre, A_adap, W1, b1, W2, b2, gain=None, shift=None, use_pg=True, use_ag=True, norm=True):
    n = x.shape[0]
    cout = W1.shape[1]
    z = np.zeros((n, cout))
    if use_pg:
        z += matmul(matmul(A_pre, x), W1)
    if use_ag:
        z += matmul(matmul(A_adap, x), W2)
    for i in range(n):
        for c in range(cout):
            if b1 is not None:
                z[i, c] += b1[c]
            if b2 is not None:
                z[i, c] += b2[c]
    if not norm:
        return z
    gain = np.ones(cout) if gain is None else gain
    shift = np.zeros(cout) if shift is None else shift
    return np.array([layer_norm_vec(list(z[i]), gain, shift) for i in range(n)])


def cell(P, x, c_prev, A_pre, missing, k, use_ia=True, use_pg=True, use_ag=True, sigmoid_gates=False):
    """One recurrent step for one sample; ``P`` maps parameter names to arrays."""
    if use_ia:
        x_ia = ia(x, P["ia.E1"], P["ia.E2"], P["ia.W"], P["ia.score_w"], P["ia.score_b"], missing, k)
    else:
        xz = np.array(x, dtype=float)
        for m in missing:
            xz[m, :] = 0.0
        x_ia = np.vectorize(relu)(matmul(xz, P["ia.W"]))
    A_adap = None
    if use_ag:
        E = fuse(x_ia, P["ag.E_A"], P["ag.W_x"], P["ag.W_e"], P["ag.fc_w"], P["ag.fc_b"])
        A_adap = adaptive(E)
    squash = sigmoid if sigmoid_gates else gelu
    out = {}
    for g in ("f", "r", "c"):
        z = agcn(
            x_ia, A_pre, A_adap, P[f"{g}.W1"], P.get(f"{g}.b1"), P[f"{g}.W2"], P.get(f"{g}.b2"),
            P[f"{g}.ln_gain"], P[f"{g}.ln_bias"], use_pg=use_pg, use_ag=use_ag,
        )
        out[g] = z if g == "c" else np.vectorize(squash)(z)
    f, r, cand = out["f"], out["r"], out["c"]
    n, h = cand.shape
    c_t = np.zeros((n, h))
    h_t = np.zeros((n, h))
    for i in range(n):
        for j in range(h):
            c_t[i, j] = (1 - f[i, j]) * cand[i, j] + f[i, j] * c_prev[i, j]
            h_t[i, j] = r[i, j] * elu(c_t[i, j]) + (1 - r[i, j]) * x_ia[i, j]
    return h_t, c_t


def model_forward(params, cfg, A_pre, x, missing, k):
    """Full forward for one sample ``x`` (N x H x C) -> N x L."""
    n, hist, _ = x.shape
    seq = [x[:, t, :] for t in range(hist)]
    lasts = []
    for l in range(cfg.n_layers):
        P = {key[len(f"layers.{l}."):]: v for key, v in params.items() if key.startswith(f"layers.{l}.")}
        c = np.zeros((n, cfg.hidden))
        new = []
        for x_t in seq:
            h_t, c = cell(P, x_t, c, A_pre, missing, k, cfg.use_ia, cfg.use_pg, cfg.use_ag, cfg.sigmoid_gates)
            new.append(h_t)
        seq = new
        lasts.append(seq[-1])
    h_all = np.concatenate(lasts, axis=1)
    hid = matmul(h_all, params["decoder.W1"])
    for i in range(n):
        for j in range(hid.shape[1]):
            hid[i, j] = relu(hid[i, j] + params["decoder.b1"][j])
    out = matmul(hid, params["decoder.W2"])
    for i in range(n):
        for j in range(out.shape[1]):
            out[i, j] += params["decoder.b2"][j]
    return out
