"""Independent recomputation of the frozen values in tests/fixtures.rs.

Reads tests/fixtures/params.json and prints every fixture value with full
precision. Uses numpy only; gradients are derived by hand per sample.

    python3 crates/core/tests/oracles/fixtures.py
"""

import json
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).resolve().parent
P = json.loads((HERE.parent / "fixtures" / "params.json").read_text())

ACT = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda z: np.exp(-z) / (1.0 + np.exp(-z)) ** 2),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
}


def layers(p):
    ws = [np.array(w["data"]).reshape(w["rows"], w["cols"]) for w in p["weights"]]
    bs = [np.array(b) for b in p["biases"]]
    return ws, bs, p["activations"]


def forward(p, x):
    ws, bs, acts = layers(p)
    a = np.array(x, dtype=float)
    pres, posts = [], [a]
    for w, b, name in zip(ws, bs, acts):
        z = w @ a + b
        a = ACT[name][0](z)
        pres.append(z)
        posts.append(a)
    return pres, posts


def grad(p, x, dout):
    """Gradient of dout . f(x) w.r.t. every weight and bias (flat order)."""
    ws, _, acts = layers(p)
    pres, posts = forward(p, x)
    delta = np.array(dout, dtype=float)
    gw, gb = [None] * len(ws), [None] * len(ws)
    for l in reversed(range(len(ws))):
        delta = delta * ACT[acts[l]][1](pres[l])
        gw[l] = np.outer(delta, posts[l])
        gb[l] = delta.copy()
        delta = ws[l].T @ delta
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])


def flat(p):
    ws, bs, _ = layers(p)
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(ws, bs)])


def loss(p, s):
    out = forward(p, s["c"])[1][-1]
    return 0.5 * np.mean((out - np.array(s["y"])) ** 2)


def loss_grad(p, s):
    out = forward(p, s["c"])[1][-1]
    return grad(p, s["c"], (out - np.array(s["y"])) / len(out))


def show(name, values):
    values = np.atleast_1d(values)
    print(f"{name} = [" + ", ".join(repr(float(v)) for v in values) + "]")


# 2-4-1 tanh net at [0.5, -0.5]
net = P["net_241"]
show("NET_241_OUTPUT", forward(net["params"], net["input"])[1][-1])

# proxy loss
px = P["proxy_42"]
show("PROXY_42_LOSS", loss(px["params"], px["sample"][0]))

# one joint step: per-sample gradients summed explicitly
j = P["joint_11"]
theta = flat(j["params"])
g_val = sum(loss_grad(j["params"], s) for s in j["val"]) / len(j["val"])
g_train = np.zeros_like(theta)
for w, s in zip(j["weights"], j["train"]):
    g_train += w * loss_grad(j["params"], s)
show("JOINT_11_THETA", theta - j["beta"] * (g_val + g_train))
show("JOINT_11_THETA_REF", theta - j["beta"] * g_train)

# seed-13 rater composition
r = P["rater_13"]
feats = np.array([s["c"] + s["y"] for s in r["batch"]])
raw = np.array([forward(r["instance"], f)[1][-1][0] for f in feats])
e = np.exp(raw - raw.max())
soft = e / e.sum()
stat = np.concatenate([feats.mean(axis=0), feats.var(axis=0)])
b = forward(r["group"], stat)[1][-1][0]
show("RATER_13_RAW", raw)
show("RATER_13_BATCH_WEIGHT", b)
show("RATER_13_FINAL", soft * b)
