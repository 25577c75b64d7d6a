"""Reference trace for one scripted training iteration, computed with torch
(float64 autograd). Writes trace.json next to this file.

Toy: 4 samples, 2 input features, 2 workers. Student BN is per worker, the
teacher uses momentum BN against an initialized history. All weights are
given explicitly so the C++ side does not need to reproduce any RNG.
"""

import json
import pathlib

import numpy as np
import torch

torch.set_default_dtype(torch.float64)

EPS = 1e-5
LR = 0.05
SGD_MOMENTUM = 0.9
WD = 1e-4
ALPHA = 0.6
M = 0.25
WORKERS = 2

# layer: (in, out, bn, relu)
NETS = {
    "encoder": [(2, 3, True, True)],
    "projector": [(3, 3, True, True), (3, 2, False, False)],
    "predictor": [(2, 2, True, True), (2, 2, False, False)],
}
TEACHER_NETS = ["encoder", "projector"]

rng = np.random.default_rng(20240607)


def rnd(*shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).round(6)


def make_params():
    out = {}
    for net, layers in NETS.items():
        for li, (i, o, bn, _) in enumerate(layers):
            base = f"{net}.{li}"
            out[base + ".weight"] = rnd(i, o)
            out[base + ".bias"] = rnd(1, o, lo=-0.2, hi=0.2)
            if bn:
                out[base + ".bn.gamma"] = rnd(1, o, lo=0.5, hi=1.5)
                out[base + ".bn.beta"] = rnd(1, o, lo=-0.3, hi=0.3)
    return out


student0 = make_params()
teacher0 = {k: (v + rnd(*v.shape, lo=-0.1, hi=0.1)).round(6) for k, v in student0.items() if k.split(".")[0] in TEACHER_NETS}
history0 = {}
for net in TEACHER_NETS:
    for li, (_, o, bn, _) in enumerate(NETS[net]):
        if bn:
            history0[f"{net}.{li}"] = {"mean": rnd(o, lo=-0.5, hi=0.5), "var": rnd(o, lo=0.3, hi=1.5)}

v = rnd(4, 2, lo=-2.0, hi=2.0)
v2 = rnd(4, 2, lo=-2.0, hi=2.0)


def excluded(name):
    return not name.endswith(".weight")


def stats(x):
    return x.mean(dim=0), x.var(dim=0, unbiased=False)


def normalize(x, mu, var, gamma, beta):
    return (x - mu) / torch.sqrt(var + EPS) * gamma + beta


def student_forward(P, net, x):
    h = x
    for li, (_, _, bn, relu) in enumerate(NETS[net]):
        base = f"{net}.{li}"
        h = h @ P[base + ".weight"] + P[base + ".bias"]
        if bn:
            per = h.shape[0] // WORKERS
            parts = []
            for w in range(WORKERS):
                s = h[w * per:(w + 1) * per]
                mu, var = stats(s)
                parts.append(normalize(s, mu, var, P[base + ".bn.gamma"], P[base + ".bn.beta"]))
            h = torch.cat(parts)
        if relu:
            h = torch.relu(h)
    return h


def teacher_forward(T, hist, pending, trace, view, net, x):
    h = x
    for li, (_, _, bn, relu) in enumerate(NETS[net]):
        base = f"{net}.{li}"
        h = h @ T[base + ".weight"] + T[base + ".bias"]
        if bn:
            per = h.shape[0] // WORKERS
            parts, means, variances = [], [], []
            for w in range(WORKERS):
                s = h[w * per:(w + 1) * per]
                mu, var = stats(s)
                used_mu = ALPHA * mu + (1 - ALPHA) * hist[base]["mean"]
                used_var = ALPHA * var + (1 - ALPHA) * hist[base]["var"]
                trace.append({
                    "view": view, "layer": base, "worker": w,
                    "batch_mean": mu.tolist(), "batch_var": var.tolist(),
                    "used_mean": used_mu.tolist(), "used_var": used_var.tolist(),
                })
                parts.append(normalize(s, used_mu, used_var, T[base + ".bn.gamma"], T[base + ".bn.beta"]))
                means.append(mu)
                variances.append(var)
            pending.setdefault(base, []).append((sum(means) / WORKERS, sum(variances) / WORKERS))
            h = torch.cat(parts)
        if relu:
            h = torch.relu(h)
    return h


def l2n(x):
    return x / torch.clamp(x.norm(dim=1, keepdim=True), min=1e-12)


def byol(p, z):
    d = l2n(p) - l2n(z)
    return (d * d).sum(dim=1).mean()


P = {k: torch.tensor(val, requires_grad=True) for k, val in student0.items()}
T = {k: torch.tensor(val) for k, val in teacher0.items()}
H = {k: {"mean": torch.tensor(s["mean"]), "var": torch.tensor(s["var"])} for k, s in history0.items()}
tv, tv2 = torch.tensor(v), torch.tensor(v2)

trace, pending = [], {}


def student(x):
    z = student_forward(P, "projector", student_forward(P, "encoder", x))
    return student_forward(P, "predictor", z)


def teacher(x, view):
    with torch.no_grad():
        y = teacher_forward(T, H, pending, trace, view, "encoder", x)
        return teacher_forward(T, H, pending, trace, view, "projector", y)


p1 = student(tv)
z1 = teacher(tv2, 1)
l1 = byol(p1, z1)
p2 = student(tv2)
z2 = teacher(tv, 0)
l2 = byol(p2, z2)
(l1 + l2).backward()

new_student, deltas = {}, {}
with torch.no_grad():
    for k, w in P.items():
        g = w.grad.clone()
        if not excluded(k):
            g = g + WD * w
        buf = g  # zero buffer before the first step
        new_w = w - LR * buf
        new_student[k] = new_w
        deltas[k] = (new_w - w).tolist()

    drift2 = 0.0
    new_hist = {}
    for base, views in pending.items():
        avg_mu = sum(m for m, _ in views) / len(views)
        avg_var = sum(s for _, s in views) / len(views)
        nm = ALPHA * avg_mu + (1 - ALPHA) * H[base]["mean"]
        nv = ALPHA * avg_var + (1 - ALPHA) * H[base]["var"]
        drift2 += float(((nm - H[base]["mean"]) ** 2).sum() + ((nv - H[base]["var"]) ** 2).sum())
        new_hist[base] = {"mean": nm.tolist(), "var": nv.tolist()}

    new_teacher = {k: ((1 - M) * T[k] + M * new_student[k]).tolist() for k in T}

out = {
    "setup": {
        "eps": EPS, "lr": LR, "sgd_momentum": SGD_MOMENTUM, "weight_decay": WD,
        "alpha": ALPHA, "m": M, "workers": WORKERS,
        "nets": {net: [{"in": i, "out": o, "bn": bn, "relu": r} for (i, o, bn, r) in layers] for net, layers in NETS.items()},
        "student": {k: val.tolist() for k, val in student0.items()},
        "teacher": {k: val.tolist() for k, val in teacher0.items()},
        "history": {k: {"mean": s["mean"].tolist(), "var": s["var"].tolist()} for k, s in history0.items()},
        "v": v.tolist(), "v2": v2.tolist(),
    },
    "expected": {
        "teacher_stats": trace,
        "L1": l1.item(), "L2": l2.item(),
        "student_delta": deltas,
        "history": new_hist,
        "hist_drift": drift2 ** 0.5,
        "teacher_after": new_teacher,
    },
}

path = pathlib.Path(__file__).with_name("trace.json")
path.write_text(json.dumps(out, indent=1) + "\n")
print(f"wrote {path}: L1={l1.item():.12f} L2={l2.item():.12f}")
