"""Regenerates the 12-vertex segmentation fixture and its exhaustive oracle.

Independent of the Rust code: edge weights, unary costs and the labeling
search are recomputed here with numpy over all 3^12 labelings.
"""
import itertools
import json
import math

import numpy as np

EPS = 1e-6
LAMBDA = 1.0

t = (1 + 5 ** 0.5) / 2
base = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
        (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
rng = np.random.default_rng(7)
verts = []
for p in base:
    p = np.array(p, float)
    p = p / np.linalg.norm(p) * (1 + 0.15 * rng.uniform(-1, 1))
    verts.append([float(round(c, 6)) for c in p])
V = np.array(verts)

with open("icosahedron.obj", "w") as f:
    f.write("# perturbed icosahedron\n")
    for v in verts:
        f.write("v %r %r %r\n" % tuple(v))
    for a in faces:
        f.write("f %d %d %d\n" % tuple(i + 1 for i in a))

sig = lambda x: 1 / (1 + math.exp(-x))
classes = {"legs": [], "body": [], "head": []}
for v in V:
    y = v[1]
    noise = rng.uniform(-0.1, 0.1, 3)
    classes["legs"].append(float(round(min(max(sig(-3 * y) + noise[0], 0), 1), 6)))
    classes["body"].append(float(round(min(max(math.exp(-4 * y * y) * 0.8 + noise[1], 0), 1), 6)))
    classes["head"].append(float(round(min(max(sig(3 * y) + noise[2], 0), 1), 6)))

for name, p in classes.items():
    result = {
        "probabilities": p,
        "mask": [x > 0.5 for x in p],
        "transform": {"translation": [0.0, 0.0, 0.0], "scale": 1.0},
        "provenance": {"prompt": name, "seed": 0, "backend_id": "fixture", "config_hash": "", "config": None},
        "loss_history": [],
    }
    with open(f"{name}.json", "w") as f:
        json.dump(result, f, indent=1)

# Renormalized unary costs.
P = np.array([classes["legs"], classes["body"], classes["head"]]).T
P = np.clip(P, 0, None)
s = P.sum(1, keepdims=True)
P = np.where(s > 0, P / np.where(s > 0, s, 1), 1 / 3)
U = -np.log(P + EPS)

# Edge weights: length times (1 + cos) / 2 of the face normals, with the
# normal of a neighbor flipped when the pair is inconsistently oriented.
def normal(fc):
    a, b, c = V[list(fc)]
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n)

edge_faces = {}
for fi, fc in enumerate(faces):
    for i in range(3):
        a, b = fc[i], fc[(i + 1) % 3]
        edge_faces.setdefault((min(a, b), max(a, b)), []).append(fi)
edges = []
for (a, b), fs in sorted(edge_faces.items()):
    length = np.linalg.norm(V[a] - V[b])
    f, g = fs
    def dirn(fc):
        return any(fc[i] == a and fc[(i + 1) % 3] == b for i in range(3))
    sign = -1.0 if dirn(faces[f]) == dirn(faces[g]) else 1.0
    w = length * (1 + sign * normal(faces[f]) @ normal(faces[g])) / 2
    edges.append((a, b, min(max(w, 0.01), 1.0)))

labels = np.array(list(itertools.product(range(3), repeat=12)))
energy = U[np.arange(12), labels].sum(1)
for a, b, w in edges:
    energy += LAMBDA * w * (labels[:, a] != labels[:, b])
order = np.argsort(energy)
best = order[0]
with open("segment_expected.json", "w") as f:
    json.dump({
        "classes": ["legs", "body", "head"],
        "lambda": LAMBDA,
        "labels": labels[best].tolist(),
        "energy": float(energy[best]),
        "runner_up_gap": float(energy[order[1]] - energy[best]),
    }, f, indent=1)
print(labels[best].tolist(), energy[best], energy[order[1]] - energy[best])
