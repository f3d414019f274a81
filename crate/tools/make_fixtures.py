"""Writes the fixture networks and datasets under crates/core/fixtures.

Weights are trained here, offline, with torch in float32 and a fixed seed.
The Rust side only ever loads the files this script writes.

    python3 tools/make_fixtures.py
"""

import hashlib
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"
SEED = 20190325


def f32_bytes(values):
    return np.asarray(values, dtype="<f4").tobytes()


def write_dataset(path, samples, labels, classes):
    samples = np.asarray(samples, dtype="<f4")
    shape = samples.shape[1:]
    header = b"SEUDSET1" + struct.pack("<I", len(shape))
    header += b"".join(struct.pack("<I", d) for d in shape)
    header += struct.pack("<II", len(labels), classes)
    path.write_bytes(header + samples.tobytes() + np.asarray(labels, dtype=np.uint8).tobytes())


def write_model(stem, input_shape, layers, notes):
    """layers: list of (type, hyperparameters dict, weights or None, biases or None)."""
    blob = b""
    body = []
    offset = 0
    for kind, hyper, w, b in layers:
        lines = ["", "[[layers]]", f'type = "{kind}"']
        lines += [f"{k} = {v}" for k, v in hyper.items()]
        if w is not None:
            w = np.asarray(w, dtype=np.float32).ravel()
            b = np.asarray(b, dtype=np.float32).ravel()
            lines.append(f"weights = {{ offset = {offset}, count = {w.size} }}")
            offset += w.size
            lines.append(f"biases = {{ offset = {offset}, count = {b.size} }}")
            offset += b.size
            blob += f32_bytes(w) + f32_bytes(b)
        body += lines
    head = [f"# {n}" for n in notes]
    head += [
        "format_version = 1",
        f"input_shape = {list(input_shape)}",
        f"blob_words = {len(blob) // 4}",
        f'blob_sha256 = "{hashlib.sha256(blob).hexdigest()}"',
    ]
    (OUT / f"{stem}.manifest").write_text("\n".join(head + body) + "\n")
    (OUT / f"{stem}.bin").write_bytes(blob)


def accuracy(logits, labels):
    return float((np.argmax(logits, axis=1) == labels).mean())


def train(model, x, y, steps, lr):
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        loss = nn.functional.cross_entropy(model(x), y)
        loss.backward()
        opt.step()
    return loss.item()


def tiny_fc():
    # Hand-set weights: class 0 when x0 + x1 > x2, otherwise class 1.
    w = np.array([[1.0, -0.5], [1.0, 0.25], [-1.0, 1.5]], dtype=np.float32)
    b = np.array([0.0, -0.25], dtype=np.float32)
    x = np.array([[2.0, 1.0, 0.5], [0.5, 0.25, 3.0], [1.5, 1.5, -1.0], [-1.0, 0.0, 2.0]], dtype=np.float32)
    y = np.array([0, 1, 0, 1])
    acc = accuracy(x @ w + b, y)
    write_model(
        "tiny_fc",
        [3],
        [("flatten", {}, None, None), ("fully_connected", {"in_features": 3, "out_features": 2}, w, b)],
        [
            "tiny_fc: flatten then one fully connected layer, 3 inputs, 2 classes",
            "weights set by hand (no training); all values are dyadic",
            f"accuracy on tiny_fc.dataset: {acc:.4f} (4 samples)",
        ],
    )
    write_dataset(OUT / "tiny_fc.dataset", x, y, 2)


def blobs(rng, n, dim, classes, spread):
    centers = rng.normal(0.0, 2.0, size=(classes, dim))
    y = np.arange(n) % classes
    x = centers[y] + rng.normal(0.0, spread, size=(n, dim))
    return x.astype(np.float32), y


def mlp():
    rng = np.random.default_rng(SEED)
    torch.manual_seed(SEED)
    x, y = blobs(rng, 60, 4, 3, 0.6)
    model = nn.Sequential(nn.Linear(4, 8), nn.ReLU(), nn.Linear(8, 3))
    loss = train(model, torch.from_numpy(x), torch.from_numpy(y), 600, 0.02)
    l1, l2 = model[0], model[2]
    w1 = l1.weight.detach().numpy().T.copy()
    w2 = l2.weight.detach().numpy().T.copy()
    b1, b2 = l1.bias.detach().numpy(), l2.bias.detach().numpy()
    logits = np.maximum(x @ w1 + b1, 0) @ w2 + b2
    acc = accuracy(logits, y)
    write_model(
        "mlp",
        [4],
        [
            ("fully_connected", {"in_features": 4, "out_features": 8}, w1, b1),
            ("relu", {}, None, None),
            ("fully_connected", {"in_features": 8, "out_features": 3}, w2, b2),
        ],
        [
            "mlp: 4-8-3 perceptron with ReLU, 67 parameters",
            f"trained offline by tools/make_fixtures.py (torch, Adam, 600 steps, seed {SEED}, final loss {loss:.4f})",
            f"accuracy on mlp.dataset: {acc:.4f} (60 samples, 3 gaussian blobs)",
        ],
    )
    write_dataset(OUT / "mlp.dataset", x, y, 3)


def bar_images(rng, n):
    """6x6 images of a horizontal bar, a vertical bar or a diagonal, with noise."""
    y = np.arange(n) % 3
    x = rng.normal(0.0, 0.15, size=(n, 1, 6, 6))
    for i, c in enumerate(y):
        k = rng.integers(1, 5)
        if c == 0:
            x[i, 0, k, :] += 1.0
        elif c == 1:
            x[i, 0, :, k] += 1.0
        else:
            idx = np.arange(6)
            x[i, 0, idx, idx if rng.integers(2) else 5 - idx] += 1.0
    return x.astype(np.float32), y


class Cnn(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, 2, 3)
        self.scale = nn.Parameter(torch.ones(2))
        self.shift = nn.Parameter(torch.zeros(2))
        self.fc = nn.Linear(8, 3)

    def forward(self, x):
        h = self.conv(x) * self.scale.view(1, 2, 1, 1) + self.shift.view(1, 2, 1, 1)
        h = nn.functional.max_pool2d(torch.relu(h), 2, 2)
        return self.fc(h.flatten(1))


def cnn():
    rng = np.random.default_rng(SEED + 1)
    torch.manual_seed(SEED + 1)
    x, y = bar_images(rng, 60)
    model = Cnn()
    loss = train(model, torch.from_numpy(x), torch.from_numpy(y), 800, 0.03)
    with torch.no_grad():
        acc = accuracy(model(torch.from_numpy(x)).numpy(), y)
    p = {k: v.detach().numpy() for k, v in model.named_parameters()}
    write_model(
        "cnn",
        [1, 6, 6],
        [
            (
                "conv2d",
                {"in_channels": 1, "out_channels": 2, "kernel_h": 3, "kernel_w": 3, "stride": 1, "padding": 0},
                p["conv.weight"],
                p["conv.bias"],
            ),
            ("affine_norm", {"channels": 2}, p["scale"], p["shift"]),
            ("relu", {}, None, None),
            ("max_pool", {"kernel": 2, "stride": 2}, None, None),
            ("flatten", {}, None, None),
            ("fully_connected", {"in_features": 8, "out_features": 3}, p["fc.weight"].T.copy(), p["fc.bias"]),
        ],
        [
            "cnn: conv 3x3 (2 channels), affine norm, relu, 2x2 max pool, fully connected; 51 parameters",
            f"trained offline by tools/make_fixtures.py (torch, Adam, 800 steps, seed {SEED + 1}, final loss {loss:.4f})",
            f"accuracy on cnn.dataset: {acc:.4f} (60 samples, 6x6 bar and diagonal images)",
        ],
    )
    write_dataset(OUT / "cnn.dataset", x, y, 3)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    tiny_fc()
    mlp()
    cnn()
    for f in sorted(OUT.glob("*.manifest")):
        print(f.name, *[l for l in f.read_text().splitlines() if l.startswith("# accuracy")])
