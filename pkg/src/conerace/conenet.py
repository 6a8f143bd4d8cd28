"""Cone-color classifier working on cone geometry alone.

Input: up to 15 body-frame cone positions sorted by range, interleaved into a
30-vector and zero padded. Output: per-cone probabilities over
{0 pad, 1 red, 2 blue}. The network is four length-preserving 1-D
convolutions (kernel 3, ReLU) over the cone sequence followed by a dense
layer from the flattened 15x32 features to 15x3 logits.

Everything (forward, backward, Adam) is plain numpy in float64.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, TrainingError
from .sensors import BLUE, RED
from .track import TrackSpec, generate_loop, sample_primitives_at

N_CONES = 15
N_CLASSES = 3
PAD = 0
CONV_CHANNELS = (2, 16, 32, 32, 32)
KERNEL = 3
MAGIC = b"CONENET\x00"
FORMAT_VERSION = 1
MAX_RANGE = 10.0


def encode_input(cones, labels=None):
    """Encode body-frame cones as a 30-vector (and optional 15 labels).

    Cones are sorted by range; beyond 15 the farthest are dropped.
    """
    pts = np.asarray(cones, dtype=float).reshape(-1, 2)
    order = np.argsort(np.hypot(pts[:, 0], pts[:, 1]), kind="stable")[:N_CONES]
    x = np.zeros(2 * N_CONES)
    x[: 2 * len(order)] = pts[order].ravel()
    if labels is None:
        return x
    lab = np.zeros(N_CONES, dtype=np.int64)
    lab[: len(order)] = np.asarray(labels, dtype=np.int64)[order]
    return x, lab


class Network:
    """Parameter container; ``params`` is an ordered name -> array dict."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def init(cls, seed: int = 0, zero_head: bool = False) -> "Network":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for i, (cin, cout) in enumerate(zip(CONV_CHANNELS[:-1], CONV_CHANNELS[1:])):
            fan_in = cin * KERNEL
            params[f"conv{i}.w"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (cout, cin, KERNEL))
            params[f"conv{i}.b"] = np.zeros(cout)
        n_feat = N_CONES * CONV_CHANNELS[-1]
        if zero_head:
            params["fc.w"] = np.zeros((n_feat, N_CONES * N_CLASSES))
        else:
            params["fc.w"] = rng.normal(0.0, math.sqrt(1.0 / n_feat), (n_feat, N_CONES * N_CLASSES))
        params["fc.b"] = np.zeros(N_CONES * N_CLASSES)
        return cls(params)

    def copy(self) -> "Network":
        return Network({k: v.copy() for k, v in self.params.items()})

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(self.params)))
            for arr in self.params.values():
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            for arr in self.params.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Network":
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ValueError(f"{path}: not a conenet parameter file")
        version, n = struct.unpack_from("<II", data, 8)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        off = 16
        shapes = []
        for _ in range(n):
            (nd,) = struct.unpack_from("<I", data, off)
            off += 4
            shapes.append(struct.unpack_from(f"<{nd}I", data, off))
            off += 4 * nd
        ref = cls.init(0)
        if [tuple(v.shape) for v in ref.params.values()] != [tuple(s) for s in shapes]:
            raise ValueError(f"{path}: layer dimensions do not match this architecture")
        params = {}
        for name, shape in zip(ref.params, shapes):
            size = int(np.prod(shape))
            params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
            off += 8 * size
        return cls(params)


def _im2col(x):
    # x: (B, C, L) -> (B, C*K, L) with zero padding of 1 on both ends
    B, C, L = x.shape
    xp = np.zeros((B, C, L + 2))
    xp[:, :, 1:-1] = x
    cols = np.stack([xp[:, :, k : k + L] for k in range(KERNEL)], axis=2)
    return cols.reshape(B, C * KERNEL, L)


def _col2im(dcols, C, L):
    B = dcols.shape[0]
    d = dcols.reshape(B, C, KERNEL, L)
    dxp = np.zeros((B, C, L + 2))
    for k in range(KERNEL):
        dxp[:, :, k : k + L] += d[:, :, k, :]
    return dxp[:, :, 1:-1]


def _forward(net: Network, X):
    X = np.asarray(X, dtype=float).reshape(-1, 2 * N_CONES)
    B = X.shape[0]
    h = X.reshape(B, N_CONES, 2).transpose(0, 2, 1)
    cache = []
    for i in range(len(CONV_CHANNELS) - 1):
        w = net.params[f"conv{i}.w"]
        cols = _im2col(h)
        z = np.matmul(w.reshape(w.shape[0], -1), cols) + net.params[f"conv{i}.b"][:, None]
        cache.append((cols, z))
        h = np.maximum(z, 0.0)
    flat = h.transpose(0, 2, 1).reshape(B, -1)
    logits = (flat @ net.params["fc.w"] + net.params["fc.b"]).reshape(B, N_CONES, N_CLASSES)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=-1, keepdims=True)
    return probs, (cache, flat, logits)


def forward(net: Network, x) -> np.ndarray:
    """Per-cone class probabilities, shape (15, 3) or (B, 15, 3) for a batch."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != 2 * N_CONES:
        raise ValueError(f"input must have length {2 * N_CONES}")
    probs, _ = _forward(net, arr)
    return probs[0] if arr.ndim == 1 else probs


def loss_and_grads(net: Network, X, labels):
    """Masked mean cross-entropy over real cones and its parameter gradients."""
    X = np.asarray(X, dtype=float).reshape(-1, 2 * N_CONES)
    Y = np.asarray(labels, dtype=np.int64).reshape(-1, N_CONES)
    B = X.shape[0]
    probs, (cache, flat, logits) = _forward(net, X)
    mask = Y != PAD
    n = int(mask.sum())
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    if n == 0:
        return 0.0, grads
    logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, Y[..., None], axis=-1)[..., 0]
    loss = float(-(picked * mask).sum() / n)

    onehot = np.eye(N_CLASSES)[Y]
    dlog = (probs - onehot) * mask[..., None] / n
    dlog = dlog.reshape(B, -1)
    grads["fc.w"] = flat.T @ dlog
    grads["fc.b"] = dlog.sum(axis=0)
    dh = (dlog @ net.params["fc.w"].T).reshape(B, N_CONES, -1).transpose(0, 2, 1)
    for i in reversed(range(len(CONV_CHANNELS) - 1)):
        cols, z = cache[i]
        dz = dh * (z > 0.0)
        w = net.params[f"conv{i}.w"]
        grads[f"conv{i}.w"] = np.einsum("bot,bct->oc", dz, cols).reshape(w.shape)
        grads[f"conv{i}.b"] = dz.sum(axis=(0, 2))
        if i > 0:
            dcols = np.matmul(w.reshape(w.shape[0], -1).T, dz)
            dh = _col2im(dcols, w.shape[1], N_CONES)
    return loss, grads


def backward(net: Network, x, labels):
    """Gradients of the masked cross-entropy; returns ``(loss, grads)``."""
    return loss_and_grads(net, x, labels)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 200
    n_train: int = 6000
    n_val: int = 2000
    n_test: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ValueError("split sizes must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig = TrainConfig(), t: int | None = None) -> AdamState:
    """In-place Adam update with bias correction; returns the moment state."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    state.t = t
    return state


@dataclass
class ConeDataset:
    inputs: np.ndarray
    labels: np.ndarray
    curvature: np.ndarray = field(default=None)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 2 * N_CONES)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1, N_CONES)
        if self.curvature is None:
            self.curvature = np.full(len(self.inputs), np.nan)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> "ConeDataset":
        return ConeDataset(self.inputs[idx], self.labels[idx], self.curvature[idx])

    def to_csv(self, path) -> None:
        header = [f"{a}{i}" for i in range(1, N_CONES + 1) for a in ("x", "y")]
        header += [f"label{i}" for i in range(1, N_CONES + 1)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, y in zip(self.inputs, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(v) for v in y])

    @classmethod
    def from_csv(cls, path) -> "ConeDataset":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, : 2 * N_CONES], rows[:, 2 * N_CONES :].astype(np.int64))


def mirror_sample(x, labels):
    """Reflect across the vehicle's longitudinal axis and swap red/blue."""
    xm = np.asarray(x, dtype=float).copy()
    xm[1::2] *= -1.0
    lab = np.asarray(labels, dtype=np.int64).copy()
    red = lab == RED
    blue = lab == BLUE
    lab[red] = BLUE
    lab[blue] = RED
    return xm + 0.0, lab


def generate_dataset(
    n_samples: int,
    seed: int = 0,
    samples_per_track: int = 50,
    position_sigma: float = 0.05,
    max_retries: int = 1000,
) -> ConeDataset:
    """Cone-view samples from random poses on random generated loops.

    Half the samples are mirrored so both turn directions appear. The
    returned ``curvature`` is the absolute centerline curvature at the pose.

    Raises:
        DatasetError: too many poses without enough visible cones.
    """
    rng = np.random.default_rng(seed)
    X = np.zeros((n_samples, 2 * N_CONES))
    Y = np.zeros((n_samples, N_CONES), dtype=np.int64)
    K = np.zeros(n_samples)
    track_index = -1
    failures = 0
    i = 0
    while i < n_samples:
        if i // samples_per_track != track_index:
            track_index = i // samples_per_track
            spec = TrackSpec(
                n_segments=int(rng.integers(4, 9)),
                min_radius=float(rng.uniform(5.0, 12.0)),
                width=4.0,
                spacing=5.0,
                shape="random",
            )
            track = generate_loop(spec, seed=int(rng.integers(2**31)))
            cones = np.vstack([track.blue_cones, track.red_cones])
            colors = np.concatenate([np.full(len(track.blue_cones), BLUE), np.full(len(track.red_cones), RED)])
        s = rng.uniform(0.0, track.length)
        cx, cy, h, kappa = sample_primitives_at(track.primitives, track.start, [s])[0]
        off = rng.uniform(-1.4, 1.4)
        px, py = cx - off * math.sin(h), cy + off * math.cos(h)
        psi = h + float(np.clip(rng.normal(0.0, 0.15), -0.4, 0.4))
        c, sn = math.cos(psi), math.sin(psi)
        d = cones - (px, py)
        xb = c * d[:, 0] + sn * d[:, 1]
        yb = -sn * d[:, 0] + c * d[:, 1]
        vis = np.hypot(xb, yb) <= MAX_RANGE
        if vis.sum() < 3:
            failures += 1
            if failures > max_retries:
                raise DatasetError("could not find poses with enough visible cones")
            continue
        failures = 0
        pts = np.column_stack([xb[vis], yb[vis]]) + rng.normal(0.0, position_sigma, (int(vis.sum()), 2))
        x, lab = encode_input(pts, colors[vis])
        if rng.random() < 0.5:
            x, lab = mirror_sample(x, lab)
        X[i], Y[i], K[i] = x, lab, abs(kappa)
        i += 1
    return ConeDataset(X, Y, K)


def accuracy(net: Network, data: ConeDataset, max_range: float = MAX_RANGE) -> float:
    """Fraction of real cones within ``max_range`` given the right color."""
    correct, total = per_sample_correct(net, data, max_range)
    return float(correct.sum() / max(total.sum(), 1))


def per_sample_correct(net: Network, data: ConeDataset, max_range: float = MAX_RANGE):
    probs = forward(net, data.inputs) if len(data) else np.zeros((0, N_CONES, N_CLASSES))
    pred = np.where(probs[..., RED] >= probs[..., BLUE], RED, BLUE)
    pts = data.inputs.reshape(-1, N_CONES, 2)
    mask = (data.labels != PAD) & (np.hypot(pts[..., 0], pts[..., 1]) <= max_range)
    correct = ((pred == data.labels) & mask).sum(axis=1)
    return correct, mask.sum(axis=1)


@dataclass
class TrainResult:
    network: Network
    history: list[dict]
    test_accuracy: float
    best_epoch: int


def split_dataset(data: ConeDataset, config: TrainConfig):
    need = config.n_train + config.n_val + config.n_test
    if len(data) < need:
        raise DatasetError(f"dataset has {len(data)} samples, split needs {need}")
    a, b = config.n_train, config.n_train + config.n_val
    return data.subset(slice(0, a)), data.subset(slice(a, b)), data.subset(slice(b, need))


def train(config: TrainConfig, data: ConeDataset, progress=None) -> TrainResult:
    """Minibatch Adam training; keeps the best-validation-accuracy snapshot.

    Raises:
        TrainingError: the loss becomes non-finite.
    """
    tr, va, te = split_dataset(data, config)
    rng = np.random.default_rng(config.seed)
    net = Network.init(int(rng.integers(2**31)))
    state = AdamState.zeros_like(net.params)
    best = net.copy()
    best_acc, best_epoch = -1.0, 0
    history = []
    n = len(tr)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch):
            idx = perm[start : start + config.batch]
            loss, grads = loss_and_grads(net, tr.inputs[idx], tr.labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch}, batch starting {start}")
            adam_step(net.params, grads, state, config)
            total += loss * len(idx)
            count += len(idx)
        val_loss, _ = loss_and_grads(net, va.inputs, va.labels)
        val_acc = accuracy(net, va)
        history.append({"epoch": epoch, "train_loss": total / count, "val_loss": val_loss, "val_accuracy": val_acc})
        if progress is not None:
            progress(history[-1])
        if val_acc > best_acc:
            best_acc, best_epoch, best = val_acc, epoch, net.copy()
    return TrainResult(best, history, accuracy(best, te), best_epoch)


def error_by_curvature(net: Network, data: ConeDataset, n_bins: int = 2):
    """Per-cone error rate in curvature quantile bins (low to high)."""
    correct, total = per_sample_correct(net, data)
    edges = np.quantile(data.curvature, np.linspace(0.0, 1.0, n_bins + 1))
    which = np.clip(np.searchsorted(edges, data.curvature, side="right") - 1, 0, n_bins - 1)
    rates = []
    for b in range(n_bins):
        m = which == b
        rates.append(float(1.0 - correct[m].sum() / max(total[m].sum(), 1)))
    return edges, rates


def lidar_color_probabilities(net: Network, cones_body) -> tuple[np.ndarray, np.ndarray]:
    """Classify detected cones: returns (color codes, probability of that color
    renormalized over red/blue) in the input order."""
    pts = np.asarray(cones_body, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    order = np.argsort(np.hypot(pts[:, 0], pts[:, 1]), kind="stable")[:N_CONES]
    probs = forward(net, encode_input(pts))
    colors = np.zeros(len(pts), dtype=np.int64)
    conf = np.zeros(len(pts))
    for slot, i in enumerate(order):
        pr, pb = probs[slot, RED], probs[slot, BLUE]
        if pr >= pb:
            colors[i], conf[i] = RED, pr / (pr + pb)
        else:
            colors[i], conf[i] = BLUE, pb / (pr + pb)
    return colors, conf
