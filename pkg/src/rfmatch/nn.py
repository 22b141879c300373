"""From-scratch feed-forward network engine with one residual skip.

The fixed layer family is 3 -> 64 -> 128 -> 256 -> 512 -> 1024 -> 512 -> 256
-> 128 -> 64 -> out, ReLU on hidden layers, linear output, and a skip that
adds the fourth hidden layer's activation onto the sixth layer's
pre-activation.  A width-scale factor shrinks all hidden widths
proportionally for desk-scale runs.  The same engine serves both the
S-parameter surrogate (out=8) and the inverse solver (out=2); reverse-mode
differentiation provides exact gradients with respect to parameters and
inputs.
"""
from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormalizationError, ModelFormatError

HIDDEN_BASE = (64, 128, 256, 512, 1024, 512, 256, 128, 64)
SKIP_FROM = 4  # hidden layer whose activation feeds the skip (1-based)
SKIP_INTO = 6  # hidden layer whose pre-activation receives it
IN_DIM = 3
OUT_DIMS = {"recbm": 8, "ims": 2}
MODEL_MAGIC = b"RFMNN1\x00"
MODEL_FORMAT_VERSION = 1

OUTPUT_NAMES_RECBM = ("s11_re", "s11_im", "s12_re", "s12_im", "s21_re", "s21_im", "s22_re", "s22_im")
OUTPUT_NAMES_IMS = ("cp", "cs")


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-input-feature min-max bounds; applied inside every forward pass."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have equal length")
        for lo, hi in zip(self.lo, self.hi):
            if not hi > lo:
                raise DegenerateNormalizationError(f"feature bounds degenerate: [{lo}, {hi}]")

    def apply(self, x: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        return (np.asarray(x, dtype=float) - lo) / (np.asarray(self.hi) - lo)

    def span(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 240
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42
    split: float = 0.8
    lr_decay: float = 1.0  # multiplier applied every lr_decay_every epochs
    lr_decay_every: int = 100

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("decay rates must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (0 < self.split < 1):
            raise ValueError("split fraction must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epoch count must be >= 0")
        if not (0 < self.lr_decay <= 1) or self.lr_decay_every < 1:
            raise ValueError("lr decay must lie in (0, 1] with a positive period")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)


@dataclass
class GradientBundle:
    """Per-parameter gradients mirroring the model, plus input gradients."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None


@dataclass
class MlpModel:
    role: str  # "recbm" | "ims"
    width_scale: float
    widths: list[int]  # full chain [in, h1..h9, out]
    weights: list[np.ndarray]  # W[i] has shape (widths[i+1], widths[i])
    biases: list[np.ndarray]
    norm: NormalizationSpec
    label_scale: float = 1.0  # multiplier from physical targets to training space
    paired_fingerprint: str = ""  # surrogate this inverse solver was trained against

    def __post_init__(self):
        if self.role not in OUT_DIMS:
            raise ValueError(f"role must be one of {sorted(OUT_DIMS)}, got {self.role!r}")
        if self.widths[SKIP_FROM] != self.widths[SKIP_INTO]:
            raise ValueError("residual skip requires equal widths on layers 4 and 6")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i + 1], self.widths[i]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i + 1} parameter shapes do not match widths")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i + 1} has non-finite parameters")

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def output_names(self) -> tuple[str, ...]:
        return OUTPUT_NAMES_RECBM if self.role == "recbm" else OUTPUT_NAMES_IMS

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self)

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def hidden_widths(width_scale: float) -> list[int]:
    return [max(1, round(w * width_scale)) for w in HIDDEN_BASE]


def build_model(
    role: str,
    norm: NormalizationSpec,
    width_scale: float = 1.0,
    label_scale: float = 1.0,
    seed: int = 42,
) -> MlpModel:
    """Fresh model with Glorot-uniform weights and zero biases, seeded."""
    widths = [IN_DIM] + hidden_widths(width_scale) + [OUT_DIMS[role]]
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        role=role,
        width_scale=width_scale,
        widths=widths,
        weights=weights,
        biases=biases,
        norm=norm,
        label_scale=label_scale,
    )


def _forward_full(model: MlpModel, x2d: np.ndarray):
    """All layer activations and pre-activations for a (N, 3) batch."""
    hs = [model.norm.apply(x2d)]
    zs: list[np.ndarray | None] = [None]
    n_hidden = len(model.weights) - 1
    for i in range(1, n_hidden + 1):
        z = hs[i - 1] @ model.weights[i - 1].T + model.biases[i - 1]
        if i == SKIP_INTO:
            z = z + hs[SKIP_FROM]
        zs.append(z)
        hs.append(np.maximum(z, 0.0))
    y = hs[n_hidden] @ model.weights[-1].T + model.biases[-1]
    return hs, zs, y


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward(model: MlpModel, x) -> np.ndarray:
    """Network output in training space; accepts one (3,) vector or an (N, 3) batch."""
    x2d, single = _as_batch(x)
    if x2d.shape[1] != IN_DIM:
        raise ValueError(f"expected {IN_DIM} input features, got {x2d.shape[1]}")
    _, _, y = _forward_full(model, x2d)
    return y[0] if single else y


def predict(model: MlpModel, x) -> np.ndarray:
    """Network output in physical units (label scale undone)."""
    return forward(model, x) / model.label_scale


def backward(model: MlpModel, x, upstream: np.ndarray) -> GradientBundle:
    """Reverse-mode gradients of a scalar objective through the whole network.

    `upstream` is d(objective)/d(output), matching the forward output shape.
    Returns gradients for every weight and bias plus the gradient with
    respect to the physical input features.  ReLU subgradient at 0 is 0.
    """
    x2d, single = _as_batch(x)
    up2d = np.asarray(upstream, dtype=float)
    if single:
        up2d = up2d[None, :]
    if up2d.shape != (x2d.shape[0], model.out_dim):
        raise ValueError(f"upstream shape {up2d.shape} does not match output")
    hs, zs, _ = _forward_full(model, x2d)
    n_layers = len(model.weights)
    n_hidden = n_layers - 1
    g_w: list[np.ndarray] = [np.empty(0)] * n_layers
    g_b: list[np.ndarray] = [np.empty(0)] * n_layers

    delta = up2d  # output layer is linear
    g_w[-1] = delta.T @ hs[n_hidden]
    g_b[-1] = delta.sum(axis=0)
    g = delta @ model.weights[-1]
    skip_delta = None
    for i in range(n_hidden, 0, -1):
        delta = g * (zs[i] > 0)
        if i == SKIP_INTO:
            skip_delta = delta
        g_w[i - 1] = delta.T @ hs[i - 1]
        g_b[i - 1] = delta.sum(axis=0)
        g = delta @ model.weights[i - 1]
        if i - 1 == SKIP_FROM and skip_delta is not None:
            g = g + skip_delta
    dx = g / model.norm.span()
    return GradientBundle(weights=g_w, biases=g_b, inputs=dx[0] if single else dx)


def loss_mse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared error normalized by sample count times output dimension."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.ndim == 1:
        pred, truth = pred[None, :], truth[None, :]
    n, d = pred.shape
    return float(np.sum((pred - truth) ** 2) / (d * n))


def loss_mse_grad(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    n, d = (pred.shape if pred.ndim == 2 else (1, pred.shape[0]))
    return 2.0 * (pred - truth) / (d * n)


def adam_update(params, grads, m, v, t: int, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam step over parallel lists of arrays (updated in place).

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g*g;
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
    Also accepts bare arrays.  Shared by weight training and the
    gradient-descent matcher.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    single = isinstance(params, np.ndarray)
    plist = [params] if single else params
    glist = [grads] if single else grads
    mlist = [m] if single else m
    vlist = [v] if single else v
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(plist, glist, mlist, vlist):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
    return params, m, v


def train(
    model: MlpModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainingConfig,
) -> tuple[MlpModel, np.ndarray]:
    """Mini-batch Adam training; returns a trained copy and the loss history.

    Targets are expected in training space (label scale already applied).
    The dataset is shuffled once into train/validation splits and reshuffled
    every epoch with the seeded generator, so identical seed and config give
    bit-identical parameters on one host.  History rows are
    (epoch, train_mse, val_mse); epoch 0 is the untrained model.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(inputs) == 0:
        raise ValueError("dataset is empty")
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets must have equal length")
    model = copy.deepcopy(model)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    order = rng.permutation(len(inputs))
    n_train = int(len(inputs) * config.split)
    if n_train == 0 or n_train == len(inputs):
        raise ValueError("split leaves an empty partition")
    tr, va = order[:n_train], order[n_train:]
    x_tr, y_tr = inputs[tr], targets[tr]
    x_va, y_va = inputs[va], targets[va]

    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0

    def full_mse(x, y):
        return loss_mse(forward(model, x), y)

    history = [(0, full_mse(x_tr, y_tr), full_mse(x_va, y_va))]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n_train)
        batch_losses = []
        lr = config.lr_at(epoch)
        for start in range(0, n_train, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            _, _, pred = _forward_full(model, xb)
            batch_losses.append(loss_mse(pred, yb))
            grad = backward(model, xb, loss_mse_grad(pred, yb))
            step += 1
            adam_update(params, grad.weights + grad.biases, m, v, step,
                        lr, config.beta1, config.beta2, config.eps)
        train_mse = float(np.mean(batch_losses))
        val_mse = full_mse(x_va, y_va)
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise RuntimeError(
                f"training diverged at epoch {epoch}: train_mse={train_mse}, val_mse={val_mse}"
            )
        history.append((epoch, train_mse, val_mse))
    return model, np.array(history)


def evaluate_surrogate(model: MlpModel, inputs: np.ndarray, targets: np.ndarray) -> dict:
    """Error report on a held-out set: per-dimension and overall MAE/MRE plus
    ECDF tables of absolute and relative errors.

    Relative errors exclude targets with magnitude below 1e-12 (counted in
    `mre_excluded`).  Targets are physical; predictions undo the label scale.
    """
    pred = predict(model, inputs)
    truth = np.asarray(targets, dtype=float)
    abs_err = np.abs(pred - truth)
    denom_ok = np.abs(truth) >= 1e-12
    per_dim = []
    ecdf_abs = {}
    ecdf_rel = {}
    for j, name in enumerate(model.output_names):
        ok = denom_ok[:, j]
        rel = np.abs(abs_err[ok, j] / truth[ok, j])
        per_dim.append({
            "dim": j,
            "name": name,
            "mae": float(abs_err[:, j].mean()),
            "mre": float(rel.mean()) if rel.size else float("nan"),
            "mre_excluded": int((~ok).sum()),
        })
        ecdf_abs[name] = ecdf_table(abs_err[:, j])
        ecdf_rel[name] = ecdf_table(rel)
    rel_all = np.abs(abs_err[denom_ok] / truth[denom_ok])
    return {
        "n": int(len(truth)),
        "per_dim": per_dim,
        "overall_mae": float(abs_err.mean()),
        "overall_mre": float(rel_all.mean()) if rel_all.size else float("nan"),
        "mre_excluded_total": int((~denom_ok).sum()),
        "ecdf_abs": ecdf_abs,
        "ecdf_rel": ecdf_rel,
    }


def ecdf_table(values: np.ndarray) -> np.ndarray:
    """Sorted (value, cumulative fraction) pairs; the last fraction is 1."""
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if values.size == 0:
        return np.empty((0, 2))
    fractions = np.arange(1, values.size + 1) / values.size
    return np.column_stack([values, fractions])


def forward_mac_count(model: MlpModel) -> int:
    """Multiply-accumulate count of one single-sample forward pass."""
    return sum(model.widths[i] * model.widths[i + 1] for i in range(len(model.widths) - 1))


def backward_mac_count(model: MlpModel) -> int:
    """MAC count of one backward pass (weight gradients plus adjoint propagation)."""
    return 2 * forward_mac_count(model)


# --- model files ---------------------------------------------------------------

def _fingerprint(model: MlpModel) -> str:
    head = json.dumps(
        {
            "role": model.role,
            "width_scale": model.width_scale,
            "widths": model.widths,
            "norm_lo": list(model.norm.lo),
            "norm_hi": list(model.norm.hi),
            "label_scale": model.label_scale,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    digest = hashlib.sha256(head)
    for w, b in zip(model.weights, model.biases):
        digest.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return digest.hexdigest()[:16]


def serialize_model(model: MlpModel, path: str) -> None:
    """Write the versioned binary model container.

    Layout: magic "RFMNN1\\0", uint32-LE header length, UTF-8 JSON header,
    then every layer's weights and bias as little-endian float64 in layer
    order (weights row-major, bias after its weights).
    """
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "role": model.role,
        "width_scale": model.width_scale,
        "widths": model.widths,
        "norm_lo": list(model.norm.lo),
        "norm_hi": list(model.norm.hi),
        "label_scale": model.label_scale,
        "paired_fingerprint": model.paired_fingerprint,
        "fingerprint": model.fingerprint,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def deserialize_model(path: str) -> MlpModel:
    """Read a model container, verifying structure, length, and fingerprint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MODEL_MAGIC):
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    off = len(MODEL_MAGIC)
    if len(raw) < off + 4:
        raise ModelFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + hlen:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header: {exc}") from exc
    off += hlen
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    widths = list(header["widths"])
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        need = (fan_out * fan_in + fan_out) * 8
        if len(raw) < off + need:
            raise ModelFormatError(f"{path}: truncated parameter block")
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=off).reshape(fan_out, fan_in)
        off += fan_out * fan_in * 8
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += fan_out * 8
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - off} trailing bytes")
    model = MlpModel(
        role=header["role"],
        width_scale=header["width_scale"],
        widths=widths,
        weights=weights,
        biases=biases,
        norm=NormalizationSpec(tuple(header["norm_lo"]), tuple(header["norm_hi"])),
        label_scale=header["label_scale"],
        paired_fingerprint=header.get("paired_fingerprint", ""),
    )
    if model.fingerprint != header["fingerprint"]:
        raise ModelFormatError(f"{path}: fingerprint mismatch; file corrupt")
    return model
