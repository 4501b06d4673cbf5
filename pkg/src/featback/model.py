"""Compact point-cloud classifier with exact gradients.

Architecture: a shared per-point encoder (two tanh layers over the
concatenated position+feature input), a coordinatewise max pool over
points, and a two-layer head. The pooling makes the network
permutation-invariant and routes gradients only to the points that
attain each latent maximum (ties to the lowest point index), which the
latent-space and saliency defenses rely on.

Everything is float64 numpy; training is deterministic given the
config seeds.
"""

import struct
import zlib
from dataclasses import dataclass, fields

import numpy as np

from .cloud import LabeledCloud
from .poison import all_to_all_target, implant_trigger
from .preprocess import Pipeline, pipeline_apply

PARAM_FIELDS = ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "head1_w", "head1_b", "head2_w", "head2_b")

CHECKPOINT_MAGIC = b"PCCK"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ClassifierParams:
    enc1_w: np.ndarray  # (h, 3+c)
    enc1_b: np.ndarray  # (h,)
    enc2_w: np.ndarray  # (h, h)
    enc2_b: np.ndarray  # (h,)
    head1_w: np.ndarray  # (h//2, h)
    head1_b: np.ndarray  # (h//2,)
    head2_w: np.ndarray  # (K, h//2)
    head2_b: np.ndarray  # (K,)
    c: int
    K: int
    h: int
    seed: int = 0

    def copy(self):
        return ClassifierParams(
            *(getattr(self, f).copy() for f in PARAM_FIELDS),
            c=self.c, K=self.K, h=self.h, seed=self.seed,
        )

    def arrays(self):
        return [getattr(self, f) for f in PARAM_FIELDS]


def init_params(c, K, h=64, seed=0):
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    if c < 1 or K < 1 or h < 2:
        raise ValueError("need c >= 1, K >= 1, h >= 2")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x1417)))
    h2 = h // 2

    def uniform(out_dim, in_dim):
        bound = np.sqrt(6.0 / in_dim)
        return rng.uniform(-bound, bound, size=(out_dim, in_dim))

    return ClassifierParams(
        enc1_w=uniform(h, 3 + c), enc1_b=np.zeros(h),
        enc2_w=uniform(h, h), enc2_b=np.zeros(h),
        head1_w=uniform(h2, h), head1_b=np.zeros(h2),
        head2_w=uniform(K, h2), head2_b=np.zeros(K),
        c=int(c), K=int(K), h=int(h), seed=int(seed),
    )


def _inputs(cloud):
    return np.concatenate([cloud.positions, cloud.features], axis=1)


def _forward_stack(params, x):
    """Forward a (B, n, 3+c) stack; returns intermediates for backprop."""
    z1 = np.tanh(x @ params.enc1_w.T + params.enc1_b)
    z2 = np.tanh(z1 @ params.enc2_w.T + params.enc2_b)
    amap = np.argmax(z2, axis=1)  # (B, h), first max on ties
    latent = np.take_along_axis(z2, amap[:, None, :], axis=1)[:, 0, :]
    hidden = np.tanh(latent @ params.head1_w.T + params.head1_b)
    logits = hidden @ params.head2_w.T + params.head2_b
    return logits, latent, amap, z1, z2, hidden


def forward(params, cloud):
    """Logits, pooled latent, and the argmax map of a single cloud.

    The argmax map records which point attains each latent coordinate's
    maximum. Any permutation of the points yields bitwise-identical
    logits.
    """
    if cloud.c != params.c:
        raise ValueError(f"cloud feature dim {cloud.c} != model c={params.c}")
    x = _inputs(cloud)[None]
    logits, latent, amap, *_ = _forward_stack(params, x)
    return logits[0], latent[0], amap[0]


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _zero_grads(params):
    return {f: np.zeros_like(getattr(params, f)) for f in PARAM_FIELDS}


def _group_by_size(batch):
    groups = {}
    for lc in batch:
        groups.setdefault(lc.cloud.n, []).append(lc)
    return groups


def _backward_group(params, x, y, grads, total):
    """Accumulate gradients for one same-size group; returns (loss_sum,
    correct_count). Loss/grads are scaled for a mean over ``total``."""
    logits, latent, amap, z1, z2, hidden = _forward_stack(params, x)
    if not np.all(np.isfinite(logits)):
        raise TrainingError("non-finite forward values")
    B, n, h = z2.shape
    probs = _softmax(logits)
    rows = np.arange(B)
    loss_sum = -np.log(np.maximum(probs[rows, y], 1e-300)).sum()
    correct = int(np.sum(np.argmax(logits, axis=1) == y))

    dlogits = probs.copy()
    dlogits[rows, y] -= 1.0
    dlogits /= total
    grads["head2_w"] += dlogits.T @ hidden
    grads["head2_b"] += dlogits.sum(axis=0)
    dhidden = (dlogits @ params.head2_w) * (1.0 - hidden * hidden)
    grads["head1_w"] += dhidden.T @ latent
    grads["head1_b"] += dhidden.sum(axis=0)
    dlatent = dhidden @ params.head1_w
    dz2 = np.zeros_like(z2)
    np.put_along_axis(dz2, amap[:, None, :], dlatent[:, None, :], axis=1)
    dpre2 = dz2 * (1.0 - z2 * z2)
    flat2 = dpre2.reshape(B * n, h)
    grads["enc2_w"] += flat2.T @ z1.reshape(B * n, h)
    grads["enc2_b"] += flat2.sum(axis=0)
    dpre1 = (dpre2 @ params.enc2_w) * (1.0 - z1 * z1)
    flat1 = dpre1.reshape(B * n, h)
    grads["enc1_w"] += flat1.T @ x.reshape(B * n, -1)
    grads["enc1_b"] += flat1.sum(axis=0)
    return loss_sum, correct


def loss_and_grad(params, batch):
    """Mean softmax cross-entropy over a batch of LabeledClouds and the
    exact gradients (max pooling routes gradient only to argmax points)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, grads, _ = _loss_grad_stats(params, batch)
    return loss, grads


def _loss_grad_stats(params, batch):
    total = len(batch)
    grads = _zero_grads(params)
    loss_sum = 0.0
    correct = 0
    for size, members in _group_by_size(batch).items():
        x = np.stack([_inputs(lc.cloud) for lc in members])
        y = np.array([lc.label for lc in members])
        ls, cr = _backward_group(params, x, y, grads, total)
        loss_sum += ls
        correct += cr
    return loss_sum / total, grads, correct


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    adaptive: bool = False  # switch to adaptive-moment updates
    decay_every: int = 0  # 0 disables step decay
    decay_factor: float = 0.5
    seed: int = 0
    pipeline: Pipeline | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "pipeline"}
        d["pipeline"] = self.pipeline.to_dict() if self.pipeline else None
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        pipe = d.pop("pipeline", None)
        cfg = TrainConfig(**d)
        cfg.pipeline = Pipeline.from_dict(pipe) if pipe else None
        return cfg


def train(params, dataset, config):
    """Mini-batch gradient descent on the dataset, preprocessing each
    sample per epoch through the config pipeline.

    Returns the trained parameters (a new object) and a history of
    (mean epoch loss, epoch accuracy on the augmented batches).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    params = params.copy()
    velocity = _zero_grads(params)
    adam_v = _zero_grads(params)
    step = 0
    history = []
    N = len(dataset)
    for epoch in range(config.epochs):
        lr = config.lr
        if config.decay_every > 0:
            lr *= config.decay_factor ** (epoch // config.decay_every)
        order = np.random.default_rng(
            np.random.SeedSequence((int(config.seed), 0x5817, epoch))
        ).permutation(N)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, N, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = []
            for i in idx:
                lc = dataset.clouds[int(i)]
                cloud = lc.cloud
                if config.pipeline is not None:
                    cloud = pipeline_apply(cloud, config.pipeline, sample_index=int(i), epoch=epoch)
                batch.append(LabeledCloud(cloud, lc.label))
            loss, grads, correct = _loss_grad_stats(params, batch)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            epoch_loss += loss * len(batch)
            epoch_correct += correct
            step += 1
            for name in PARAM_FIELDS:
                g = grads[name]
                if config.adaptive:
                    velocity[name] = 0.9 * velocity[name] + 0.1 * g
                    adam_v[name] = 0.999 * adam_v[name] + 0.001 * g * g
                    m_hat = velocity[name] / (1.0 - 0.9**step)
                    v_hat = adam_v[name] / (1.0 - 0.999**step)
                    getattr(params, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
                else:
                    velocity[name] = config.momentum * velocity[name] - lr * g
                    getattr(params, name)[...] += velocity[name]
        history.append((epoch_loss / N, epoch_correct / N))
    return params, history


def evaluate_acc(params, dataset):
    """Fraction of clouds whose argmax logit matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    correct = 0
    for lc in dataset.clouds:
        logits, _, _ = forward(params, lc.cloud)
        correct += int(np.argmax(logits) == lc.label)
    return correct / len(dataset)


def evaluate_asr(params, dataset, spec):
    """Attack success rate of the feature-shift trigger on a clean set.

    all_to_one implants into every cloud whose label differs from the
    target; all_to_all implants into all clouds with per-sample cyclic
    targets.
    """

    def target_fn(label):
        if spec.mode == "all_to_one":
            return spec.target
        return all_to_all_target(label, dataset.K)

    def implant_fn(cloud, index):
        rng = np.random.default_rng(np.random.SeedSequence((spec.selection_seed, index)))
        return implant_trigger(cloud, spec, rng=rng)

    skip_label = spec.target if spec.mode == "all_to_one" else None
    return evaluate_asr_fn(params, dataset, implant_fn, target_fn, skip_label)


def evaluate_asr_fn(params, dataset, implant_fn, target_fn, skip_label=None):
    """Generic ASR: implant a trigger into eligible clouds and measure
    how often the prediction lands on the per-sample target."""
    hits = 0
    total = 0
    for i, lc in enumerate(dataset.clouds):
        if skip_label is not None and lc.label == skip_label:
            continue
        poisoned = implant_fn(lc.cloud, i)
        logits, _, _ = forward(params, poisoned)
        hits += int(np.argmax(logits) == target_fn(lc.label))
        total += 1
    if total == 0:
        raise ValueError("no eligible clouds for ASR evaluation")
    return hits / total


def point_saliency(params, cloud, class_index):
    """Per-point L2 norm of the class logit's gradient with respect to
    the point's (position, feature) input.

    Only points present in the argmax map can carry nonzero saliency;
    everything else is exactly zero.
    """
    if class_index < 0 or class_index >= params.K:
        raise ValueError(f"class {class_index} out of range for K={params.K}")
    x = _inputs(cloud)[None]
    logits, latent, amap, z1, z2, hidden = _forward_stack(params, x)
    dlogits = np.zeros_like(logits)
    dlogits[0, class_index] = 1.0
    dhidden = (dlogits @ params.head2_w) * (1.0 - hidden * hidden)
    dlatent = dhidden @ params.head1_w
    dz2 = np.zeros_like(z2)
    np.put_along_axis(dz2, amap[:, None, :], dlatent[:, None, :], axis=1)
    dpre2 = dz2 * (1.0 - z2 * z2)
    dpre1 = (dpre2 @ params.enc2_w) * (1.0 - z1 * z1)
    dx = dpre1 @ params.enc1_w
    return np.linalg.norm(dx[0], axis=1)


def save_checkpoint(params, path):
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<Iiiii", CHECKPOINT_VERSION, params.c, params.K, params.h, params.seed),
    ]
    for f in PARAM_FIELDS:
        parts.append(np.ascontiguousarray(getattr(params, f), "<f8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 28:
        raise ValueError(f"{path}: truncated checkpoint")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError(f"{path}: checksum mismatch")
    if payload[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, c, K, h, seed = struct.unpack("<Iiiii", payload[4:24])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    h2 = h // 2
    shapes = [(h, 3 + c), (h,), (h, h), (h,), (h2, h), (h2,), (K, h2), (K,)]
    off = 24
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(payload, "<f8", count=count, offset=off).reshape(shape).copy())
        off += count * 8
    if off != len(payload):
        raise ValueError(f"{path}: size mismatch")
    return ClassifierParams(*arrays, c=c, K=K, h=h, seed=seed)
