"""Dataset ingestion, persistence, and synthetic generation.

Synthetic classes pair a geometric shape family with a class-specific
law for the additional point features (Beta distributions for scalar
channels, surface normals for 3-channel ones), so that both geometry
and feature statistics carry label information.

Persisted container (``.pcbd``): little-endian binary with a fixed
header, one record per cloud, an optional JSON poison-metadata blob,
and a trailing CRC32 of everything before it. Stored arrays are raw
float64 so load(save(D)) round-trips bit-exactly.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .cloud import GuardMode, LabeledCloud, PointCloud, apply_guard, center_and_scale

MAGIC = b"PCBD"
FORMAT_VERSION = 1

SHAPE_FAMILIES = ("sphere", "box", "cylinder", "torus", "plane")


class FormatError(ValueError):
    """Malformed or corrupted on-disk data."""


@dataclass
class Dataset:
    clouds: list
    K: int
    c: int
    n: int  # canonical points per cloud at ingestion (ball poisoning may grow clouds)
    poison_meta: dict | None = None

    def __post_init__(self):
        for lc in self.clouds:
            if lc.label >= self.K:
                raise ValueError(f"label {lc.label} out of range for K={self.K}")
            if lc.cloud.c != self.c:
                raise ValueError(
                    f"cloud feature dim {lc.cloud.c} does not match dataset c={self.c}"
                )

    def __len__(self):
        return len(self.clouds)

    def labels(self):
        return np.array([lc.label for lc in self.clouds], dtype=np.int64)


@dataclass
class SyntheticSpec:
    K: int = 4
    n: int = 256
    c: int = 1
    shapes: tuple = ("sphere", "box", "cylinder", "torus")
    # per-class ("beta", a, b) for scalar channels, or "normals" for c == 3
    feature_laws: tuple = (("beta", 2.0, 8.0), ("beta", 8.0, 2.0), ("beta", 4.0, 6.0), ("beta", 6.0, 4.0))
    train_per_class: int = 125
    test_per_class: int = 50
    noise: float = 0.02

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("synthetic spec needs K >= 2")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ValueError("clouds per class must be >= 1 (train) and >= 0 (test)")
        for s in self.shapes:
            if s not in SHAPE_FAMILIES:
                raise ValueError(f"unknown shape family: {s!r}")

    @staticmethod
    def from_dict(d):
        spec = SyntheticSpec(
            K=int(d.get("K", 4)),
            n=int(d.get("n", 256)),
            c=int(d.get("c", 1)),
            train_per_class=int(d.get("train_per_class", 125)),
            test_per_class=int(d.get("test_per_class", 50)),
            noise=float(d.get("noise", 0.02)),
        )
        if "shapes" in d:
            spec.shapes = tuple(d["shapes"])
        if "feature_laws" in d:
            laws = d["feature_laws"]
            if laws == "normals":
                spec.feature_laws = "normals"
            else:
                spec.feature_laws = tuple(("beta", float(a), float(b)) for a, b in laws)
        return spec


# ---------------------------------------------------------------------------
# shape samplers: return (positions, unit surface normals)
# ---------------------------------------------------------------------------


def _sample_sphere(n, rng):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return 0.9 * d, d.copy()


def _sample_box(n, rng):
    half = 0.8
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pos = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for i in range(n):
        others = [a for a in range(3) if a != axis[i]]
        pos[i, axis[i]] = sign[i] * half
        pos[i, others[0]] = uv[i, 0]
        pos[i, others[1]] = uv[i, 1]
        nrm[i, axis[i]] = sign[i]
    return pos, nrm


def _sample_cylinder(n, rng):
    r, h = 0.6, 0.9  # radius, half-height
    lateral_area = 2 * np.pi * r * (2 * h)
    cap_area = np.pi * r * r
    total = lateral_area + 2 * cap_area
    u = rng.uniform(size=n)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pos = np.empty((n, 3))
    nrm = np.empty((n, 3))
    for i in range(n):
        if u[i] < lateral_area / total:
            z = rng.uniform(-h, h)
            pos[i] = (r * np.cos(theta[i]), r * np.sin(theta[i]), z)
            nrm[i] = (np.cos(theta[i]), np.sin(theta[i]), 0.0)
        else:
            top = u[i] < (lateral_area + cap_area) / total
            rad = r * np.sqrt(rng.uniform())
            z = h if top else -h
            pos[i] = (rad * np.cos(theta[i]), rad * np.sin(theta[i]), z)
            nrm[i] = (0.0, 0.0, 1.0 if top else -1.0)
    return pos, nrm


def _sample_torus(n, rng):
    R, r = 0.7, 0.3
    u = rng.uniform(0, 2 * np.pi, size=n)
    v = rng.uniform(0, 2 * np.pi, size=n)
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    pos = np.stack([(R + r * cv) * cu, (R + r * cv) * su, r * sv], axis=1)
    nrm = np.stack([cv * cu, cv * su, sv], axis=1)
    return pos, nrm


def _sample_plane(n, rng):
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pos = np.column_stack([uv, np.zeros(n)])
    nrm = np.tile(np.array([0.0, 0.0, 1.0]), (n, 1))
    return pos, nrm


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
    "plane": _sample_plane,
}


def _gen_cloud(spec, klass, rng):
    shape = spec.shapes[klass % len(spec.shapes)]
    pos, nrm = _SAMPLERS[shape](spec.n, rng)
    pos = pos + rng.normal(0.0, spec.noise, size=pos.shape)
    if spec.feature_laws == "normals":
        if spec.c != 3:
            raise ValueError("normals feature law requires c == 3")
        feat = apply_guard(nrm, GuardMode.unit())
    else:
        law = spec.feature_laws[klass % len(spec.feature_laws)]
        _, a, b = law
        feat = rng.beta(a, b, size=(spec.n, spec.c))
        feat = apply_guard(feat, GuardMode.clip(0.0, 1.0))
    return center_and_scale(PointCloud(pos, feat))


def gen_synthetic(spec, seed):
    """Generate (train, test) datasets; bit-identical for identical seeds."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC10D)))
    train, test = [], []
    for klass in range(spec.K):
        for _ in range(spec.train_per_class):
            train.append(LabeledCloud(_gen_cloud(spec, klass, rng), klass))
        for _ in range(spec.test_per_class):
            test.append(LabeledCloud(_gen_cloud(spec, klass, rng), klass))
    return (
        Dataset(train, K=spec.K, c=spec.c, n=spec.n),
        Dataset(test, K=spec.K, c=spec.c, n=spec.n),
    )


# ---------------------------------------------------------------------------
# file loaders
# ---------------------------------------------------------------------------


def load_xyzfeat_binary(path, c):
    """One cloud from a flat binary of little-endian float32 records
    (x, y, z, f_1..f_c)."""
    c = int(c)
    with open(path, "rb") as fh:
        raw = fh.read()
    width = 4 * (3 + c)
    if len(raw) == 0:
        raise FormatError(f"{path}: empty file")
    if len(raw) % width != 0:
        raise FormatError(
            f"{path}: length {len(raw)} is not a multiple of record width {width}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 3 + c).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values")
    return PointCloud(arr[:, :3], arr[:, 3:])


def _parse_off(path):
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise FormatError(f"{path}: missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k < 3:
                raise FormatError(f"{path}: face with {k} vertices")
            idx = [int(t) for t in tokens[pos + 1 : pos + 1 + k]]
            pos += 1 + k
            for j in range(1, k - 1):  # fan-triangulate polygons
                faces.append((idx[0], idx[j], idx[j + 1]))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed OFF body: {exc}") from exc
    if not faces:
        raise FormatError(f"{path}: no faces")
    faces = np.array(faces, dtype=np.int64)
    if faces.max() >= nv or faces.min() < 0:
        raise FormatError(f"{path}: face vertex index out of range")
    return verts, faces


def load_off_with_normals(path, n, seed=0):
    """Sample n points uniformly by face area from an OFF mesh.

    Each point's feature is the unit normal of its source face
    (cross-product winding order), so c == 3.
    """
    verts, faces = _parse_off(path)
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    cross = np.cross(e1, e2)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise FormatError(f"{path}: mesh has zero total face area")
    keep = areas > 0.0
    normals = cross[keep] / np.linalg.norm(cross[keep], axis=1, keepdims=True)
    probs = areas[keep] / areas[keep].sum()
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(probs), size=int(n), p=probs)
    r1 = np.sqrt(rng.uniform(size=(int(n), 1)))
    r2 = rng.uniform(size=(int(n), 1))
    fv0 = v0[keep][pick]
    fe1 = e1[keep][pick]
    fe2 = e2[keep][pick]
    pos = fv0 + fe1 * (r1 * (1 - r2)) + fe2 * (r1 * r2)
    return PointCloud(pos, normals[pick])


# ---------------------------------------------------------------------------
# native container
# ---------------------------------------------------------------------------


def save_dataset(dataset, path):
    meta = dataset.poison_meta
    meta_blob = json.dumps(meta, sort_keys=True).encode() if meta is not None else b""
    poison_set = set()
    if meta is not None:
        poison_set = set(int(i) for i in meta.get("indices", []))
    parts = [
        MAGIC,
        struct.pack(
            "<IiiiiB",
            FORMAT_VERSION,
            dataset.K,
            dataset.c,
            dataset.n,
            len(dataset.clouds),
            1 if meta is not None else 0,
        ),
    ]
    for i, lc in enumerate(dataset.clouds):
        parts.append(struct.pack("<iBi", lc.label, 1 if i in poison_set else 0, lc.cloud.n))
        parts.append(np.ascontiguousarray(lc.cloud.positions, "<f8").tobytes())
        parts.append(np.ascontiguousarray(lc.cloud.features, "<f8").tobytes())
    if meta is not None:
        parts.append(struct.pack("<I", len(meta_blob)))
        parts.append(meta_blob)
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 21 + 4:
        raise FormatError(f"{path}: truncated container")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch")
    if payload[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, K, c, n, count, has_meta = struct.unpack("<IiiiiB", payload[4:25])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 25
    clouds = []
    try:
        for _ in range(count):
            label, _flag, ni = struct.unpack("<iBi", payload[off : off + 9])
            off += 9
            pos = np.frombuffer(payload, "<f8", count=ni * 3, offset=off).reshape(ni, 3)
            off += ni * 24
            feat = np.frombuffer(payload, "<f8", count=ni * c, offset=off).reshape(ni, c)
            off += ni * c * 8
            clouds.append(LabeledCloud(PointCloud(pos.copy(), feat.copy()), label))
        meta = None
        if has_meta:
            (blob_len,) = struct.unpack("<I", payload[off : off + 4])
            off += 4
            meta = json.loads(payload[off : off + blob_len].decode())
            off += blob_len
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or malformed body: {exc}") from exc
    if off != len(payload):
        raise FormatError(f"{path}: trailing bytes in container")
    return Dataset(clouds, K=K, c=c, n=n, poison_meta=meta)
