"""Desk-scale multi-scale descriptor head with hand-written gradients.

Pipeline per image: fixed multi-scale stub features -> generalized-mean pooling
with a learnable exponent per channel -> per-scale L2 normalization ->
concatenation -> affine whitening. Pairs are compared by cosine similarity and
trained with a margin loss over (query, positive, negatives) tuples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import cv2
import numpy as np

from .rgbd_io import DepthFrame, normalize_depth

log = logging.getLogger(__name__)

DEFAULT_SCALES = 4
DEFAULT_CHANNELS = 8
DEFAULT_MARGIN = 0.5
INIT_EXPONENT = 3.0
MIN_EXPONENT = 1.0


# -- data types -------------------------------------------------------------------------


@dataclass
class FeaturePyramid:
    scales: list[np.ndarray]  # each C_k x H_k x W_k, non-negative

    def __post_init__(self):
        if not self.scales:
            raise ValueError("pyramid needs at least one scale")
        out = []
        for k, x in enumerate(self.scales):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 3:
                raise ValueError(f"scale {k}: expected C x H x W, got shape {x.shape}")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"scale {k}: non-finite entries")
            if np.any(x < 0):
                raise ValueError(f"scale {k}: negative entries are not allowed for GeM pooling")
            out.append(x)
        self.scales = out

    @property
    def channels(self) -> list[int]:
        return [x.shape[0] for x in self.scales]


@dataclass
class GemParams:
    """Pooling exponents per scale; an array of length 1 shares one exponent across the scale."""

    exponents: list[np.ndarray]

    @classmethod
    def init(cls, channels: Sequence[int], value: float = INIT_EXPONENT, shared: bool = False) -> "GemParams":
        return cls([np.full(1 if shared else c, float(value)) for c in channels])

    def copy(self) -> "GemParams":
        return GemParams([e.copy() for e in self.exponents])

    def clamp(self, lo: float = MIN_EXPONENT) -> None:
        for e in self.exponents:
            np.maximum(e, lo, out=e)


@dataclass
class WhiteningLayer:
    weight: np.ndarray  # D_out x D_in
    bias: np.ndarray  # D_out

    @classmethod
    def init(cls, d_in: int, d_out: int | None = None, rng=None) -> "WhiteningLayer":
        rng = np.random.default_rng(rng)
        d_out = d_in if d_out is None else d_out
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)), np.zeros(d_out))

    @classmethod
    def identity(cls, d: int) -> "WhiteningLayer":
        return cls(np.eye(d), np.zeros(d))

    def copy(self) -> "WhiteningLayer":
        return WhiteningLayer(self.weight.copy(), self.bias.copy())


@dataclass
class TrainTuple:
    query: FeaturePyramid
    positive: FeaturePyramid
    negatives: list[FeaturePyramid]

    def __post_init__(self):
        if not self.negatives:
            raise ValueError("a training tuple needs at least one negative")


@dataclass
class Gradients:
    exponents: list[np.ndarray]
    weight: np.ndarray
    bias: np.ndarray


# -- stub feature extractor -------------------------------------------------------------


def prepare_input(frame: DepthFrame, size: int | None = None, max_range_m: float = 6.0) -> np.ndarray:
    """Stack RGB in [0, 1] with normalized depth into H x W x 4, optionally area-resized to ``size``."""
    rgb = frame.color.astype(np.float64) / 255.0
    img = np.concatenate([rgb, normalize_depth(frame, max_range_m).values[..., None]], axis=2)
    if size is not None:
        img = cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)
    return img


def _cell_means(img: np.ndarray, g: int) -> np.ndarray:
    h, w = img.shape[:2]
    rows = (np.arange(g) * h) // g
    cols = (np.arange(g) * w) // g
    cnt_r = np.diff(np.append(rows, h))
    cnt_c = np.diff(np.append(cols, w))
    s = np.add.reduceat(np.add.reduceat(img, rows, axis=0), cols, axis=1)
    return s / (cnt_r[:, None, None] * cnt_c[None, :, None])


def stub_pyramid(image: np.ndarray, scales: int = DEFAULT_SCALES, channels: int = DEFAULT_CHANNELS) -> FeaturePyramid:
    """Fixed multi-scale statistics standing in for a convolutional backbone.

    Scale ``k`` (1-based) splits the raster into a ``2**k`` square grid. Per cell
    the candidate statistics are, for every input band, the mean value, the mean
    absolute horizontal difference and the mean absolute vertical difference;
    output channel ``c`` takes statistic ``c`` modulo their count.
    """
    if scales < 1 or channels < 1:
        raise ValueError("scales and channels must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    if min(h, w) < 2**scales:
        raise ValueError(f"raster {w}x{h} too small for {scales} scales (needs >= {2**scales} per side)")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = np.abs(np.diff(img, axis=1))
    gy[:-1] = np.abs(np.diff(img, axis=0))
    stats = np.concatenate([img, gx, gy], axis=2)
    pick = np.arange(channels) % stats.shape[2]
    out = []
    for k in range(1, scales + 1):
        cells = _cell_means(stats, 2**k)
        out.append(np.abs(cells[:, :, pick]).transpose(2, 0, 1))
    return FeaturePyramid(out)


# -- generalized-mean pooling ----------------------------------------------------------


def gem_pool(x: np.ndarray, exponents) -> np.ndarray:
    """Power mean over the spatial extent of each channel of a C x H x W map."""
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[0]
    flat = x.reshape(c, -1)
    if np.any(flat < 0):
        raise ValueError("GeM pooling needs non-negative inputs")
    l = np.broadcast_to(np.asarray(exponents, dtype=np.float64), (c,))
    mean_pow = np.mean(flat ** l[:, None], axis=1)
    return mean_pow ** (1.0 / l)


def gem_pool_grad(x: np.ndarray, exponents, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``upstream . gem_pool(x, exponents)`` w.r.t. ``x`` and the exponents.

    Zero entries contribute nothing to the exponent gradient (continuous
    extension of ``x**l * log x`` at 0). An all-zero channel has zero gradient
    except for ``l == 1``, where pooling is the plain mean.
    """
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[0]
    flat = x.reshape(c, -1)
    n = flat.shape[1]
    e = np.asarray(exponents, dtype=np.float64)
    l = np.broadcast_to(e, (c,))[:, None]
    up = np.asarray(upstream, dtype=np.float64)[:, None]

    xl = flat**l
    m = xl.mean(axis=1, keepdims=True)
    live = m > 0
    safe_m = np.where(live, m, 1.0)
    p = safe_m ** (1.0 / l)
    with np.errstate(divide="ignore", invalid="ignore"):
        xlm1 = np.where(flat > 0, flat ** (l - 1.0), np.where(l == 1.0, 1.0, 0.0))
        dx = np.where(live, p ** (1.0 - l) * xlm1 / n, np.where(l == 1.0, 1.0 / n, 0.0))
        xlogx = np.where(flat > 0, xl * np.log(np.where(flat > 0, flat, 1.0)), 0.0)
    dl = p * (-np.log(safe_m) / l**2 + xlogx.mean(axis=1, keepdims=True) / (l * safe_m))
    dl = np.where(live, dl, 0.0)[:, 0] * up[:, 0]
    if e.size == 1 and c > 1:
        dl = np.array([dl.sum()])
    return (dx * up).reshape(x.shape), dl


# -- embedding --------------------------------------------------------------------------


@dataclass
class _EmbedCache:
    pyramid: FeaturePyramid
    pooled: list[np.ndarray]
    norms: list[float]
    normalized: list[np.ndarray]
    y: np.ndarray
    z: np.ndarray = field(repr=False)


def _pool_and_normalize(pyramid: FeaturePyramid, gem: GemParams):
    if len(pyramid.scales) != len(gem.exponents):
        raise ValueError(f"pyramid has {len(pyramid.scales)} scales, pooling params {len(gem.exponents)}")
    pooled, norms, normalized = [], [], []
    for x, l in zip(pyramid.scales, gem.exponents):
        if l.size not in (1, x.shape[0]):
            raise ValueError(f"{l.size} exponents for a scale with {x.shape[0]} channels")
        y = gem_pool(x, l)
        nrm = float(np.linalg.norm(y))
        pooled.append(y)
        norms.append(nrm)
        normalized.append(y / nrm if nrm > 0 else np.zeros_like(y))
    return pooled, norms, normalized


def _embed(pyramid: FeaturePyramid, gem: GemParams, whitening: WhiteningLayer) -> _EmbedCache:
    pooled, norms, normalized = _pool_and_normalize(pyramid, gem)
    y = np.concatenate(normalized)
    if whitening.weight.shape[1] != y.size:
        raise ValueError(f"whitening expects {whitening.weight.shape[1]} inputs, got {y.size}")
    z = whitening.weight @ y + whitening.bias
    return _EmbedCache(pyramid, pooled, norms, normalized, y, z)


def embed(pyramid: FeaturePyramid, gem: GemParams, whitening: WhiteningLayer) -> np.ndarray:
    return _embed(pyramid, gem, whitening).z


def pooled_descriptor(pyramid: FeaturePyramid, gem: GemParams) -> np.ndarray:
    """Concatenated per-scale L2-normalized GeM vectors (the whitening input)."""
    return np.concatenate(_pool_and_normalize(pyramid, gem)[2])


def _embed_backward(cache: _EmbedCache, dz: np.ndarray, gem: GemParams, whitening: WhiteningLayer, grads: Gradients):
    grads.weight += np.outer(dz, cache.y)
    grads.bias += dz
    dy = whitening.weight.T @ dz
    offset = 0
    for k, (x, l) in enumerate(zip(cache.pyramid.scales, gem.exponents)):
        c = x.shape[0]
        dn = dy[offset : offset + c]
        offset += c
        nrm = cache.norms[k]
        if nrm == 0:
            continue
        n = cache.normalized[k]
        dpool = (dn - n * (n @ dn)) / nrm
        _, dl = gem_pool_grad(x, l, dpool)
        grads.exponents[k] += dl


# -- similarity and loss ----------------------------------------------------------------


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_similarity_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity and its gradients w.r.t. ``a`` and ``b``."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    s = float(np.dot(a, b) / (na * nb))
    return s, b / (na * nb) - s * a / na**2, a / (na * nb) - s * b / nb**2


def pair_loss(s: float, g: int, margin: float = DEFAULT_MARGIN) -> float:
    if g == 1:
        return 1.0 - s
    if g == 0:
        return max(0.0, s - margin)
    raise ValueError(f"pair loss defined only for labels 0 and 1, got {g}")


def pair_loss_grad(s: float, g: int, margin: float = DEFAULT_MARGIN) -> float:
    """d loss / d s; the hinge kink at ``s == margin`` takes slope 0."""
    if g == 1:
        return -1.0
    if g == 0:
        return 1.0 if s > margin else 0.0
    raise ValueError(f"pair loss defined only for labels 0 and 1, got {g}")


def tuple_loss(t: TrainTuple, gem: GemParams, whitening: WhiteningLayer, margin: float = DEFAULT_MARGIN) -> float:
    """Mean pair loss of the query against its positive and every negative."""
    zq = embed(t.query, gem, whitening)
    total = pair_loss(cosine_similarity(zq, embed(t.positive, gem, whitening)), 1, margin)
    for neg in t.negatives:
        total += pair_loss(cosine_similarity(zq, embed(neg, gem, whitening)), 0, margin)
    return total / (1 + len(t.negatives))


def zero_grads(gem: GemParams, whitening: WhiteningLayer) -> Gradients:
    return Gradients(
        [np.zeros_like(e) for e in gem.exponents], np.zeros_like(whitening.weight), np.zeros_like(whitening.bias)
    )


def tuple_loss_and_grad(
    t: TrainTuple,
    gem: GemParams,
    whitening: WhiteningLayer,
    margin: float = DEFAULT_MARGIN,
    grads: Gradients | None = None,
    scale: float = 1.0,
) -> tuple[float, Gradients]:
    """Tuple loss and its gradient; accumulates ``scale * grad`` into ``grads`` if given."""
    grads = zero_grads(gem, whitening) if grads is None else grads
    cq = _embed(t.query, gem, whitening)
    others = [(_embed(t.positive, gem, whitening), 1)] + [(_embed(n, gem, whitening), 0) for n in t.negatives]
    w = scale / len(others)
    dzq = np.zeros_like(cq.z)
    total = 0.0
    for c, g in others:
        s, ds_dq, ds_do = cosine_similarity_grad(cq.z, c.z)
        total += pair_loss(s, g, margin)
        dl = pair_loss_grad(s, g, margin) * w
        if dl != 0.0:
            dzq += dl * ds_dq
            _embed_backward(c, dl * ds_do, gem, whitening, grads)
    _embed_backward(cq, dzq, gem, whitening, grads)
    return total / len(others), grads


# -- training ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, trace: list[float]):
        super().__init__(msg)
        self.trace = trace


@dataclass
class StageSchedule:
    """Alternating tuple stages: many small tuples, then one large tuple."""

    steps: int = 2000
    stage_length: int = 50
    tuples_a: int = 4
    negatives_a: int = 5
    tuples_b: int = 1
    negatives_b: int = 20

    def stage(self, step: int) -> str:
        return "A" if (step // self.stage_length) % 2 == 0 else "B"


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    margin: float = DEFAULT_MARGIN
    init_exponent: float = INIT_EXPONENT
    shared_exponent: bool = False
    embedding_dim: int | None = None
    seed: int = 0


@dataclass
class TrainResult:
    gem: GemParams
    whitening: WhiteningLayer
    trace: list[tuple[int, str, float]]


TupleSource = Callable[[str, int, np.random.Generator], Sequence[TrainTuple]]


def train_desk_scale(
    tuples: TupleSource,
    schedule: StageSchedule,
    cfg: TrainConfig,
    channels: Sequence[int],
    gem: GemParams | None = None,
    whitening: WhiteningLayer | None = None,
) -> TrainResult:
    """Plain gradient descent on the mean tuple loss with alternating stages.

    ``tuples(stage, count, rng)`` returns the batch for one step; stage ``"A"``
    batches use ``schedule.tuples_a`` tuples, ``"B"`` batches ``schedule.tuples_b``.
    Exponents are clamped to >= 1 after every update.
    """
    rng = np.random.default_rng(cfg.seed)
    d_in = int(sum(channels))
    gem = GemParams.init(channels, cfg.init_exponent, cfg.shared_exponent) if gem is None else gem.copy()
    whitening = WhiteningLayer.init(d_in, cfg.embedding_dim, rng) if whitening is None else whitening.copy()
    trace = []
    for step in range(schedule.steps):
        stage = schedule.stage(step)
        batch = tuples(stage, schedule.tuples_a if stage == "A" else schedule.tuples_b, rng)
        grads = zero_grads(gem, whitening)
        loss = 0.0
        for t in batch:
            l, _ = tuple_loss_and_grad(t, gem, whitening, cfg.margin, grads, scale=1.0 / len(batch))
            loss += l / len(batch)
        trace.append((step, stage, loss))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}", [x[2] for x in trace])
        if cfg.learning_rate:
            whitening.weight -= cfg.learning_rate * grads.weight
            whitening.bias -= cfg.learning_rate * grads.bias
            for e, g in zip(gem.exponents, grads.exponents):
                e -= cfg.learning_rate * g
            gem.clamp()
    return TrainResult(gem, whitening, trace)


@dataclass
class LabeledPyramids:
    """Pyramids with class labels; two items match when their labels agree."""

    pyramids: list[FeaturePyramid]
    labels: np.ndarray

    def tuple_source(self, schedule: StageSchedule) -> TupleSource:
        idx_by = {c: np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

        def draw(stage: str, count: int, rng: np.random.Generator) -> list[TrainTuple]:
            n_neg = schedule.negatives_a if stage == "A" else schedule.negatives_b
            return [self.make_tuple(rng, n_neg, idx_by) for _ in range(count)]

        return draw

    def make_tuple(self, rng, n_neg, idx_by=None) -> TrainTuple:
        idx_by = idx_by or {c: np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}
        usable = [c for c, v in idx_by.items() if len(v) >= 2]
        c = usable[rng.integers(len(usable))]
        q, p = rng.choice(idx_by[c], size=2, replace=False)
        others = np.flatnonzero(self.labels != c)
        negs = rng.choice(others, size=n_neg, replace=True)
        return TrainTuple(self.pyramids[q], self.pyramids[p], [self.pyramids[i] for i in negs])


def make_cluster_pyramids(
    seed: int,
    per_cluster: int = 12,
    clusters: int = 2,
    scales: int = DEFAULT_SCALES,
    channels: int = DEFAULT_CHANNELS,
    noise: float = 0.1,
) -> LabeledPyramids:
    """Separable toy set: each cluster is a random non-negative template with multiplicative noise."""
    rng = np.random.default_rng(seed)
    shapes = [(channels, 2**k, 2**k) for k in range(1, scales + 1)]
    templates = [[rng.uniform(0.0, 1.0, s) ** 3 for s in shapes] for _ in range(clusters)]
    pyrs, labels = [], []
    for c in range(clusters):
        for _ in range(per_cluster):
            gain = rng.uniform(0.5, 2.0)
            pyrs.append(
                FeaturePyramid([t * gain * (1.0 + noise * rng.uniform(-1, 1, t.shape)) for t in templates[c]])
            )
            labels.append(c)
    return LabeledPyramids(pyrs, np.array(labels))


def separation(data: LabeledPyramids, gem: GemParams, whitening: WhiteningLayer, margin: float = DEFAULT_MARGIN):
    """Fraction of pairs on the correct side of ``margin`` (matching pairs above, others at or below)."""
    z = [embed(p, gem, whitening) for p in data.pyramids]
    good = total = 0
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            s = cosine_similarity(z[i], z[j])
            same = data.labels[i] == data.labels[j]
            good += (s > margin) if same else (s <= margin)
            total += 1
    return good / total


def mean_tuple_loss(data: LabeledPyramids, gem, whitening, negatives: int = 5, margin=DEFAULT_MARGIN, seed=0, count=64):
    rng = np.random.default_rng(seed)
    ts = [data.make_tuple(rng, negatives) for _ in range(count)]
    return float(np.mean([tuple_loss(t, gem, whitening, margin) for t in ts]))


# -- model file -------------------------------------------------------------------------


def _row(v) -> str:
    return " ".join(f"{float(x):.17g}" for x in np.ravel(v))


def save_model(path, gem: GemParams, whitening: WhiteningLayer) -> None:
    d_out, d_in = whitening.weight.shape
    lines = [
        "descriptor-head v1",
        f"K {len(gem.exponents)}",
        "C " + " ".join(str(len(e)) for e in gem.exponents),
        f"D {d_out} {d_in}",
        "exponents",
        *(_row(e) for e in gem.exponents),
        "weight",
        *(_row(r) for r in whitening.weight),
        "bias",
        _row(whitening.bias),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> tuple[GemParams, WhiteningLayer]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "descriptor-head v1":
        raise ValueError(f"{path}: not a descriptor model file")
    k = int(lines[1].split()[1])
    d_out, d_in = (int(x) for x in lines[3].split()[1:3])
    pos = 5
    exps = [np.array([float(x) for x in lines[pos + i].split()]) for i in range(k)]
    pos += k + 1
    weight = np.array([[float(x) for x in lines[pos + i].split()] for i in range(d_out)]).reshape(d_out, d_in)
    pos += d_out + 1
    bias = np.array([float(x) for x in lines[pos].split()])
    return GemParams(exps), WhiteningLayer(weight, bias)


# -- gradient check ---------------------------------------------------------------------


@dataclass
class GradcheckResult:
    worst_error: float
    worst_param: str
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.worst_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``; the floor guards near-zero entries."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def random_instance(rng, scales=DEFAULT_SCALES, channels=DEFAULT_CHANNELS, negatives=5, margin=DEFAULT_MARGIN, kink_gap=1e-3):
    """Random positive pyramids and parameters whose negative similarities avoid the hinge kink."""
    while True:
        sizes = [(channels, int(rng.integers(2, 5)), int(rng.integers(2, 5))) for _ in range(scales)]

        def pyr():
            return FeaturePyramid([rng.uniform(0.05, 1.0, s) for s in sizes])

        t = TrainTuple(pyr(), pyr(), [pyr() for _ in range(negatives)])
        gem = GemParams([rng.uniform(1.0, 4.0, channels) for _ in range(scales)])
        d = scales * channels
        wh = WhiteningLayer(rng.normal(0, 1 / np.sqrt(d), (d, d)), rng.normal(0, 0.1, d))
        zq = embed(t.query, gem, wh)
        if all(abs(cosine_similarity(zq, embed(n, gem, wh)) - margin) > kink_gap for n in t.negatives):
            return t, gem, wh


def _whitening_loss(ys, wh: WhiteningLayer, margin):
    z = [wh.weight @ y + wh.bias for y in ys]
    total = pair_loss(cosine_similarity(z[0], z[1]), 1, margin)
    for zn in z[2:]:
        total += pair_loss(cosine_similarity(z[0], zn), 0, margin)
    return total / (len(z) - 1)


def check_instance(t, gem, wh, h=1e-5, margin=DEFAULT_MARGIN, corrupt=False) -> GradcheckResult:
    """Central finite differences of the tuple loss against the analytic gradient."""
    _, g = tuple_loss_and_grad(t, gem, wh, margin)
    if corrupt:
        g.weight[0, 0] += 1e-2
    worst, where, count = 0.0, "", 0

    def record(name, a, n):
        nonlocal worst, where, count
        err = relative_error(a, n)
        count += err.size
        k = int(np.argmax(err))
        if err.flat[k] > worst:
            worst, where = float(err.flat[k]), f"{name}[{','.join(str(int(i)) for i in np.unravel_index(k, err.shape))}]"

    ys = [pooled_descriptor(p, gem) for p in [t.query, t.positive, *t.negatives]]
    for name, arr, grad in (("weight", wh.weight, g.weight), ("bias", wh.bias, g.bias)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = _whitening_loss(ys, wh, margin)
            arr[idx] = old - h
            lm = _whitening_loss(ys, wh, margin)
            arr[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        record(name, grad, num)
    for k, e in enumerate(gem.exponents):
        num = np.zeros_like(e)
        for i in range(e.size):
            old = e[i]
            e[i] = old + h
            lp = tuple_loss(t, gem, wh, margin)
            e[i] = old - h
            lm = tuple_loss(t, gem, wh, margin)
            e[i] = old
            num[i] = (lp - lm) / (2 * h)
        record(f"exponent[{k}]", g.exponents[k], num)
    return GradcheckResult(worst, where, count)


def gradcheck(seed: int, trials: int, h: float = 1e-5, corrupt: bool = False) -> GradcheckResult:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = GradcheckResult(0.0, "", 0)
    checked = 0
    for trial in range(trials):
        r = check_instance(*random_instance(rng), h=h, corrupt=corrupt)
        checked += r.checked
        if r.worst_error >= worst.worst_error:
            worst = GradcheckResult(r.worst_error, f"trial {trial} {r.worst_param}", 0)
    worst.checked = checked
    return worst


def pair_tuple_source(pyramids: Sequence[FeaturePyramid], entries: np.ndarray, schedule: StageSchedule) -> TupleSource:
    """Tuples drawn from a ground-truth label matrix: positives where 1, negatives where 0.

    Diagonal entries and label-2 pairs are never used.
    """
    entries = np.asarray(entries)
    off = ~np.eye(len(entries), dtype=bool)
    pos = [np.flatnonzero((entries[i] == 1) & off[i]) for i in range(len(entries))]
    neg = [np.flatnonzero((entries[i] == 0) & off[i]) for i in range(len(entries))]
    queries = [i for i in range(len(entries)) if len(pos[i]) and len(neg[i])]
    if not queries:
        raise ValueError("ground truth has no frame with both a positive and a negative partner")

    def draw(stage: str, count: int, rng: np.random.Generator) -> list[TrainTuple]:
        n_neg = schedule.negatives_a if stage == "A" else schedule.negatives_b
        out = []
        for _ in range(count):
            q = queries[rng.integers(len(queries))]
            p = pos[q][rng.integers(len(pos[q]))]
            negs = rng.choice(neg[q], size=n_neg, replace=True)
            out.append(TrainTuple(pyramids[q], pyramids[p], [pyramids[i] for i in negs]))
        return out

    return draw
