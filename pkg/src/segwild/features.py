"""Distillation of 2D teacher features into per-Gaussian affinity vectors.

The trainable parameters are the affinity rows of the scene; geometry and
opacity stay frozen. Because rendering is linear in the payload, the loss
gradient w.r.t. each affinity vector is the compositing-weight-weighted sum
of per-pixel upstream gradients, computed by the kernel backward pass.

Losses:
  - feature loss: mean absolute difference between rendered and teacher
    features over all pixel-channels,
  - compactness loss: over sampled pixel pairs with mask-IoU similarity S
    and clamped feature cosine C, mean of S*(1-C) + (1-S)*C, pulling
    same-mask pixels together and pushing different-mask pixels apart.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .render import RenderPlan, build_plan, render_arrays, render_payload_grad
from .sceneio import FileFormatError
from .types import Camera, FeatureMap, GaussianScene, MaskBank, ValidationError

IOU_EPS = 1e-5  # denominator guard in the mask IoU similarity
NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# PCA compression of teacher features


@dataclass
class PcaModel:
    """Linear compressor: code = basis^T (x - mean), x ~ mean + basis code."""

    mean: np.ndarray  # (in_dim,)
    basis: np.ndarray  # (in_dim, out_dim), column-orthonormal
    rank_deficient: bool = False

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[1]

    def validate(self) -> "PcaModel":
        gram = self.basis.T @ self.basis
        if np.max(np.abs(gram - np.eye(self.output_dim))) > 1e-5:
            raise ValidationError("PCA basis is not column-orthonormal")
        return self

    def compress(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.basis

    def decompress(self, code: np.ndarray) -> np.ndarray:
        return np.asarray(code, dtype=np.float64) @ self.basis.T + self.mean


def fit_pca(samples: np.ndarray, out_dim: int = 64) -> PcaModel:
    """Top principal directions of the sample cloud.

    Requires at least `out_dim` samples. If the data spans fewer than
    `out_dim` directions the basis is padded with an (arbitrary) orthonormal
    completion and the model is flagged rank-deficient.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"samples must be (M, D), got {x.shape}")
    m, d = x.shape
    if m < out_dim:
        raise ValidationError(f"need at least {out_dim} samples, got {m}")
    if out_dim > d:
        raise ValidationError(f"out_dim {out_dim} exceeds input dim {d}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite samples")
    mean = x.mean(axis=0)
    # SVD rows beyond the effective rank already form an orthonormal
    # completion, so rank deficiency only needs flagging.
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    tol = s[0] * max(m, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    return PcaModel(mean=mean, basis=vt[:out_dim].T.copy(),
                    rank_deficient=rank < out_dim).validate()


def save_pca(model: PcaModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"PCAM")
        fh.write(struct.pack("<III", model.input_dim, model.output_dim,
                             1 if model.rank_deficient else 0))
        fh.write(np.ascontiguousarray(model.mean, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.basis, dtype="<f4").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"PCAM":
            raise FileFormatError(f"bad PCA magic {magic!r}")
        in_dim, out_dim, flags = struct.unpack("<III", fh.read(12))
        mean = np.fromfile(fh, dtype="<f4", count=in_dim)
        basis = np.fromfile(fh, dtype="<f4", count=in_dim * out_dim)
    if mean.size != in_dim or basis.size != in_dim * out_dim:
        raise FileFormatError("PCA payload truncated")
    return PcaModel(mean=mean.astype(np.float64),
                    basis=basis.reshape(in_dim, out_dim).astype(np.float64),
                    rank_deficient=bool(flags & 1)).validate()


def compress_feature_map(model: PcaModel, fm: FeatureMap) -> FeatureMap:
    if fm.channels != model.input_dim:
        raise ValidationError(f"feature map has {fm.channels} channels, "
                              f"PCA expects {model.input_dim}")
    coded = model.compress(fm.data.astype(np.float64))
    return FeatureMap(coded.astype(np.float32))


def fit_teacher_pca(teacher_maps, out_dim: int = 64, max_pixels: int = 100_000,
                    rng_seed: int = 0) -> PcaModel:
    """One-off PCA over pixels subsampled across all teacher views.

    Caps the sample count at `max_pixels`, drawn uniformly across the
    concatenated views, so fitting stays cheap at any resolution.
    """
    maps = [fm.data.reshape(-1, fm.channels) for fm in teacher_maps]
    if not maps:
        raise ValidationError("need at least one teacher map")
    channels = maps[0].shape[1]
    if any(m.shape[1] != channels for m in maps):
        raise ValidationError("teacher maps disagree on channel count")
    stacked = np.concatenate(maps, axis=0)
    if stacked.shape[0] > max_pixels:
        rng = np.random.default_rng(rng_seed)
        keep = rng.choice(stacked.shape[0], size=max_pixels, replace=False)
        stacked = stacked[np.sort(keep)]
    return fit_pca(stacked.astype(np.float64), out_dim)


def affinity_pca_colors(scene: GaussianScene) -> np.ndarray:
    """First 3 PCA components of the affinity rows, min-max mapped to [0, 1]
    per channel; a quick visual of the learned feature field."""
    af = scene.affinities
    k = min(3, af.shape[1], max(len(scene), 1))
    if len(scene) == 0 or k == 0:
        return np.zeros((len(scene), 3))
    mean = af.mean(axis=0)
    _, _, vt = np.linalg.svd(af - mean, full_matrices=False)
    coded = (af - mean) @ vt[:k].T
    lo = coded.min(axis=0)
    span = np.maximum(coded.max(axis=0) - lo, 1e-12)
    out = np.zeros((len(scene), 3))
    out[:, :k] = (coded - lo) / span
    return out


# ---------------------------------------------------------------------------
# Pairwise similarities and losses


def mask_iou_similarity(bank: MaskBank, px_i, px_j) -> float:
    """IoU of the masks assigned to two pixels; 0 if either is unassigned."""
    ui, vi = px_i
    uj, vj = px_j
    mi = int(bank.pixel_assignment[vi, ui])
    mj = int(bank.pixel_assignment[vj, uj])
    if mi < 0 or mj < 0:
        return 0.0
    a = bank.masks[mi]
    b = bank.masks[mj]
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return inter / (union + IOU_EPS)


def mask_iou_table(bank: MaskBank) -> np.ndarray:
    """Dense IoU lookup over all mask pairs in a bank."""
    n = len(bank)
    if n == 0:
        return np.zeros((0, 0))
    flat = bank.masks.reshape(n, -1).astype(np.float32)
    inter = flat @ flat.T
    areas = flat.sum(axis=1)
    union = areas[:, None] + areas[None, :] - inter
    return (inter / (union + IOU_EPS)).astype(np.float64)


def feature_cosine(fe: FeatureMap, px_i, px_j) -> float:
    """Clamped cosine max(0, cos) between two pixels' feature vectors."""
    ui, vi = px_i
    uj, vj = px_j
    a = fe.data[vi, ui].astype(np.float64)
    b = fe.data[vj, uj].astype(np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return max(0.0, float(a @ b / (na * nb)))


def _as_array(fm) -> np.ndarray:
    return fm.data if isinstance(fm, FeatureMap) else np.asarray(fm)


def loss_fe(fe_sam, fe_rend) -> float:
    """Mean absolute difference over all pixel-channels."""
    a = _as_array(fe_sam).astype(np.float64)
    b = _as_array(fe_rend).astype(np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"feature map shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass
class PixelPairSample:
    px_i: tuple  # (u, v)
    px_j: tuple  # (u, v)
    similarity: float  # mask-IoU S in [0, 1]


def sample_pixel_pairs(bank: MaskBank, n_pairs: int, rng: np.random.Generator,
                       iou_table=None) -> list[PixelPairSample]:
    """Uniform random pixel pairs with their mask-IoU similarity."""
    h, w = bank.pixel_assignment.shape
    flat = rng.integers(0, h * w, size=(n_pairs, 2))
    if iou_table is None:
        iou_table = mask_iou_table(bank)
    out = []
    for fi, fj in flat:
        pi = (int(fi % w), int(fi // w))
        pj = (int(fj % w), int(fj // w))
        mi = int(bank.pixel_assignment[pi[1], pi[0]])
        mj = int(bank.pixel_assignment[pj[1], pj[0]])
        s = float(iou_table[mi, mj]) if mi >= 0 and mj >= 0 else 0.0
        out.append(PixelPairSample(pi, pj, s))
    return out


def loss_com(fe_rend, pairs) -> float:
    """Mean of S*(1-C) + (1-S)*C over the sampled pairs."""
    if not pairs:
        raise ValidationError("compactness loss needs at least one pair")
    fm = fe_rend if isinstance(fe_rend, FeatureMap) else FeatureMap(_as_array(fe_rend))
    total = 0.0
    for p in pairs:
        c = feature_cosine(fm, p.px_i, p.px_j)
        s = p.similarity
        total += s * (1.0 - c) + (1.0 - s) * c
    return total / len(pairs)


# ---------------------------------------------------------------------------
# Analytic affinity gradients


@dataclass
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 2.5e-3
    lambda_fe: float = 0.7
    lambda_com: float = 0.3
    pairs_per_iter: int = 4096
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> "TrainConfig":
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.lambda_fe < 0 or self.lambda_com < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.pairs_per_iter < 1:
            raise ValidationError("pairs_per_iter must be >= 1")
        return self


@dataclass
class GradResult:
    grad: np.ndarray  # (N, C)
    loss_fe: float
    loss_com: float


def _pair_arrays(pairs):
    if not pairs:
        return (np.zeros(0, np.int64),) * 4 + (np.zeros(0),)
    ui = np.array([p.px_i[0] for p in pairs], np.int64)
    vi = np.array([p.px_i[1] for p in pairs], np.int64)
    uj = np.array([p.px_j[0] for p in pairs], np.int64)
    vj = np.array([p.px_j[1] for p in pairs], np.int64)
    s = np.array([p.similarity for p in pairs], np.float64)
    return ui, vi, uj, vj, s


def _losses_and_upstream(rendered: np.ndarray, teacher: np.ndarray, pair_arrays,
                         cfg: TrainConfig):
    """Loss values plus d(loss)/d(rendered) for both loss terms."""
    h, w, c = rendered.shape
    diff = rendered - teacher
    l_fe = float(np.mean(np.abs(diff)))
    upstream = cfg.lambda_fe * np.sign(diff) / diff.size

    ui, vi, uj, vj, s = pair_arrays
    l_com = 0.0
    n_pairs = ui.shape[0]
    if n_pairs:
        fa = rendered[vi, ui]  # (P, C)
        fb = rendered[vj, uj]
        na = np.linalg.norm(fa, axis=1)
        nb = np.linalg.norm(fb, axis=1)
        ok = (na > NORM_EPS) & (nb > NORM_EPS)
        cos = np.zeros(n_pairs)
        denom = np.where(ok, na * nb, 1.0)
        cos[ok] = (np.einsum("pc,pc->p", fa, fb) / denom)[ok]
        cval = np.maximum(cos, 0.0)
        l_com = float(np.mean(s * (1.0 - cval) + (1.0 - s) * cval))
        live = ok & (cos > 0.0)
        if live.any():
            coeff = cfg.lambda_com * (1.0 - 2.0 * s) / n_pairs
            na2 = np.where(ok, na * na, 1.0)
            nb2 = np.where(ok, nb * nb, 1.0)
            ga = coeff[:, None] * (fb / denom[:, None]
                                   - cos[:, None] * fa / na2[:, None])
            gb = coeff[:, None] * (fa / denom[:, None]
                                   - cos[:, None] * fb / nb2[:, None])
            ga[~live] = 0.0
            gb[~live] = 0.0
            np.add.at(upstream, (vi, ui), ga)
            np.add.at(upstream, (vj, uj), gb)
    return l_fe, l_com, upstream


def grad_affinity(scene: GaussianScene, cam: Camera, fe_sam, pairs,
                  cfg: TrainConfig, *, plan: RenderPlan | None = None,
                  backend=None) -> GradResult:
    """Exact gradient of lambda_fe*L_fe + lambda_com*L_com w.r.t. affinities."""
    teacher = _as_array(fe_sam).astype(np.float64)
    if teacher.shape[2] != scene.feature_dim:
        raise ValidationError(f"teacher has {teacher.shape[2]} channels, "
                              f"scene feature_dim is {scene.feature_dim}")
    if plan is None:
        plan = build_plan(scene, cam)
    rendered, _ = render_arrays(plan, scene.affinities, backend=backend)
    l_fe, l_com, upstream = _losses_and_upstream(
        rendered, teacher, _pair_arrays(pairs), cfg)
    grad = render_payload_grad(plan, upstream, len(scene), backend=backend)
    return GradResult(grad=grad, loss_fe=l_fe, loss_com=l_com)


# ---------------------------------------------------------------------------
# Training loop


def resample_bilinear(fm: FeatureMap, width: int, height: int) -> FeatureMap:
    """Bilinear resample to (height, width), corners aligned."""
    src = fm.data.astype(np.float64)
    h, w = fm.height, fm.width
    if (h, w) == (height, width):
        return FeatureMap(fm.data.copy())
    sy = np.linspace(0, h - 1, height) if height > 1 else np.zeros(1)
    sx = np.linspace(0, w - 1, width) if width > 1 else np.zeros(1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    out = (src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
           + src[np.ix_(y0, x1)] * (1 - fy) * fx
           + src[np.ix_(y1, x0)] * fy * (1 - fx)
           + src[np.ix_(y1, x1)] * fy * fx)
    return FeatureMap(out.astype(np.float32))


@dataclass
class TraceRow:
    iteration: int
    loss_fe: float
    loss_com: float
    total: float


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss_fe", "loss_com", "total"])
        for row in trace:
            writer.writerow([row.iteration, f"{row.loss_fe:.9g}",
                             f"{row.loss_com:.9g}", f"{row.total:.9g}"])


@dataclass
class _View:
    plan: RenderPlan
    teacher: np.ndarray  # (H, W, C) float64
    assignment: np.ndarray  # (H, W) int32
    iou_table: np.ndarray


def train_feature_field(scene: GaussianScene, views, cfg: TrainConfig,
                        *, backend=None, progress_callback=None):
    """Adam-optimize the affinity features against the given views.

    `views` is a list of (Camera, FeatureMap, MaskBank) triples; teacher
    maps are resampled to the camera resolution up front. Returns the
    trained scene copy and the per-iteration loss trace. Deterministic for
    a fixed cfg.rng_seed. `progress_callback(done, total)` is invoked once
    per iteration when given.
    """
    cfg.validate()
    if not views:
        raise ValidationError("training needs at least one view")
    prepared = []
    for cam, teacher, bank in views:
        if teacher.channels != scene.feature_dim:
            raise ValidationError(
                f"view teacher has {teacher.channels} channels, scene has "
                f"{scene.feature_dim}")
        teacher = resample_bilinear(teacher, cam.width, cam.height)
        if bank.pixel_assignment.shape != (cam.height, cam.width):
            raise ValidationError("mask bank resolution differs from camera")
        prepared.append(_View(plan=build_plan(scene, cam),
                              teacher=teacher.data.astype(np.float64),
                              assignment=bank.pixel_assignment,
                              iou_table=mask_iou_table(bank)))

    af = scene.affinities.copy()
    n, c = af.shape
    m = np.zeros_like(af)
    v = np.zeros_like(af)
    rng = np.random.default_rng(cfg.rng_seed)
    trace = []
    for it in range(cfg.iterations):
        view = prepared[it % len(prepared)]
        h, w = view.teacher.shape[:2]
        rendered, _ = render_arrays(view.plan, af, backend=backend)

        flat = rng.integers(0, h * w, size=(cfg.pairs_per_iter, 2))
        ui, uj = flat[:, 0] % w, flat[:, 1] % w
        vi, vj = flat[:, 0] // w, flat[:, 1] // w
        mi = view.assignment[vi, ui]
        mj = view.assignment[vj, uj]
        covered = (mi >= 0) & (mj >= 0)
        if view.iou_table.size:
            s = np.where(covered,
                         view.iou_table[np.maximum(mi, 0), np.maximum(mj, 0)], 0.0)
        else:
            s = np.zeros(cfg.pairs_per_iter)

        l_fe, l_com, upstream = _losses_and_upstream(
            rendered, view.teacher, (ui, vi, uj, vj, s), cfg)
        grad = render_payload_grad(view.plan, upstream, n, backend=backend)

        t = it + 1
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        af = af - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        trace.append(TraceRow(it, l_fe, l_com,
                              cfg.lambda_fe * l_fe + cfg.lambda_com * l_com))
        if progress_callback is not None:
            progress_callback(it + 1, cfg.iterations)
    return scene.with_affinities(af), trace
