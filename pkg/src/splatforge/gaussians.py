"""Gaussian primitives and clouds.

A scene is a set of anisotropic 3D Gaussians, each carrying a center,
a per-axis scale, a rotation quaternion, an opacity, and an RGB color.
Scales are stored as logs and opacities as logits so that unconstrained
gradient steps keep the activated values in their legal ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COV_EPS = 1e-8  # ridge added to covariances before inversion


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for unit quaternion(s) in (w, x, y, z) order.

    Accepts shape (4,) or (N, 4); the input is normalized first.
    Returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_rotmat_jacobian(q: np.ndarray) -> np.ndarray:
    """Partials of the rotation matrix w.r.t. each unit-quaternion component.

    For unit quaternions q = (w, x, y, z), returns shape (N, 4, 3, 3) where
    entry [:, a] is dR/dq_a.  Normalization is the caller's business (see
    `backprop_quat_normalization`).
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = q.shape[0]
    J = np.zeros((n, 4, 3, 3), dtype=np.float64)
    zero = np.zeros_like(w)
    # dR/dw
    J[:, 0] = 2 * np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    # dR/dx
    J[:, 1] = 2 * np.stack(
        [
            np.stack([zero, y, z], axis=-1),
            np.stack([y, -2 * x, -w], axis=-1),
            np.stack([z, w, -2 * x], axis=-1),
        ],
        axis=-2,
    )
    # dR/dy
    J[:, 2] = 2 * np.stack(
        [
            np.stack([-2 * y, x, w], axis=-1),
            np.stack([x, zero, z], axis=-1),
            np.stack([-w, z, -2 * y], axis=-1),
        ],
        axis=-2,
    )
    # dR/dz
    J[:, 3] = 2 * np.stack(
        [
            np.stack([-2 * z, -w, x], axis=-1),
            np.stack([w, -2 * z, y], axis=-1),
            np.stack([x, y, zero], axis=-1),
        ],
        axis=-2,
    )
    return J


def backprop_quat_normalization(q_raw: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the normalized quaternion back to the raw one.

    q_unit = q_raw / |q_raw|, so the raw gradient is the unit gradient with
    its radial component projected out, divided by |q_raw|.
    """
    q_raw = np.atleast_2d(q_raw)
    grad_unit = np.atleast_2d(grad_unit)
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    q_unit = q_raw / norm
    radial = np.sum(grad_unit * q_unit, axis=-1, keepdims=True)
    return (grad_unit - radial * q_unit) / norm


def covariance_from(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Covariance of one Gaussian: R(q) diag(s) diag(s)^T R(q)^T.

    `scale` holds the activated (positive) per-axis sigmas, `rotation` a
    unit quaternion.  The result is symmetric PSD with eigenvalues s_i^2.
    """
    scale = np.asarray(scale, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    if not (np.all(np.isfinite(scale)) and np.all(np.isfinite(rotation))):
        raise ValueError("non-finite scale or rotation")
    if np.any(scale <= 0):
        raise ValueError("scale components must be positive")
    R = quat_to_rotmat(rotation)
    M = R * scale[np.newaxis, :]
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


@dataclass
class GaussianPrimitive:
    """One Gaussian, in activated (not raw) parameterization.

    center: world position, scale: positive per-axis sigmas, rotation: unit
    quaternion (w, x, y, z), opacity in (0, 1), color RGB in [0, 1].
    """

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def covariance(self) -> np.ndarray:
        return covariance_from(self.scale, self.rotation)


def gaussian_eval(primitive: GaussianPrimitive, x: np.ndarray) -> float:
    """Unnormalized Gaussian falloff exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

    Equals 1 at the center and decays with Mahalanobis distance.  The
    covariance gets a small ridge before inversion; a matrix that is still
    singular afterwards is rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    cov = primitive.covariance() + COV_EPS * np.eye(3)
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular covariance after regularization") from exc
    d = x - np.asarray(primitive.center, dtype=np.float64)
    power = -0.5 * d @ inv @ d
    return float(np.exp(min(power, 0.0)))


@dataclass
class GaussianCloud:
    """Struct-of-arrays container for the optimizable scene.

    Raw storage: centers (N,3), log_scales (N,3), rotations (N,4) unit
    quaternions, opacity_logits (N,), colors (N,3) in [0,1].  `generation`
    counts densify/prune events.
    """

    centers: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    generation: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        for name in ("log_scales", "rotations", "opacity_logits", "colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n}")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def scales(self) -> np.ndarray:
        """Activated per-axis sigmas, strictly positive."""
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        """Activated opacities in (0, 1)."""
        return _sigmoid(self.opacity_logits)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            center=self.centers[i].copy(),
            scale=np.exp(self.log_scales[i]),
            rotation=self.rotations[i].copy(),
            opacity=float(_sigmoid(self.opacity_logits[i])),
            color=self.colors[i].copy(),
        )

    @classmethod
    def from_primitives(cls, primitives) -> "GaussianCloud":
        prims = list(primitives)
        return cls(
            centers=np.array([p.center for p in prims], dtype=np.float64),
            log_scales=np.log([np.asarray(p.scale, dtype=np.float64) for p in prims]),
            rotations=np.array([p.rotation for p in prims], dtype=np.float64),
            opacity_logits=_logit(np.array([p.opacity for p in prims], dtype=np.float64)),
            colors=np.array([p.color for p in prims], dtype=np.float64),
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            centers=self.centers.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            generation=self.generation,
        )

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def validate(self) -> None:
        if len(self) == 0:
            raise ValueError("empty cloud")
        n = len(self.centers)
        for name in ("log_scales", "rotations", "opacity_logits", "colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n}")
        for name in ("centers", "log_scales", "rotations", "opacity_logits", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotations not unit quaternions")


def init_cloud(count: int, seed: int) -> GaussianCloud:
    """Random cloud: centers uniform inside the unit sphere, identity
    rotations, opacity 0.1, isotropic scale set to the mean nearest-neighbor
    distance of the sampled centers, colors uniform in [0, 1].
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / 3.0)
    centers = direction * radius

    if count == 1:
        mean_nn = 0.1
    else:
        from scipy.spatial import cKDTree

        tree = cKDTree(centers)
        dist, _ = tree.query(centers, k=2)
        mean_nn = float(np.mean(dist[:, 1]))
        mean_nn = max(mean_nn, 1e-4)

    rotations = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (count, 1))
    colors = rng.uniform(0.0, 1.0, size=(count, 3))
    return GaussianCloud(
        centers=centers,
        log_scales=np.full((count, 3), np.log(mean_nn)),
        rotations=rotations,
        opacity_logits=np.full(count, _logit(np.asarray(0.1))),
        colors=colors,
    )
