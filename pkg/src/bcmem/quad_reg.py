"""Differentiable cube-consistency regularizer on the 3-D latent space.

Latent vectors are plain float64 arrays: a single point has shape (3,),
a batch has shape (B, 3). The loss has two instantiations:

* CUBE: each latent is mapped to a real 2x2x2 cube by a learned affine
  head; the slice-form discriminant D(z) must sit at a root of D - D^4,
  the scalar residual obtained when the composed pair form inherits the
  shared slice discriminant.
* PROBE: three learned quadratic forms on the latent space are composed
  pairwise by the symmetrized product of their augmented coefficient
  matrices, and det(composition) is pulled toward the product-of-
  discriminants target. This loss depends only on probe coefficients.

All gradients are analytic and checked against central differences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .nn_core import Param, uniform_init


class QuadLossMode(enum.Enum):
    CUBE = "cube"
    PROBE = "probe"
    NONE = "none"

    @classmethod
    def parse(cls, s: str) -> "QuadLossMode":
        try:
            return cls(s.lower())
        except ValueError:
            raise ValueError(f"unknown loss mode {s!r}; expected cube, probe or none") from None


# admissible index pairs (p, q) and the remaining index r
PAIRS = ((0, 1, 2), (0, 2, 1), (1, 2, 0))


class CubeHead:
    """Affine map from a 3-D latent to the 8 entries of a real cube.

    Entry order matches bcmem.cube_algebra.Cube: index 4i + 2j + k.
    """

    def __init__(self, rng: np.random.Generator):
        self.W = Param(uniform_init(rng, (8, 3), 3))
        self.b = Param(uniform_init(rng, (8,), 3))

    def entries(self, z: np.ndarray) -> np.ndarray:
        """(B, 3) latents -> (B, 8) cube entries."""
        return z @ self.W.data.T + self.b.data

    def params(self):
        return [("W", self.W), ("b", self.b)]


class ProbeQuadraticForm:
    """Learned quadratic form Q(z) = z^T A z + b^T z + c on R^3."""

    def __init__(self, rng: np.random.Generator | None = None, noise: float = 0.01):
        if rng is None:
            a0 = np.eye(3)
        else:
            a0 = np.eye(3) * (1.0 + noise * rng.standard_normal())
        self.A = Param(a0)
        self.b = Param(np.zeros(3))
        self.c = Param(np.asarray(1.0))

    def augmented(self) -> np.ndarray:
        """4x4 homogenized coefficient matrix [[A, b/2], [b^T/2, c]]."""
        m = np.zeros((4, 4))
        m[:3, :3] = self.A.data
        m[:3, 3] = self.b.data / 2.0
        m[3, :3] = self.b.data / 2.0
        m[3, 3] = self.c.data
        return m

    def symmetrize(self) -> None:
        self.A.data[:] = (self.A.data + self.A.data.T) / 2.0

    def params(self):
        return [("A", self.A), ("b", self.b), ("c", self.c)]


def probe_eval(p: ProbeQuadraticForm, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    return float(z @ p.A.data @ z + p.b.data @ z + p.c.data)


def probe_discriminant(p: ProbeQuadraticForm) -> float:
    """det of the augmented 4x4 matrix (the quadric's coefficient invariant)."""
    return float(np.linalg.det(p.augmented()))


def jordan_compose(p: ProbeQuadraticForm, q: ProbeQuadraticForm) -> np.ndarray:
    """Symmetrized product of the augmented matrices: (PQ + QP) / 2."""
    mp, mq = p.augmented(), q.augmented()
    return (mp @ mq + mq @ mp) / 2.0


# slice-1 coefficients of the cube (c0..c7) = entries (B, 8):
#   a  = -(c0*c3 - c1*c2)
#   cc = -(c4*c7 - c5*c6)
#   b  = -(c0*c7 + c3*c4 - c1*c6 - c2*c5)


def _slice1_coeffs(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = -(c[:, 0] * c[:, 3] - c[:, 1] * c[:, 2])
    cc = -(c[:, 4] * c[:, 7] - c[:, 5] * c[:, 6])
    b = -(c[:, 0] * c[:, 7] + c[:, 3] * c[:, 4] - c[:, 1] * c[:, 6] - c[:, 2] * c[:, 5])
    return a, b, cc


def real_slice_discriminants(c: np.ndarray) -> np.ndarray:
    """(B, 8) cube entries -> (B, 3) discriminants of the three slice forms."""
    perms = (
        (0, 1, 2, 3, 4, 5, 6, 7),  # slice along i
        (0, 2, 4, 6, 1, 3, 5, 7),  # slice along j
        (0, 4, 1, 5, 2, 6, 3, 7),  # slice along k
    )
    out = np.empty((c.shape[0], 3))
    for s, perm in enumerate(perms):
        a, b, cc = _slice1_coeffs(c[:, perm])
        out[:, s] = b * b - 4.0 * a * cc
    return out


def cube_discriminants(head: CubeHead, z: np.ndarray) -> np.ndarray:
    """(B, 3) latents -> (B,) slice-form discriminants of the learned cubes."""
    a, b, cc = _slice1_coeffs(head.entries(np.atleast_2d(z)))
    return b * b - 4.0 * a * cc


def cube_discriminant(head: CubeHead, z: np.ndarray) -> float:
    return float(cube_discriminants(head, np.asarray(z).reshape(1, 3))[0])


def cube_discriminant_grads(
    head: CubeHead, z: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic (dD/dW, dD/db, dD/dz) of the scalar D at a single latent."""
    z = np.asarray(z, dtype=np.float64).reshape(1, 3)
    c = head.entries(z)
    dc = _disc_grad_entries(c, np.ones(1))
    return dc.T @ z, dc[0], (dc @ head.W.data)[0]


def _disc_grad_entries(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Chain g = dL/dD (B,) through D = b^2 - 4*a*cc to dL/dc (B, 8)."""
    a, b, cc = _slice1_coeffs(c)
    da = np.zeros_like(c)
    da[:, 0] = -c[:, 3]
    da[:, 1] = c[:, 2]
    da[:, 2] = c[:, 1]
    da[:, 3] = -c[:, 0]
    dcc = np.zeros_like(c)
    dcc[:, 4] = -c[:, 7]
    dcc[:, 5] = c[:, 6]
    dcc[:, 6] = c[:, 5]
    dcc[:, 7] = -c[:, 4]
    db = np.empty_like(c)
    db[:, 0] = -c[:, 7]
    db[:, 1] = c[:, 6]
    db[:, 2] = c[:, 5]
    db[:, 3] = -c[:, 4]
    db[:, 4] = -c[:, 3]
    db[:, 5] = c[:, 2]
    db[:, 6] = c[:, 1]
    db[:, 7] = -c[:, 0]
    dD = 2.0 * b[:, None] * db - 4.0 * (cc[:, None] * da + a[:, None] * dcc)
    return g[:, None] * dD


def _det3(m: np.ndarray) -> float:
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _adjugate4(m: np.ndarray) -> np.ndarray:
    """Adjugate of a 4x4 matrix via cofactors; d det(M)/dM = adj(M)^T."""
    cof = np.empty((4, 4))
    rows = np.arange(4)
    for i in range(4):
        for j in range(4):
            minor = m[np.ix_(rows != i, rows != j)]
            cof[i, j] = (-1) ** (i + j) * _det3(minor)
    return cof.T


@dataclass
class QuadGrads:
    """Gradients of the regularizer; zero arrays for untouched parameters."""

    d_z: np.ndarray
    d_head_w: np.ndarray
    d_head_b: np.ndarray
    d_probe_a: list[np.ndarray] = field(default_factory=list)
    d_probe_b: list[np.ndarray] = field(default_factory=list)
    d_probe_c: list[np.ndarray] = field(default_factory=list)


def _probe_loss_and_aug_grads(
    probes: list[ProbeQuadraticForm],
) -> tuple[float, list[np.ndarray]]:
    augs = [p.augmented() for p in probes]
    dets = [float(np.linalg.det(m)) for m in augs]
    adjt = [_adjugate4(m).T for m in augs]
    loss = 0.0
    grads = [np.zeros((4, 4)) for _ in probes]
    for p, q, r in PAIRS:
        j = (augs[p] @ augs[q] + augs[q] @ augs[p]) / 2.0
        det_j = float(np.linalg.det(j))
        target = dets[p] * dets[q] * dets[r] ** 2
        resid = det_j - target
        loss += resid * resid
        gj = _adjugate4(j).T
        grads[p] += 2.0 * resid * ((gj @ augs[q].T + augs[q].T @ gj) / 2.0 - dets[q] * dets[r] ** 2 * adjt[p])
        grads[q] += 2.0 * resid * ((gj @ augs[p].T + augs[p].T @ gj) / 2.0 - dets[p] * dets[r] ** 2 * adjt[q])
        grads[r] += 2.0 * resid * (-dets[p] * dets[q] * 2.0 * dets[r] * adjt[r])
    return loss, grads


def _aug_grad_to_params(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    da = m[:3, :3].copy()
    db = (m[:3, 3] + m[3, :3]) / 2.0
    dc = np.asarray(m[3, 3])
    return da, db, dc


def quad_loss(
    head: CubeHead,
    probes: list[ProbeQuadraticForm],
    z: np.ndarray,
    mode: QuadLossMode,
) -> float:
    """Eq.-style consistency penalty; see module docstring for the two modes."""
    if mode is QuadLossMode.NONE:
        return 0.0
    if mode is QuadLossMode.CUBE:
        z = np.atleast_2d(z)
        if z.shape[0] == 0:
            raise ValueError("CUBE-mode quad loss needs a non-empty batch")
        d = cube_discriminants(head, z)
        resid = d - d**4
        return float(3.0 / z.shape[0] * np.sum(resid * resid))
    loss, _ = _probe_loss_and_aug_grads(probes)
    return float(loss)


def quad_loss_backward(
    head: CubeHead,
    probes: list[ProbeQuadraticForm],
    z: np.ndarray,
    mode: QuadLossMode,
) -> QuadGrads:
    """Analytic gradients of quad_loss for the active mode's parameters."""
    z = np.atleast_2d(z)
    grads = QuadGrads(
        d_z=np.zeros_like(z),
        d_head_w=np.zeros_like(head.W.data),
        d_head_b=np.zeros_like(head.b.data),
        d_probe_a=[np.zeros((3, 3)) for _ in probes],
        d_probe_b=[np.zeros(3) for _ in probes],
        d_probe_c=[np.zeros(()) for _ in probes],
    )
    if mode is QuadLossMode.NONE:
        return grads
    if mode is QuadLossMode.CUBE:
        if z.shape[0] == 0:
            raise ValueError("CUBE-mode quad loss needs a non-empty batch")
        c = head.entries(z)
        a, b, cc = _slice1_coeffs(c)
        d = b * b - 4.0 * a * cc
        g_d = (3.0 / z.shape[0]) * 2.0 * (d - d**4) * (1.0 - 4.0 * d**3)
        dc = _disc_grad_entries(c, g_d)
        grads.d_head_w = dc.T @ z
        grads.d_head_b = dc.sum(axis=0)
        grads.d_z = dc @ head.W.data
        return grads
    _, aug_grads = _probe_loss_and_aug_grads(probes)
    for k, m in enumerate(aug_grads):
        grads.d_probe_a[k], grads.d_probe_b[k], grads.d_probe_c[k] = _aug_grad_to_params(m)
    return grads


def total_loss(task_loss: float, quad: float, lam: float) -> float:
    """task + lam * quad; lam = 0 is the unregularized ablation arm."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return task_loss + lam * quad


def discriminant_residuals(head: CubeHead, z: np.ndarray) -> np.ndarray:
    """|D (D^3 - 1)| per latent: distance from the loss's zero set."""
    d = cube_discriminants(head, np.atleast_2d(z))
    return np.abs(d * (d**3 - 1.0))


def cube_loss_closure(head: CubeHead, z: np.ndarray):
    """(loss_and_grads, arrays) for finite-difference checks of CUBE mode."""
    z = np.atleast_2d(z).copy()

    def loss_and_grads():
        loss = quad_loss(head, [], z, QuadLossMode.CUBE)
        g = quad_loss_backward(head, [], z, QuadLossMode.CUBE)
        return loss, [g.d_head_w, g.d_head_b, g.d_z]

    return loss_and_grads, [head.W.data, head.b.data, z]


def probe_loss_closure(probes: list[ProbeQuadraticForm]):
    """(loss_and_grads, arrays) for finite-difference checks of PROBE mode."""
    head = CubeHead(np.random.default_rng(0))
    dummy = np.zeros((1, 3))

    def loss_and_grads():
        loss = quad_loss(head, probes, dummy, QuadLossMode.PROBE)
        g = quad_loss_backward(head, probes, dummy, QuadLossMode.PROBE)
        flat = []
        for k in range(len(probes)):
            flat += [g.d_probe_a[k], g.d_probe_b[k], g.d_probe_c[k]]
        return loss, flat

    arrays = []
    for p in probes:
        arrays += [p.A.data, p.b.data, p.c.data]
    return loss_and_grads, arrays
