"""Fitting energy for one person in one frame, with analytic gradients.

Parameters are packed as ``[t (3), root pose (3), other joint poses (3(K-1)), betas (B)]``.
The gradient is obtained by hand-written reverse-mode differentiation
through projection, linear blend skinning, the kinematic chain and the
axis-angle exponential map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..body_model import BodyModel, BodyParams, LandmarkSet, rodrigues, rodrigues_jacobian
from ..camera import MIN_DEPTH, Rig
from ..observe import LandmarkObservations
from .robust import RobustEstimator, robust, robust_weight


@dataclass(frozen=True)
class EnergyBreakdown:
    e_ldmks: float
    e_shape: float
    e_pose: float
    e_temp: float

    @property
    def total(self) -> float:
        return self.e_ldmks + self.e_shape + self.e_pose + self.e_temp

    def to_dict(self) -> dict:
        return {"e_ldmks": self.e_ldmks, "e_shape": self.e_shape, "e_pose": self.e_pose,
                "e_temp": self.e_temp, "total": self.total}


@dataclass(frozen=True)
class PriorWeights:
    shape: float = 1e-3
    pose: float = 1e-4
    temp: float = 1e-2


def geodesic_sq_and_grad(R: np.ndarray, R_prev: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared rotation angle between ``R_prev`` and ``R`` and its gradient in ``R``."""
    Q = R_prev.T @ R
    y = np.array([Q[2, 1] - Q[1, 2], Q[0, 2] - Q[2, 0], Q[1, 0] - Q[0, 1]])
    s = 0.5 * math.sqrt(float(y @ y))
    c = 0.5 * (Q[0, 0] + Q[1, 1] + Q[2, 2] - 1.0)
    phi = math.atan2(s, c)
    if phi < 1e-4:
        half_ratio = 0.5 + phi * phi / 12.0  # phi / (2 sin phi)
    else:
        half_ratio = phi / (2.0 * s)
    y_skew = np.array([[0.0, -y[2], y[1]], [y[2], 0.0, -y[0]], [-y[1], y[0], 0.0]])
    dQ = half_ratio * c * y_skew - phi * s * np.eye(3)
    return phi * phi, R_prev @ dQ


class FrameObjective:
    """Eq.-style energy ``E_ldmks + E_shape + E_pose + E_temp`` for one person and frame.

    Args:
        model: body model.
        landmarks: landmark vertex indices matching the observation arrays.
        rig: cameras.
        obs: observations of this person in this frame.
        estimator: robust estimator applied to whitened residual norms.
        p_min: landmarks with visibility below this contribute nothing.
        priors: regularizer weights; ``None`` disables all priors.
        prev_pose: (K, 3) pose of the previous solved frame for the temporal term.
    """

    def __init__(
        self,
        model: BodyModel,
        landmarks: LandmarkSet,
        rig: Rig,
        obs: LandmarkObservations,
        estimator: RobustEstimator,
        p_min: float = 0.5,
        priors: Optional[PriorWeights] = None,
        prev_pose: Optional[np.ndarray] = None,
    ):
        if obs.num_cameras != len(rig):
            raise ValueError(f"observations have {obs.num_cameras} cameras, rig has {len(rig)}")
        if obs.num_landmarks != len(landmarks):
            raise ValueError(f"observations have {obs.num_landmarks} landmarks, set has {len(landmarks)}")
        if np.any(obs.sigma <= 0):
            raise ValueError("sigma must be positive")
        self.model = model
        self.K, self.B = model.num_joints, model.num_betas
        self.parents = model.parents.tolist()
        idx = landmarks.indices
        self.T_L = model.template_vertices[idx]
        self.S_L = model.shape_dirs[:, idx]
        self.W_L = model.skinning_weights[idx]
        self.J_T = model.joint_regressor @ model.template_vertices
        self.J_S = np.einsum("kv,bvc->bkc", model.joint_regressor, model.shape_dirs)
        self.Rc = np.stack([c.rotation for c in rig.cameras])
        self.tc = np.stack([c.translation for c in rig.cameras])
        self.focal = np.array([[c.fx, c.fy] for c in rig.cameras])
        self.center = np.array([[c.cx, c.cy] for c in rig.cameras])
        self.C = len(rig)
        self.mu = obs.mu
        self.sigma = obs.sigma
        self.p_eff = np.where(obs.p >= p_min, obs.p, 0.0)
        self.active = self.p_eff > 0
        self.estimator = estimator
        self.priors = priors
        self.prev_R = None
        if prev_pose is not None and priors is not None and priors.temp > 0:
            self.prev_R = np.stack([rodrigues(v) for v in np.asarray(prev_pose).reshape(-1, 3)])
        self.behind_count = 0

    @property
    def size(self) -> int:
        return 3 + 3 * self.K + self.B

    def unpack(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x[:3], x[3:3 + 3 * self.K].reshape(self.K, 3), x[3 + 3 * self.K:]

    # ------------------------------------------------------------------

    def landmark_positions(self, x):
        t, pose, betas = self.unpack(x)
        return self._forward(t, pose, betas)[0]

    def _forward(self, t, pose, betas):
        vs = self.T_L + np.tensordot(betas, self.S_L, axes=1)
        J = self.J_T + np.tensordot(betas, self.J_S, axes=1)
        R = np.empty((self.K, 3, 3))
        dR = np.empty((self.K, 3, 3, 3))
        for j in range(self.K):
            R[j], dR[j] = rodrigues_jacobian(pose[j])
        Rg = np.empty((self.K, 3, 3))
        tg = np.empty((self.K, 3))
        Rg[0], tg[0] = R[0], J[0]
        for j in range(1, self.K):
            p = self.parents[j]
            Rg[j] = Rg[p] @ R[j]
            tg[j] = Rg[p] @ (J[j] - J[p]) + tg[p]
        D = vs[:, None, :] - J[None, :, :]  # (N, K, 3)
        cand = np.einsum("kab,nkb->nka", Rg, D) + tg[None]
        v = np.einsum("nk,nka->na", self.W_L, cand) + t
        return v, (vs, J, R, dR, Rg, tg, D)

    def _landmark_term(self, v, need_grad):
        X = np.einsum("cab,nb->cna", self.Rc, v) + self.tc[:, None, :]
        z = X[..., 2]
        front = z > MIN_DEPTH
        use = self.active & front
        self.behind_count = int(np.count_nonzero(self.active & ~front))
        zs = np.where(front, z, 1.0)
        uv = self.focal[:, None, :] * X[..., :2] / zs[..., None] + self.center[:, None, :]
        r = self.mu - uv
        r = np.where(use[..., None], r, 0.0)
        norm = np.sqrt((r * r).sum(axis=-1))
        s = norm / self.sigma
        rho = robust(s, self.estimator)
        e = float(np.sum(np.where(use, self.p_eff * rho, 0.0))) / self.C
        if not need_grad:
            return e, None
        wgt = np.where(use, self.p_eff * robust_weight(s, self.estimator) / self.sigma ** 2, 0.0)
        g_uv = -(wgt[..., None] * r) / self.C
        fx = self.focal[:, None, 0]
        fy = self.focal[:, None, 1]
        gx = g_uv[..., 0] * fx / zs
        gy = g_uv[..., 1] * fy / zs
        gz = -(gx * X[..., 0] + gy * X[..., 1]) / zs
        gX = np.stack([gx, gy, gz], axis=-1)
        g_v = np.einsum("cna,cab->nb", gX, self.Rc)
        return e, g_v

    def _backprop_lbs(self, g_v, cache):
        vs, J, R, dR, Rg, tg, D = cache
        K = self.K
        g_t = g_v.sum(axis=0)
        Gw = self.W_L[:, :, None] * g_v[:, None, :]  # (N, K, 3)
        dRg = np.einsum("nka,nkb->kab", Gw, D)
        dtg = Gw.sum(axis=0)
        dJ = -np.einsum("kab,ka->kb", Rg, dtg)
        dvs = np.einsum("nka,kab->nb", Gw, Rg)
        dR_local = np.empty((K, 3, 3))
        for j in range(K - 1, 0, -1):
            p = self.parents[j]
            dR_local[j] = Rg[p].T @ dRg[j]
            off = J[j] - J[p]
            dRg[p] += dRg[j] @ R[j].T + np.outer(dtg[j], off)
            dtg[p] += dtg[j]
            back = Rg[p].T @ dtg[j]
            dJ[j] += back
            dJ[p] -= back
        dR_local[0] = dRg[0]
        dJ[0] += dtg[0]
        g_pose = np.einsum("kab,kiab->ki", dR_local, dR)
        g_beta = np.einsum("bnc,nc->b", self.S_L, dvs) + np.einsum("bkc,kc->b", self.J_S, dJ)
        return g_t, g_pose, g_beta

    # ------------------------------------------------------------------

    def evaluate(self, x, need_grad: bool = True) -> tuple[EnergyBreakdown, Optional[np.ndarray]]:
        """Energy breakdown and (optionally) the gradient of the total."""
        t, pose, betas = self.unpack(x)
        v, cache = self._forward(t, pose, betas)
        e_ldmks, g_v = self._landmark_term(v, need_grad)
        e_shape = e_pose = e_temp = 0.0
        if need_grad:
            g_t, g_pose, g_beta = self._backprop_lbs(g_v, cache)
        pr = self.priors
        if pr is not None:
            e_shape = pr.shape * float(betas @ betas)
            e_pose = pr.pose * float(np.sum(pose[1:] ** 2))
            if need_grad:
                g_beta = g_beta + 2.0 * pr.shape * betas
                g_pose[1:] += 2.0 * pr.pose * pose[1:]
            if self.prev_R is not None:
                R, dR = cache[2], cache[3]
                for j in range(self.K):
                    d2, gR = geodesic_sq_and_grad(R[j], self.prev_R[j])
                    e_temp += pr.temp * d2
                    if need_grad:
                        g_pose[j] += pr.temp * np.einsum("ab,iab->i", gR, dR[j])
        breakdown = EnergyBreakdown(e_ldmks, e_shape, e_pose, e_temp)
        if not need_grad:
            return breakdown, None
        grad = np.concatenate([g_t, g_pose.reshape(-1), g_beta])
        return breakdown, grad

    def gauss_newton(self, x, step: float = 1e-6) -> np.ndarray:
        """Gauss-Newton approximation of the Hessian at ``x``, treating every counted landmark as an inlier.

        Landmark Jacobians come from central differences of the skinned
        positions; the result only shapes the search metric, never the
        energy or its gradient.
        """
        x = np.asarray(x, dtype=np.float64)
        n = x.size
        t, pose, betas = self.unpack(x)
        v = self._forward(t, pose, betas)[0]
        dv = np.empty((n,) + v.shape)
        for i in range(n):
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            dv[i] = (self.landmark_positions(xp) - self.landmark_positions(xm)) / (2.0 * step)
        X = np.einsum("cab,nb->cna", self.Rc, v) + self.tc[:, None, :]
        z = X[..., 2]
        use = self.active & (z > MIN_DEPTH)
        zs = np.where(use, z, 1.0)
        fx = self.focal[:, None, 0]
        fy = self.focal[:, None, 1]
        dX = np.einsum("cab,inb->icna", self.Rc, dv)
        du = np.stack([fx * (dX[..., 0] - X[..., 0] / zs * dX[..., 2]) / zs,
                       fy * (dX[..., 1] - X[..., 1] / zs * dX[..., 2]) / zs], axis=-1)
        w0 = float(robust_weight(0.0, self.estimator))
        wgt = np.where(use, self.p_eff * w0 / self.sigma ** 2, 0.0) / self.C
        H = np.einsum("cn,icnd,jcnd->ij", wgt, du, du)
        pr = self.priors
        if pr is not None:
            K = self.K
            diag = np.zeros(n)
            diag[6:3 + 3 * K] += 2.0 * pr.pose
            diag[3 + 3 * K:] += 2.0 * pr.shape
            if self.prev_R is not None:
                diag[3:3 + 3 * K] += 2.0 * pr.temp
            H[np.diag_indices(n)] += diag
        return 0.5 * (H + H.T)

    def value(self, x) -> float:
        return self.evaluate(x, need_grad=False)[0].total

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        b, g = self.evaluate(x)
        return b.total, g


def energy_landmarks(params: BodyParams, rig: Rig, obs: LandmarkObservations, model: BodyModel,
                     landmarks: LandmarkSet, estimator: RobustEstimator, p_min: float = 0.5) -> float:
    """Robust reprojection energy averaged over cameras."""
    obj = FrameObjective(model, landmarks, rig, obs, estimator, p_min)
    return obj.evaluate(params.pack(), need_grad=False)[0].e_ldmks


def energy_total(params: BodyParams, prev_params: Optional[BodyParams], rig: Rig,
                 obs: LandmarkObservations, model: BodyModel, landmarks: LandmarkSet,
                 priors: PriorWeights, estimator: RobustEstimator, p_min: float = 0.5) -> EnergyBreakdown:
    """Landmark term plus shape, pose and temporal regularizers."""
    prev = None if prev_params is None else prev_params.pose
    obj = FrameObjective(model, landmarks, rig, obs, estimator, p_min, priors, prev)
    return obj.evaluate(params.pack(), need_grad=False)[0]
