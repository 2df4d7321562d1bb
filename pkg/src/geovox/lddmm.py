"""Control-point LDDMM: geodesic shooting, flows, registration and tracking.

The velocity field is a Gaussian-kernel combination of momenta carried by
control points. Initial momenta are found by gradient descent on a
kernel-measure discrepancy plus a kernel-norm penalty, with gradients
obtained by reverse accumulation through the RK2 integrator.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import InvalidInput, NotConverged, NumericalBlowup
from .shapes import QuadMesh

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6


def _as_points(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "points", getattr(x, "vertices", x)), dtype=float)
    return arr.reshape(-1, 3)


def gaussian_kernel(x, y, sigma: float) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (sigma * sigma))


# --------------------------------------------------------------- state


@dataclass(frozen=True, eq=False)
class ShootingState:
    q: np.ndarray
    mu: np.ndarray
    sigma_v: float = 8.0
    n_steps: int = 15

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1, 3)
        mu = np.array(self.mu, dtype=float).reshape(-1, 3)
        if len(q) < 1 or q.shape != mu.shape:
            raise InvalidInput("q and mu must be non-empty with identical shapes")
        if not (self.sigma_v > 0):
            raise InvalidInput("sigma_v must be positive")
        if int(self.n_steps) < 1:
            raise InvalidInput("n_steps must be at least 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(mu))):
            raise InvalidInput("q and mu must be finite")
        q.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "n_steps", int(self.n_steps))


@dataclass
class Shot:
    """Full-step states ``q[t], mu[t]`` (t = 0..n) and midpoint states."""
    q: np.ndarray
    mu: np.ndarray
    q_mid: np.ndarray
    mu_mid: np.ndarray
    sigma_v: float

    @property
    def n_steps(self) -> int:
        return len(self.q) - 1


def hamiltonian(q, mu, sigma: float) -> float:
    K = gaussian_kernel(q, q, sigma)
    return 0.5 * float(np.einsum("ij,ij->", K, mu @ mu.T))


def velocity(state: ShootingState, x) -> np.ndarray:
    """``v(x) = sum_i K(x, q_i) mu_i`` at one point or an array of points."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    v = _apply(pts, state.q, state.mu, state.sigma_v)
    return v.reshape(x.shape)


def _rhs(q, mu, inv_s2):
    dq = np.empty_like(q)
    dmu = np.empty_like(q)
    _kernels.geodesic_rhs(q, mu, inv_s2, dq, dmu)
    return dq, dmu


def _rhs_vjp(q, mu, alpha, beta, inv_s2):
    gq = np.empty_like(q)
    gmu = np.empty_like(q)
    _kernels.geodesic_rhs_vjp(q, mu, np.ascontiguousarray(alpha), np.ascontiguousarray(beta),
                              inv_s2, gq, gmu)
    return gq, gmu


def _apply(x, y, w, sigma):
    out = np.empty((len(x), 3))
    _kernels.kernel_apply(np.ascontiguousarray(x), np.ascontiguousarray(y),
                          np.ascontiguousarray(w), 1.0 / (sigma * sigma), out)
    return out


def _scene_scale(q) -> float:
    return max(1.0, float(np.abs(q).max()))


def shoot(state: ShootingState) -> Shot:
    """RK2 (midpoint) integration of the geodesic equations over [0, 1]."""
    n = state.n_steps
    h = 1.0 / n
    inv_s2 = 1.0 / state.sigma_v ** 2
    N = len(state.q)
    qs = np.empty((n + 1, N, 3))
    ms = np.empty((n + 1, N, 3))
    qm = np.empty((n, N, 3))
    mm = np.empty((n, N, 3))
    qs[0], ms[0] = state.q, state.mu
    limit = BLOWUP_FACTOR * _scene_scale(state.q)
    for t in range(n):
        dq, dmu = _rhs(qs[t], ms[t], inv_s2)
        qm[t] = qs[t] + 0.5 * h * dq
        mm[t] = ms[t] + 0.5 * h * dmu
        dq, dmu = _rhs(qm[t], mm[t], inv_s2)
        qs[t + 1] = qs[t] + h * dq
        ms[t + 1] = ms[t] + h * dmu
        if not (np.all(np.isfinite(qs[t + 1])) and np.abs(qs[t + 1]).max() <= limit):
            raise NumericalBlowup(f"trajectory diverged at step {t + 1}; reduce the momenta or step size")
    return Shot(qs, ms, qm, mm, state.sigma_v)


def flow(state: ShootingState, points, shot: Shot | None = None) -> np.ndarray:
    """Advect ``points`` through the time-dependent velocity of ``state``.

    Uses the same midpoint scheme and the stored midpoint control states,
    so flowing the control points reproduces the shot exactly.
    """
    shot = shot or shoot(state)
    x = _as_points(points).copy()
    n = shot.n_steps
    h = 1.0 / n
    sig = shot.sigma_v
    limit = BLOWUP_FACTOR * max(_scene_scale(x), _scene_scale(shot.q[0]))
    for t in range(n):
        xm = x + 0.5 * h * _apply(x, shot.q[t], shot.mu[t], sig)
        x = x + h * _apply(xm, shot.q_mid[t], shot.mu_mid[t], sig)
        if not (np.all(np.isfinite(x)) and np.abs(x).max() <= limit):
            raise NumericalBlowup(f"flow diverged at step {t + 1}")
    return x


# -------------------------------------------------------- data attachment


def kernel_discrepancy(x, y, sigma_w: float) -> float:
    """Squared Gaussian-kernel distance between the normalised measures of two clouds."""
    x, y = _as_points(x), _as_points(y)
    return _mean_kernel(x, x, sigma_w) - 2.0 * _mean_kernel(x, y, sigma_w) + _mean_kernel(y, y, sigma_w)


def _discrepancy_and_grad(x, y, sigma_w, kyy):
    inv_s2 = 1.0 / (sigma_w * sigma_w)
    n, m = len(x), len(y)
    x = np.ascontiguousarray(x)
    rxx = np.empty(n)
    gxx = np.empty((n, 3))
    rxy = np.empty(n)
    gxy = np.empty((n, 3))
    _kernels.kernel_rowsums(x, x, inv_s2, rxx, gxx)
    _kernels.kernel_rowsums(x, y, inv_s2, rxy, gxy)
    val = rxx.sum() / n ** 2 - 2.0 * rxy.sum() / (n * m) + kyy
    grad = (-4.0 * inv_s2 / n ** 2) * gxx + (4.0 * inv_s2 / (n * m)) * gxy
    return float(val), grad


def _mean_kernel(x, y, sigma_w):
    rows = np.empty(len(x))
    scratch = np.empty((len(x), 3))
    _kernels.kernel_rowsums(np.ascontiguousarray(x), np.ascontiguousarray(y),
                            1.0 / (sigma_w * sigma_w), rows, scratch)
    return float(rows.sum()) / (len(x) * len(y))


def median_spacing(points) -> float:
    pts = _as_points(points)
    if len(pts) < 2:
        raise InvalidInput("need at least two points for a spacing estimate")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]))


# ------------------------------------------------------------ registration


@dataclass
class RegistrationSettings:
    sigma_v: float = 8.0
    sigma_w: float | None = None     # None: 4x the target's median spacing
    gamma: float | None = None       # None: calibrated from the first gradient
    gamma_fraction: float = 1e-4     # penalty share of the loss at the calibration probe
    n_steps: int = 15
    max_iters: int = 200
    step_size: float | None = None   # None: first step moves points by sigma_w / 2
    grad_tol: float = 1e-4           # relative to the initial gradient norm
    min_step: float = 1e-10          # relative to the initial step
    step_growth: float = 1.0         # 1.0 keeps the step fixed between halvings

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegistrationProblem:
    source: np.ndarray
    target: np.ndarray
    settings: RegistrationSettings = field(default_factory=RegistrationSettings)

    def __post_init__(self):
        self.source = _as_points(self.source)
        self.target = _as_points(self.target)
        if len(self.source) == 0 or len(self.target) == 0:
            raise InvalidInput("source and target must be non-empty")
        s = self.settings
        if not s.sigma_v > 0 or (s.sigma_w is not None and not s.sigma_w > 0):
            raise InvalidInput("kernel widths must be positive")
        if s.gamma is not None and s.gamma < 0:
            raise InvalidInput("gamma must be non-negative")


@dataclass
class RegistrationResult:
    state: ShootingState
    flowed: np.ndarray
    loss_history: list
    data_term: float
    iterations: int
    converged: bool
    gamma: float
    sigma_w: float
    step_size: float

    def diagnostics(self) -> dict:
        return {
            "loss": self.loss_history[-1],
            "data_term": self.data_term,
            "iters": self.iterations,
            "converged": self.converged,
            "gamma": self.gamma,
            "sigma_w": self.sigma_w,
        }


class _Objective:
    """Loss and gradient with respect to the initial momenta (q0 fixed)."""

    def __init__(self, q0, target, sigma_v, sigma_w, n_steps, gamma=0.0):
        self.q0 = q0
        self.target = target
        self.sigma_v = sigma_v
        self.sigma_w = sigma_w
        self.n_steps = n_steps
        self.gamma = gamma
        self.K0 = gaussian_kernel(q0, q0, sigma_v)
        self.target = np.ascontiguousarray(target)
        self.kyy = _mean_kernel(target, target, sigma_w)

    def loss(self, mu):
        shot = shoot(ShootingState(self.q0, mu, self.sigma_v, self.n_steps))
        data = _discrepancy_and_grad(shot.q[-1], self.target, self.sigma_w, self.kyy)[0]
        return data + self.gamma * float(np.einsum("ij,ij->", self.K0, mu @ mu.T)), data, shot

    def loss_and_grad(self, mu):
        shot = shoot(ShootingState(self.q0, mu, self.sigma_v, self.n_steps))
        data, lam_q = _discrepancy_and_grad(shot.q[-1], self.target, self.sigma_w, self.kyy)
        lam_mu = np.zeros_like(mu)
        h = 1.0 / self.n_steps
        inv_s2 = 1.0 / self.sigma_v ** 2
        for t in range(self.n_steps - 1, -1, -1):
            gq_m, gm_m = _rhs_vjp(shot.q_mid[t], shot.mu_mid[t], lam_q, lam_mu, inv_s2)
            gq_m *= h
            gm_m *= h
            gq_k, gm_k = _rhs_vjp(shot.q[t], shot.mu[t], gq_m, gm_m, inv_s2)
            lam_q = lam_q + gq_m + 0.5 * h * gq_k
            lam_mu = lam_mu + gm_m + 0.5 * h * gm_k
        reg = self.gamma * float(np.einsum("ij,ij->", self.K0, mu @ mu.T))
        grad = lam_mu + 2.0 * self.gamma * (self.K0 @ mu)
        return data + reg, data, grad, shot


def _data_width(problem: RegistrationProblem) -> float:
    s = problem.settings
    if s.sigma_w is not None:
        return float(s.sigma_w)
    if len(problem.target) > 1:
        return 4.0 * median_spacing(problem.target)
    return float(s.sigma_v)


def objective(problem: RegistrationProblem, gamma: float | None = None):
    """Callable pair ``(loss(mu), loss_and_grad(mu))`` for a problem (testing aid)."""
    s = problem.settings
    sw = _data_width(problem)
    obj = _Objective(problem.source, problem.target, s.sigma_v, sw, s.n_steps,
                     s.gamma if gamma is None else gamma)
    return (lambda mu: obj.loss(np.asarray(mu, float).reshape(-1, 3))[0],
            lambda mu: obj.loss_and_grad(np.asarray(mu, float).reshape(-1, 3))[::2])


def register(problem: RegistrationProblem, raise_on_fail: bool = False) -> RegistrationResult:
    """Estimate initial momenta at the source points that carry them onto the target."""
    s = problem.settings
    q0 = problem.source
    sigma_w = _data_width(problem)
    obj = _Objective(q0, problem.target, s.sigma_v, sigma_w, s.n_steps)
    mu = np.zeros_like(q0)
    loss, data, grad, shot = obj.loss_and_grad(mu)
    g0 = float(np.linalg.norm(grad))
    # the penalty vanishes at mu = 0, so its gradient does not depend on gamma yet
    direction = obj.K0 @ grad
    dmax = float(np.linalg.norm(direction, axis=1).max()) if g0 > 0 else 0.0
    if s.gamma is None:
        if dmax > 0:
            probe = grad * (0.5 * sigma_w / dmax)
            r_probe = float(np.einsum("ij,ij->", obj.K0, probe @ probe.T))
            gamma = s.gamma_fraction * loss / r_probe if r_probe > 0 else 0.0
        else:
            gamma = 0.0
    else:
        gamma = float(s.gamma)
    obj.gamma = gamma
    if s.step_size is not None:
        step = float(s.step_size)
    else:
        step = 0.5 * sigma_w / dmax if dmax > 0 else 1.0
    step0 = step
    history = [loss]
    converged = g0 == 0.0
    it = 0
    while not converged and it < s.max_iters:
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= s.grad_tol * g0:
            converged = True
            break
        it += 1
        accepted = False
        while step >= s.min_step * step0:
            trial = mu - step * grad
            try:
                t_loss, t_data, t_grad, t_shot = obj.loss_and_grad(trial)
            except NumericalBlowup:
                step *= 0.5
                continue
            if t_loss <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no descent along the gradient at machine precision: stationary
            converged = True
            break
        mu, loss, data, grad, shot = trial, t_loss, t_data, t_grad, t_shot
        history.append(loss)
        step *= s.step_growth
    if not converged and float(np.linalg.norm(grad)) <= s.grad_tol * g0:
        converged = True
    state = ShootingState(q0, mu, s.sigma_v, s.n_steps)
    result = RegistrationResult(state, shot.q[-1].copy(), history, data, it, converged,
                                gamma, sigma_w, step0)
    if not converged:
        log.warning("registration stopped after %d iterations (gradient ratio %.3g)",
                    it, float(np.linalg.norm(grad)) / g0)
        if raise_on_fail:
            raise NotConverged("registration did not reach the gradient tolerance", result=result)
    return result


# ---------------------------------------------------------------- tracking


@dataclass
class Trajectory:
    frames: list                      # (n, 3) arrays, frame 0 = initial mesh
    faces: np.ndarray
    diagnostics: list = field(default_factory=list)

    def mesh(self, t: int) -> QuadMesh:
        return QuadMesh(self.frames[t], self.faces)

    def __len__(self) -> int:
        return len(self.frames)


class TrackingFailed(NotConverged):
    """A frame failed; ``result`` holds the partial trajectory."""


def track_sequence(mesh0: QuadMesh, contours, settings: RegistrationSettings | None = None,
                   on_frame=None) -> Trajectory:
    """Propagate the mesh vertices frame by frame, registering each onto the next contour."""
    settings = settings or RegistrationSettings()
    contours = [_as_points(c) for c in contours]
    if len(contours) < 2:
        raise InvalidInput("tracking needs at least two frames")
    faces = mesh0.faces.copy()
    traj = Trajectory([mesh0.vertices.copy()], faces)
    for t in range(len(contours) - 1):
        try:
            res = register(RegistrationProblem(traj.frames[-1], contours[t + 1], settings))
        except (NumericalBlowup, InvalidInput) as exc:
            raise TrackingFailed(f"frame {t + 1}: {exc}", result=traj) from exc
        traj.frames.append(res.flowed)
        diag = {"frame": t + 1, **res.diagnostics(),
                "error": tracking_error(res.flowed, contours[t + 1])}
        traj.diagnostics.append(diag)
        log.info("frame %d: loss %.4g, %d iterations", t + 1, diag["loss"], diag["iters"])
        if on_frame is not None:
            on_frame(t + 1, traj)
    return traj


def tracking_error(tracked, final_contour) -> float:
    """Mean distance from each tracked point to its nearest contour point."""
    x, c = _as_points(tracked), _as_points(final_contour)
    if len(x) == 0 or len(c) == 0:
        raise InvalidInput("tracking error needs non-empty inputs")
    d, _ = cKDTree(c).query(x)
    return float(d.mean())
