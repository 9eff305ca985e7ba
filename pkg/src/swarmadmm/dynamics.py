"""
Quadrotor dynamics and RK4 discretization.

State layout (12): position, velocity, roll-pitch-yaw (ZYX Euler), body rates.
Input layout (4): collective thrust along body z, body torques.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
RATE = slice(9, 12)

NX = 12
NU = 4

PITCH_LIMIT = math.pi / 2 - 1e-3

OK, SINGULAR, NONFINITE = 0, 1, 2


class DynamicsError(RuntimeError):
    """Raised when a rollout cannot be continued.

    ``step`` is the rollout index at which the failure occurred, if known.
    """

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (rollout step {step})")
        self.step = step


class AttitudeSingularity(DynamicsError):
    pass


class NonFinite(DynamicsError):
    pass


@dataclass(frozen=True)
class DroneParams:
    mass: float = 1.0
    inertia_diag: tuple = (0.01, 0.01, 0.02)
    gravity: float = 9.81

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        J = tuple(float(v) for v in self.inertia_diag)
        if len(J) != 3 or min(J) <= 0:
            raise ValueError(f"inertia_diag must be 3 positive values, got {self.inertia_diag}")
        object.__setattr__(self, "inertia_diag", J)

    @property
    def hover_thrust(self):
        return self.mass * self.gravity

    def hover_input(self):
        return np.array([self.hover_thrust, 0.0, 0.0, 0.0])


@njit(cache=True)
def _quad_deriv(x, u, p, out):
    m, Jx, Jy, Jz, g = p[0], p[1], p[2], p[3], p[4]
    phi, th, psi = x[6], x[7], x[8]
    wx, wy, wz = x[9], x[10], x[11]
    if not abs(th) < PITCH_LIMIT:
        return SINGULAR
    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(th), math.cos(th)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    tth = sth / cth
    a = u[0] / m
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = a * (cpsi * sth * cphi + spsi * sphi)
    out[4] = a * (spsi * sth * cphi - cpsi * sphi)
    out[5] = a * cth * cphi - g
    out[6] = wx + sphi * tth * wy + cphi * tth * wz
    out[7] = cphi * wy - sphi * wz
    out[8] = (sphi * wy + cphi * wz) / cth
    out[9] = (u[1] - (Jz - Jy) * wy * wz) / Jx
    out[10] = (u[2] - (Jx - Jz) * wz * wx) / Jy
    out[11] = (u[3] - (Jy - Jx) * wx * wy) / Jz
    return OK


@njit(cache=True)
def _quad_jac(x, u, p, A, B):
    m, Jx, Jy, Jz = p[0], p[1], p[2], p[3]
    phi, th, psi = x[6], x[7], x[8]
    wx, wy, wz = x[9], x[10], x[11]
    if not abs(th) < PITCH_LIMIT:
        return SINGULAR
    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(th), math.cos(th)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    tth = sth / cth
    a = u[0] / m
    A[:, :] = 0.0
    B[:, :] = 0.0
    A[0, 3] = 1.0
    A[1, 4] = 1.0
    A[2, 5] = 1.0

    # thrust direction R(att) e3 and its partials
    A[3, 6] = a * (-cpsi * sth * sphi + spsi * cphi)
    A[4, 6] = a * (-spsi * sth * sphi - cpsi * cphi)
    A[5, 6] = a * (-cth * sphi)
    A[3, 7] = a * cpsi * cth * cphi
    A[4, 7] = a * spsi * cth * cphi
    A[5, 7] = -a * sth * cphi
    A[3, 8] = a * (-spsi * sth * cphi + cpsi * sphi)
    A[4, 8] = a * (cpsi * sth * cphi + spsi * sphi)
    B[3, 0] = (cpsi * sth * cphi + spsi * sphi) / m
    B[4, 0] = (spsi * sth * cphi - cpsi * sphi) / m
    B[5, 0] = cth * cphi / m

    s = sphi * wy + cphi * wz
    sec2 = 1.0 / (cth * cth)
    A[6, 6] = cphi * tth * wy - sphi * tth * wz
    A[6, 7] = s * sec2
    A[7, 6] = -sphi * wy - cphi * wz
    A[8, 6] = (cphi * wy - sphi * wz) / cth
    A[8, 7] = s * sth * sec2
    # Euler kinematics matrix
    A[6, 9] = 1.0
    A[6, 10] = sphi * tth
    A[6, 11] = cphi * tth
    A[7, 10] = cphi
    A[7, 11] = -sphi
    A[8, 10] = sphi / cth
    A[8, 11] = cphi / cth

    A[9, 10] = -(Jz - Jy) * wz / Jx
    A[9, 11] = -(Jz - Jy) * wy / Jx
    A[10, 9] = -(Jx - Jz) * wz / Jy
    A[10, 11] = -(Jx - Jz) * wx / Jy
    A[11, 9] = -(Jy - Jx) * wy / Jz
    A[11, 10] = -(Jy - Jx) * wx / Jz
    B[9, 1] = 1.0 / Jx
    B[10, 2] = 1.0 / Jy
    B[11, 3] = 1.0 / Jz
    return OK


@njit(cache=True)
def _all_finite(v):
    for k in range(v.shape[0]):
        if not np.isfinite(v[k]):
            return False
    return True


@njit(cache=True)
def _quad_rk4(x, u, h, p, out, want_jac, Fx, Fu):
    nx = x.shape[0]
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    xs = np.empty(nx)
    if _quad_deriv(x, u, p, k1) != OK:
        return SINGULAR
    if not _all_finite(k1):
        return NONFINITE
    xs[:] = x + 0.5 * h * k1
    if _quad_deriv(xs, u, p, k2) != OK:
        return SINGULAR
    if not _all_finite(k2):
        return NONFINITE
    if want_jac:
        A = np.empty((nx, nx))
        B = np.empty((nx, 4))
        _quad_jac(x, u, p, A, B)
        K1x = A.copy()
        K1u = B.copy()
        _quad_jac(xs, u, p, A, B)
        K2x = A @ (np.eye(nx) + 0.5 * h * K1x)
        K2u = A @ (0.5 * h * K1u) + B
    xs[:] = x + 0.5 * h * k2
    if _quad_deriv(xs, u, p, k3) != OK:
        return SINGULAR
    if not _all_finite(k3):
        return NONFINITE
    if want_jac:
        _quad_jac(xs, u, p, A, B)
        K3x = A @ (np.eye(nx) + 0.5 * h * K2x)
        K3u = A @ (0.5 * h * K2u) + B
    xs[:] = x + h * k3
    if _quad_deriv(xs, u, p, k4) != OK:
        return SINGULAR
    if not _all_finite(k4):
        return NONFINITE
    c = h / 6.0
    out[:] = x + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if want_jac:
        _quad_jac(xs, u, p, A, B)
        K4x = A @ (np.eye(nx) + h * K3x)
        K4u = A @ (h * K3u) + B
        Fx[:, :] = np.eye(nx) + c * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
        Fu[:, :] = c * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)
    return OK


@njit(cache=True)
def _quad_rollout(x0, U, h, p, xs, Fx, Fu, want_jac):
    xs[0] = x0
    for k in range(U.shape[0]):
        status = _quad_rk4(xs[k], U[k], h, p, xs[k + 1], want_jac, Fx[k], Fu[k])
        if status != OK:
            return status, k
    return OK, -1


class Quadrotor:
    """Euler-angle rigid-body quadrotor, thrust and torques as inputs."""

    nx = NX
    nu = NU
    position = POS

    def __init__(self, params: DroneParams | None = None):
        self.params = params if params is not None else DroneParams()
        P = self.params
        self._p = np.array([P.mass, *P.inertia_diag, P.gravity])

    def deriv(self, x, u):
        out = np.empty(NX)
        if _quad_deriv(np.asarray(x, float), np.asarray(u, float), self._p, out) != OK:
            raise AttitudeSingularity(f"pitch {x[7]!r} outside Euler-angle guard")
        return out

    def jacobians(self, x, u):
        """Return ``(df/dx, df/du)`` at ``(x, u)``."""
        A = np.empty((NX, NX))
        B = np.empty((NX, NU))
        if _quad_jac(np.asarray(x, float), np.asarray(u, float), self._p, A, B) != OK:
            raise AttitudeSingularity(f"pitch {x[7]!r} outside Euler-angle guard")
        return A, B

    def rollout(self, x0, U, h, want_jac=False):
        H = U.shape[0]
        xs = np.empty((H + 1, NX))
        if want_jac:
            Fx = np.empty((H, NX, NX))
            Fu = np.empty((H, NX, NU))
        else:
            Fx = Fu = np.empty((H, 0, 0))
        status, k = _quad_rollout(np.asarray(x0, float), np.ascontiguousarray(U, dtype=float),
                                  float(h), self._p, xs, Fx, Fu, want_jac)
        if status == SINGULAR:
            raise AttitudeSingularity("pitch left the Euler-angle guard", step=k)
        if status == NONFINITE:
            raise NonFinite("non-finite RK4 stage", step=k)
        return (xs, Fx, Fu) if want_jac else xs


class LinearModel:
    """Linear time-invariant model ``xdot = A x + B u``.

    Used for closed-form checks of the integrator and the primal solver.
    """

    def __init__(self, A, B, position=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.nx, self.nu = self.B.shape
        self.position = position if position is not None else slice(0, min(3, self.nx))

    def deriv(self, x, u):
        return self.A @ x + self.B @ u

    def jacobians(self, x, u):
        return self.A, self.B


def as_model(params):
    if params is None:
        return Quadrotor()
    if isinstance(params, DroneParams):
        return Quadrotor(params)
    return params


def deriv(x, u, params=None):
    """Continuous-time state derivative."""
    return as_model(params).deriv(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NonFinite(f"non-finite value in {what}")


def _rk4_generic(x, u, h, model):
    f = model.deriv
    k1 = f(x, u)
    _check_finite(k1, "RK4 stage 1")
    k2 = f(x + 0.5 * h * k1, u)
    _check_finite(k2, "RK4 stage 2")
    k3 = f(x + 0.5 * h * k2, u)
    _check_finite(k3, "RK4 stage 3")
    k4 = f(x + h * k3, u)
    _check_finite(k4, "RK4 stage 4")
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(x, u, h, params=None):
    """One classical RK4 step, input held constant over the step."""
    if not h > 0:
        raise ValueError(f"timestep must be positive, got {h}")
    model = as_model(params)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if hasattr(model, "rollout"):
        try:
            return model.rollout(x, u[None, :], h)[1]
        except DynamicsError as err:
            raise type(err)(str(err).split(" (rollout step")[0]) from None
    return _rk4_generic(x, u, h, model)


def rk4_step_jac(x, u, h, model):
    """RK4 step plus its sensitivities ``(x_next, dx_next/dx, dx_next/du)``."""
    f, jac = model.deriv, model.jacobians
    I = np.eye(x.shape[0])

    k1 = f(x, u)
    A1, B1 = jac(x, u)
    x2 = x + 0.5 * h * k1
    k2 = f(x2, u)
    A2, B2 = jac(x2, u)
    x3 = x + 0.5 * h * k2
    k3 = f(x3, u)
    A3, B3 = jac(x3, u)
    x4 = x + h * k3
    k4 = f(x4, u)
    A4, B4 = jac(x4, u)
    for k in (k1, k2, k3, k4):
        _check_finite(k, "RK4 stage")

    K1x, K1u = A1, B1
    K2x = A2 @ (I + 0.5 * h * K1x)
    K2u = A2 @ (0.5 * h * K1u) + B2
    K3x = A3 @ (I + 0.5 * h * K2x)
    K3u = A3 @ (0.5 * h * K2u) + B3
    K4x = A4 @ (I + h * K3x)
    K4u = A4 @ (h * K3u) + B4

    c = h / 6.0
    x_next = x + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Fx = I + c * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    Fu = c * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)
    return x_next, Fx, Fu


def rollout(x0, inputs, h, params=None):
    """Integrate `inputs` (H x nu) from `x0`; returns an (H+1) x nx array.

    Row 0 is `x0`; row k+1 is one RK4 step from row k under ``inputs[k]``.
    Dynamics errors carry the failing index in ``err.step``.
    """
    model = as_model(params)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if not h > 0:
        raise ValueError(f"timestep must be positive, got {h}")
    H = inputs.shape[0]
    if H < 1:
        raise ValueError("rollout needs at least one input")
    if hasattr(model, "rollout"):
        return model.rollout(np.asarray(x0, dtype=float), inputs, h)
    xs = np.empty((H + 1, model.nx))
    xs[0] = x0
    for k in range(H):
        try:
            xs[k + 1] = _rk4_generic(xs[k], inputs[k], h, model)
        except DynamicsError as err:
            raise type(err)(str(err), step=k) from err
    return xs


def rollout_jac(x0, inputs, h, model):
    """Rollout that also returns per-step sensitivities.

    Returns ``(xs, Fx, Fu)`` with ``Fx[k] = dx[k+1]/dx[k]`` and
    ``Fu[k] = dx[k+1]/du[k]``.
    """
    if hasattr(model, "rollout"):
        return model.rollout(x0, inputs, h, want_jac=True)
    H = inputs.shape[0]
    xs = np.empty((H + 1, model.nx))
    Fx = np.empty((H, model.nx, model.nx))
    Fu = np.empty((H, model.nx, model.nu))
    xs[0] = x0
    for k in range(H):
        try:
            xs[k + 1], Fx[k], Fu[k] = rk4_step_jac(xs[k], inputs[k], h, model)
        except DynamicsError as err:
            raise type(err)(str(err), step=k) from err
    return xs, Fx, Fu


def rotational_energy(x, params=None):
    J = np.asarray(as_model(params).params.inertia_diag)
    w = np.asarray(x)[RATE]
    return 0.5 * float(w @ (J * w))
