"""Rigid-box drop simulator used as a digital twin for dropped objects.

Semi-implicit Euler on a single box against static planes (the ground plus
optional extra planes). Contacts are the eight box corners, resolved with
sequential impulses: speculative non-penetration, Newton restitution and a
Coulomb friction disk. Angular momentum is the integrated rotational state so
free flight conserves it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from rootguide.se3 import Pose, Rotation

GROUND = ((0.0, 0.0, 1.0), 0.0)

class SettleTimeout(RuntimeError):
    """The box did not come to rest within ``max_sim_time``; carries the last state."""

    def __init__(self, message: str, last_pose: Pose, last_velocity: tuple[np.ndarray, np.ndarray]):
        super().__init__(message)
        self.last_pose = last_pose
        self.last_velocity = last_velocity


@dataclass(frozen=True)
class TwinParams:
    gravity: float = 9.81
    restitution: float = 0.2
    friction: float = 0.8
    box_half_extents: tuple[float, float, float] = (0.15, 0.1, 0.125)
    mass: float = 1.0  # kg, before scaling
    mass_scale: float = 1.0
    sim_dt: float = 1e-3
    settle_lin_eps: float = 0.01
    settle_ang_eps: float = 0.05
    settle_frames: int = 50
    max_sim_time: float = 5.0
    solver_iterations: int = 10
    impact_substeps: int = 10
    # approach speed (m/s) below which a corner touches down without rebounding
    bounce_threshold: float = 0.05
    # static planes besides the ground, each ((nx, ny, nz), offset) with n.x >= offset free;
    # a hook for robot-body hulls
    extra_planes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")
        if not self.sim_dt > 0:
            raise ValueError("sim_dt must be positive")
        if self.impact_substeps < 1:
            raise ValueError("impact_substeps must be at least 1")
        if min(self.box_half_extents) <= 0:
            raise ValueError("box half extents must be positive")

    def refined(self, factor: int) -> TwinParams:
        """Same physics at ``sim_dt / factor``, with the settle window kept constant in time."""
        return TwinParams(
            **{
                **self.__dict__,
                "sim_dt": self.sim_dt / factor,
                "settle_frames": self.settle_frames * factor,
            }
        )

    def planes(self) -> np.ndarray:
        rows = [GROUND, *self.extra_planes]
        out = np.zeros((len(rows), 4))
        for i, (n, d) in enumerate(rows):
            n = np.asarray(n, dtype=float)
            out[i, :3] = n / np.linalg.norm(n)
            out[i, 3] = d
        return out


@numba.njit(cache=True)
def _quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@numba.njit(cache=True)
def _inv_inertia_world(r, ibody, out):
    # out = R diag(1/ibody) R^T
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += r[i, k] * r[j, k] / ibody[k]
            out[i, j] = s


@numba.njit(cache=True)
def _matvec(m, a, out):
    for i in range(3):
        out[i] = m[i, 0] * a[0] + m[i, 1] * a[1] + m[i, 2] * a[2]


@numba.njit(cache=True)
def _cross_into(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@numba.njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@numba.njit(cache=True)
def _eff_mass(inv_m, inv_iw, rn, tmp):
    # 1/m + rn . (I^-1 rn)
    _matvec(inv_iw, rn, tmp)
    return inv_m + _dot(rn, tmp)


@numba.njit(cache=True)
def _rotate_quat(q, w, dt):
    # q <- exp(w dt) * q  (world-frame angular velocity)
    wn = math.sqrt(_dot(w, w))
    half = 0.5 * wn * dt
    c = math.cos(half)
    s = 0.5 * dt * (math.sin(half) / half if half > 1e-12 else 1.0)
    dw, dx, dy, dz = c, s * w[0], s * w[1], s * w[2]
    w0, x0, y0, z0 = q[0], q[1], q[2], q[3]
    q[0] = dw * w0 - dx * x0 - dy * y0 - dz * z0
    q[1] = dw * x0 + dx * w0 + dy * z0 - dz * y0
    q[2] = dw * y0 - dx * z0 + dy * w0 + dz * x0
    q[3] = dw * z0 + dx * y0 - dy * x0 + dz * w0
    n = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    for i in range(4):
        q[i] /= n


@numba.njit(cache=True)
def _simulate(
    x0, q0, v0, w0, half, mass, gravity, restitution, friction, dt, planes,
    lin_eps, ang_eps, settle_frames, max_steps, iters, record_every, substeps, bounce_vel,
):
    x = x0.copy()
    q = q0.copy()
    v = v0.copy()
    ibody = np.array(
        [
            mass / 3.0 * (half[1] ** 2 + half[2] ** 2),
            mass / 3.0 * (half[0] ** 2 + half[2] ** 2),
            mass / 3.0 * (half[0] ** 2 + half[1] ** 2),
        ]
    )
    r_mat = _quat_to_mat(q)
    # L = R I_body R^T w0
    L = np.zeros(3)
    for i in range(3):
        s = 0.0
        for j in range(3):
            m_ij = 0.0
            for k in range(3):
                m_ij += r_mat[i, k] * ibody[k] * r_mat[j, k]
            s += m_ij * w0[j]
        L[i] = s
    inv_m = 1.0 / mass

    corners = np.empty((8, 3))
    k = 0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                corners[k, 0] = sx * half[0]
                corners[k, 1] = sy * half[1]
                corners[k, 2] = sz * half[2]
                k += 1

    n_planes = planes.shape[0]
    n_contacts = 8 * n_planes
    lam_n = np.zeros(n_contacts)
    lam_t = np.zeros((n_contacts, 2))
    target = np.zeros(n_contacts)
    active = np.zeros(n_contacts, dtype=np.bool_)
    rr = np.zeros((n_contacts, 3))
    rn_all = np.zeros((n_contacts, 3))
    kn_all = np.zeros(n_contacts)
    t1_all = np.zeros((n_planes, 3))
    t2_all = np.zeros((n_planes, 3))
    for p in range(n_planes):
        nrm = planes[p, :3]
        aux = np.array([1.0, 0.0, 0.0]) if abs(nrm[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        t1 = np.zeros(3)
        _cross_into(nrm, aux, t1)
        t1 /= math.sqrt(_dot(t1, t1))
        t2 = np.zeros(3)
        _cross_into(nrm, t1, t2)
        t1_all[p] = t1
        t2_all[p] = t2
    rt1_all = np.zeros((n_contacts, 3))
    rt2_all = np.zeros((n_contacts, 3))
    k1_all = np.zeros(n_contacts)
    k2_all = np.zeros(n_contacts)

    impacting = np.zeros(n_contacts, dtype=np.bool_)
    ptarget = np.zeros(n_contacts)
    pv = np.zeros(3)
    pL = np.zeros(3)
    pw = np.zeros(3)

    inv_iw = np.zeros((3, 3))
    inv_mid = np.zeros((3, 3))
    qm = np.zeros(4)
    w = np.zeros(3)
    tmp = np.zeros(3)
    wxr = np.zeros(3)

    n_rec = max_steps // record_every + 2
    rec = np.zeros((n_rec, 14))
    rec[0, 1:4] = x
    rec[0, 4:8] = q
    rec[0, 8:11] = v
    rec[0, 11:14] = L
    n_written = 1

    margin = 0.05
    slop = 1e-4
    streak = 0
    streak_start = 0
    settled = False
    step = 0
    while step < max_steps:
        # a corner about to strike the plane: resolve this step as sub-steps so
        # near-simultaneous impacts of different corners are ordered correctly
        nsub = 1
        if substeps > 1:
            r_mat = _quat_to_mat(q)
            _inv_inertia_world(r_mat, ibody, inv_iw)
            _matvec(inv_iw, L, w)
            for p in range(n_planes):
                nrm = planes[p, :3]
                for c in range(8):
                    r = rr[p * 8 + c]
                    _matvec(r_mat, corners[c], r)
                    sep = _dot(nrm, x) + _dot(nrm, r) - planes[p, 3]
                    _cross_into(w, r, wxr)
                    vn0 = _dot(nrm, v) + _dot(nrm, wxr) - gravity * dt * nrm[2]
                    if vn0 < -bounce_vel and sep + vn0 * dt < slop:
                        nsub = substeps
        h = dt / nsub
        for sub in range(nsub):
            n_support = 0
            r_mat = _quat_to_mat(q)
            _inv_inertia_world(r_mat, ibody, inv_iw)
            v[2] -= gravity * h
            _matvec(inv_iw, L, w)

            # contact set and velocity targets
            for p in range(n_planes):
                nrm = planes[p, :3]
                for c in range(8):
                    idx = p * 8 + c
                    r = rr[idx]
                    _matvec(r_mat, corners[c], r)
                    sep = _dot(nrm, x) + _dot(nrm, r) - planes[p, 3]
                    lam_n[idx] = 0.0
                    lam_t[idx, 0] = 0.0
                    lam_t[idx, 1] = 0.0
                    if sep > margin:
                        active[idx] = False
                        continue
                    if sep < 1e-3:
                        n_support += 1
                    _cross_into(w, r, wxr)
                    vn0 = _dot(nrm, v) + _dot(nrm, wxr)
                    if sep >= 0.0:
                        tgt = -sep / h  # speculative: may approach but not cross this step
                    else:
                        tgt = 0.2 * (-sep - slop) / dt if -sep > slop else 0.0
                    impacting[idx] = False
                    if vn0 < tgt and vn0 < -bounce_vel:
                        # touches down this step: restitution on the incoming speed
                        bounce = -restitution * vn0
                        if bounce > tgt:
                            tgt = bounce
                        if sep >= 0.0:
                            # split impulse: the corner should first close the gap, then
                            # rebound for the rest of the step
                            impacting[idx] = True
                            ptarget[idx] = -(1.0 + restitution) * sep / h
                    # lambda >= 0 clamping makes non-binding contacts inert
                    active[idx] = True
                    target[idx] = tgt
                    _cross_into(r, nrm, rn_all[idx])
                    kn_all[idx] = _eff_mass(inv_m, inv_iw, rn_all[idx], tmp)
                    _cross_into(r, t1_all[p], rt1_all[idx])
                    _cross_into(r, t2_all[p], rt2_all[idx])
                    k1_all[idx] = _eff_mass(inv_m, inv_iw, rt1_all[idx], tmp)
                    k2_all[idx] = _eff_mass(inv_m, inv_iw, rt2_all[idx], tmp)

            for it in range(iters):
                forward = (it % 2) == 0
                for jj in range(n_contacts):
                    idx = jj if forward else n_contacts - 1 - jj
                    if not active[idx]:
                        continue
                    p = idx // 8
                    nrm = planes[p, :3]
                    r = rr[idx]
                    rn = rn_all[idx]
                    _matvec(inv_iw, L, w)
                    _cross_into(w, r, wxr)
                    vn = _dot(nrm, v) + _dot(nrm, wxr)
                    d = (target[idx] - vn) / kn_all[idx]
                    new = lam_n[idx] + d
                    if new < 0.0:
                        new = 0.0
                    d = new - lam_n[idx]
                    lam_n[idx] = new
                    if d != 0.0:
                        for i in range(3):
                            v[i] += d * inv_m * nrm[i]
                            L[i] += d * rn[i]

                    if friction > 0.0:
                        t1 = t1_all[p]
                        t2 = t2_all[p]
                        _matvec(inv_iw, L, w)
                        _cross_into(w, r, wxr)
                        vt1 = _dot(t1, v) + _dot(t1, wxr)
                        vt2 = _dot(t2, v) + _dot(t2, wxr)
                        o1 = lam_t[idx, 0]
                        o2 = lam_t[idx, 1]
                        a1 = o1 - vt1 / k1_all[idx]
                        a2 = o2 - vt2 / k2_all[idx]
                        lim = friction * lam_n[idx]
                        mag = math.sqrt(a1 * a1 + a2 * a2)
                        if mag > lim:
                            if mag > 0.0:
                                a1 *= lim / mag
                                a2 *= lim / mag
                            else:
                                a1 = 0.0
                                a2 = 0.0
                        lam_t[idx, 0] = a1
                        lam_t[idx, 1] = a2
                        d1 = a1 - o1
                        d2 = a2 - o2
                        rt1 = rt1_all[idx]
                        rt2 = rt2_all[idx]
                        for i in range(3):
                            v[i] += inv_m * (d1 * t1[i] + d2 * t2[i])
                            L[i] += d1 * rt1[i] + d2 * rt2[i]

            # pseudo velocities: position-only correction for impacts inside the step
            pv[:] = 0.0
            pL[:] = 0.0
            any_impact = False
            for idx in range(n_contacts):
                if impacting[idx]:
                    any_impact = True
                    break
            if any_impact:
                for it in range(iters):
                    for idx in range(n_contacts):
                        if not impacting[idx]:
                            continue
                        nrm = planes[idx // 8, :3]
                        rn = rn_all[idx]
                        _matvec(inv_iw, pL, pw)
                        _cross_into(pw, rr[idx], wxr)
                        pvn = _dot(nrm, pv) + _dot(nrm, wxr)
                        d = (ptarget[idx] - pvn) / kn_all[idx]
                        for i in range(3):
                            pv[i] += d * inv_m * nrm[i]
                            pL[i] += d * rn[i]

            # integrate; in free flight gravity is integrated exactly, otherwise
            # symplectic Euler would land every drop early by g*t*dt/2
            loaded = False
            for idx in range(n_contacts):
                if lam_n[idx] > 0.0:
                    loaded = True
                    break
            _matvec(inv_iw, L, w)
            _matvec(inv_iw, pL, pw)
            # spin about the midpoint angular velocity: w drifts as the box turns
            qm[:] = q
            _rotate_quat(qm, w, 0.5 * h)
            _inv_inertia_world(_quat_to_mat(qm), ibody, inv_mid)
            _matvec(inv_mid, L, w)
            for i in range(3):
                x[i] += (v[i] + pv[i]) * h
                pw[i] += w[i]
            if not loaded:
                x[2] += 0.5 * gravity * h * h
            _rotate_quat(q, pw, h)
        step += 1

        speed = math.sqrt(_dot(v, v))
        _inv_inertia_world(_quat_to_mat(q), ibody, inv_iw)
        _matvec(inv_iw, L, w)
        wspeed = math.sqrt(_dot(w, w))
        # a box balanced on an edge can be momentarily slow but is not at rest
        if speed < lin_eps and wspeed < ang_eps and n_support >= 3:
            if streak == 0:
                streak_start = step - 1
            streak += 1
        else:
            streak = 0

        if step % record_every == 0 and n_written < n_rec:
            rec[n_written, 0] = step * dt
            rec[n_written, 1:4] = x
            rec[n_written, 4:8] = q
            rec[n_written, 8:11] = v
            rec[n_written, 11:14] = L
            n_written += 1

        if streak >= settle_frames:
            settled = True
            break

    if step % record_every != 0 and n_written < n_rec:
        rec[n_written, 0] = step * dt
        rec[n_written, 1:4] = x
        rec[n_written, 4:8] = q
        rec[n_written, 8:11] = v
        rec[n_written, 11:14] = L
        n_written += 1
    return rec[:n_written], settled, streak_start * dt, step * dt


@dataclass
class SimResult:
    resting: Pose
    settle_time: float
    settled: bool
    sim_time: float
    # rows: t, position(3), quaternion wxyz(4), velocity(3), angular momentum(3)
    states: np.ndarray

    def poses(self) -> list[Pose]:
        return [Pose(r[1:4], Rotation.from_quat(r[4:8])) for r in self.states]


def simulate_drop(
    init: Pose,
    linear_velocity,
    angular_velocity,
    params: TwinParams = TwinParams(),
    record_every: int = 1,
) -> SimResult:
    """Run the box simulation and return the full sampled state history."""
    mass = params.mass * params.mass_scale
    max_steps = int(math.ceil(params.max_sim_time / params.sim_dt))
    rec, settled, settle_time, sim_time = _simulate(
        np.asarray(init.position, dtype=float),
        np.asarray(init.rotation.quat, dtype=float),
        np.asarray(linear_velocity, dtype=float).reshape(3),
        np.asarray(angular_velocity, dtype=float).reshape(3),
        np.asarray(params.box_half_extents, dtype=float),
        float(mass),
        float(params.gravity),
        float(params.restitution),
        float(params.friction),
        float(params.sim_dt),
        params.planes(),
        float(params.settle_lin_eps),
        float(params.settle_ang_eps),
        int(params.settle_frames),
        max_steps,
        int(params.solver_iterations),
        max(1, int(record_every)),
        int(params.impact_substeps),
        float(params.bounce_threshold),
    )
    last = rec[-1]
    return SimResult(
        resting=Pose(last[1:4], Rotation.from_quat(last[4:8])),
        settle_time=float(settle_time),
        settled=bool(settled),
        sim_time=float(sim_time),
        states=rec,
    )


def predict_resting_pose(
    init: Pose, vel: tuple, params: TwinParams = TwinParams()
) -> tuple[Pose, float]:
    """Resting pose of a released box and the time at which it came to rest.

    ``vel`` is ``(linear, angular)`` in the world frame. Raises
    :class:`SettleTimeout` when the box is still moving after ``max_sim_time``.
    """
    lin, ang = vel
    res = simulate_drop(init, lin, ang, params, record_every=max(1, int(params.settle_frames)))
    if not res.settled:
        last = res.states[-1]
        raise SettleTimeout(
            f"box still moving after {params.max_sim_time:.2f} s",
            res.resting,
            (last[8:11].copy(), last[11:14].copy()),
        )
    return res.resting, res.settle_time


def mechanical_energy(states: np.ndarray, params: TwinParams) -> np.ndarray:
    """Kinetic plus potential energy for each recorded state row."""
    m = params.mass * params.mass_scale
    hx, hy, hz = params.box_half_extents
    ibody = m / 3.0 * np.array([hy**2 + hz**2, hx**2 + hz**2, hx**2 + hy**2])
    out = np.empty(len(states))
    for i, row in enumerate(states):
        r = Rotation.from_quat(row[4:8]).matrix
        L = row[11:14]
        w = r @ np.diag(1.0 / ibody) @ r.T @ L
        out[i] = 0.5 * m * row[8:11] @ row[8:11] + 0.5 * w @ L + m * params.gravity * row[3]
    return out


def face_tilt(rotation: Rotation) -> float:
    """Angle between world up and the nearest box axis (0 when a face lies flat)."""
    m = rotation.matrix
    return float(math.acos(min(1.0, np.max(np.abs(m[2, :])))))


def resting_axis(rotation: Rotation) -> int:
    """Index of the box axis that points (up or down) along world z."""
    return int(np.argmax(np.abs(rotation.matrix[2, :])))


def face_alignment_error(a: Rotation, b: Rotation) -> float:
    """Angle between world up expressed in the two box frames.

    Zero when both boxes rest on the same face with the same tilt, whatever
    their yaw; about 90 degrees when they rest on different faces.
    """
    ua = a.matrix[2, :]
    ub = b.matrix[2, :]
    return float(math.acos(np.clip(ua @ ub, -1.0, 1.0)))


def sample_release(rng: np.random.Generator) -> tuple[Pose, np.ndarray, np.ndarray, float]:
    """Draw a slip-style release: near-upright box, modest velocities.

    Returns ``(pose, linear_velocity, angular_velocity, restitution)``. Tilt
    stays under 0.25 rad so the box lands near a face rather than balancing on
    an edge, where tiny integration differences pick the resting face.
    """
    yaw = rng.uniform(-math.pi, math.pi)
    tilt = Rotation.from_axis_angle([1.0, 0.0, 0.0], rng.uniform(-0.25, 0.25)) * Rotation.from_axis_angle(
        [0.0, 1.0, 0.0], rng.uniform(-0.25, 0.25)
    )
    pose = Pose(np.array([0.0, 0.0, rng.uniform(0.6, 1.1)]), Rotation.from_yaw(yaw) * tilt)
    v = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.5, 0.0)])
    w = rng.uniform(-1.0, 1.0, size=3)
    return pose, v, w, float(rng.uniform(0.0, 0.5))
