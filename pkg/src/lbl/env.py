"""Noisy-TV linear-Gaussian benchmark.

A slowly rotating signal ``s`` and a sticky random-walk distractor ``d`` are
mixed into 20-dimensional observations::

    s[t+1] = A_rot s[t] (+ B_ctrl u[t]) + w,   w ~ N(0, 0.1^2 I)
    d[t+1] = 0.9 d[t] + v,                     v ~ N(0, 0.3^2 I)
    x[t]   = C s[t] + D_mix (sigma d[t]) + e,  e ~ N(0, 0.01^2 I)
"""
import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

D_X = 20
D_S = 4
D_D = 4


@dataclass(frozen=True)
class EnvParams:
    A_rot: np.ndarray
    C: np.ndarray
    D_mix: np.ndarray
    B_ctrl: np.ndarray
    signal_noise_std: float = 0.1
    distractor_decay: float = 0.9
    distractor_noise_std: float = 0.3
    sensor_noise_std: float = 0.01
    controlled: bool = False

    @property
    def d_x(self):
        return self.C.shape[0]

    @property
    def d_s(self):
        return self.C.shape[1]

    @property
    def d_d(self):
        return self.D_mix.shape[1]

    @property
    def d_u(self):
        return self.B_ctrl.shape[1]

    def checksum(self):
        """Short SHA-256 digest of the matrices, for run manifests."""
        h = hashlib.sha256()
        for a in (self.A_rot, self.C, self.D_mix, self.B_ctrl):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


@dataclass
class Trajectory:
    x: np.ndarray
    s: np.ndarray
    d: np.ndarray
    u: np.ndarray | None = None
    scale: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.x) == len(self.s) == len(self.d)):
            raise ValueError("x, s and d must share length T")
        if self.u is not None and len(self.u) != len(self.x) - 1:
            raise ValueError("u must have length T - 1")

    def __len__(self):
        return len(self.x)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # sign-fix so Q is a deterministic function of the draw
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _unit_columns(m):
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def make_env(seed, controlled=False, d_u=2, d_x=D_X, d_s=D_S, d_d=D_D):
    """Draw the fixed mixing matrices for one environment instance."""
    if controlled and d_u < 1:
        raise ValueError("controlled environments need d_u >= 1")
    rng = np.random.default_rng([int(seed), 0x5EED])
    A_rot = _orthogonal(rng, d_s)
    C = _unit_columns(rng.standard_normal((d_x, d_s)))
    D_mix = _unit_columns(rng.standard_normal((d_x, d_d)))
    if controlled:
        B_ctrl = _unit_columns(rng.standard_normal((d_s, d_u)))
    else:
        B_ctrl = np.zeros((d_s, max(d_u, 1)))
    return EnvParams(A_rot=A_rot, C=C, D_mix=D_mix, B_ctrl=B_ctrl, controlled=controlled)


def observe(env, s, d, sigma, rng):
    """Observation for signal ``s`` and distractor ``d`` (leading axes allowed)."""
    eps = env.sensor_noise_std * rng.standard_normal(np.shape(s)[:-1] + (env.d_x,))
    return s @ env.C.T + sigma * (d @ env.D_mix.T) + eps


def rollout(env, sigma, T, rng, policy=None, s0=None, d0=None):
    """Simulate ``T`` steps.

    ``policy`` is either ``None`` (no actions), an array of shape (T-1, d_u), or a
    callable ``policy(t, x_t) -> u_t``. Actions only act when ``env.controlled``.
    The noise draws are taken in a fixed order so that two calls with equally
    seeded generators are bit-identical.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if T < 2:
        raise ValueError("T must be >= 2")
    s = np.empty((T, env.d_s))
    d = np.empty((T, env.d_d))
    s[0] = rng.standard_normal(env.d_s) if s0 is None else s0
    d[0] = rng.standard_normal(env.d_d) if d0 is None else d0
    w = env.signal_noise_std * rng.standard_normal((T - 1, env.d_s))
    v = env.distractor_noise_std * rng.standard_normal((T - 1, env.d_d))
    eps = env.sensor_noise_std * rng.standard_normal((T, env.d_x))
    x = np.empty((T, env.d_x))
    u = None
    if policy is not None:
        u = np.zeros((T - 1, env.d_u))
    for t in range(T):
        x[t] = env.C @ s[t] + sigma * (env.D_mix @ d[t]) + eps[t]
        if t == T - 1:
            break
        s[t + 1] = env.A_rot @ s[t] + w[t]
        if u is not None:
            u[t] = policy(t, x[t]) if callable(policy) else policy[t]
            if env.controlled:
                s[t + 1] += env.B_ctrl @ u[t]
        d[t + 1] = env.distractor_decay * d[t] + v[t]
    return Trajectory(x=x, s=s, d=d, u=u, scale=float(sigma))


def empirical_snr_db(traj, env, sigma):
    """Trajectory-averaged signal-to-interference power ratio in dB.

    Returns ``inf`` when ``sigma == 0``.
    """
    if sigma == 0:
        return float("inf")
    signal = traj.s @ env.C.T
    interference = traj.x - signal
    return float(10.0 * np.log10(np.mean(np.sum(signal ** 2, axis=1))
                                 / np.mean(np.sum(interference ** 2, axis=1))))


def trajectory_header(traj):
    cols = ["t"]
    cols += [f"x_{i}" for i in range(traj.x.shape[1])]
    cols += [f"s_{i}" for i in range(traj.s.shape[1])]
    cols += [f"d_{i}" for i in range(traj.d.shape[1])]
    if traj.u is not None:
        cols += [f"u_{i}" for i in range(traj.u.shape[1])]
    return cols


def save_trajectory(traj, path, fmt="csv"):
    """Write a trajectory as CSV (header ``t,x_0..,s_0..,d_0..[,u_0..]``) or ``.npz``."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(trajectory_header(traj))
            for t in range(len(traj)):
                row = [t, *traj.x[t], *traj.s[t], *traj.d[t]]
                if traj.u is not None:
                    row += list(traj.u[t]) if t < len(traj.u) else [""] * traj.u.shape[1]
                w.writerow([repr(float(v)) if not isinstance(v, (int, str)) else v for v in row])
    elif fmt == "npz":
        arrays = dict(x=traj.x, s=traj.s, d=traj.d, scale=np.float64(traj.scale))
        if traj.u is not None:
            arrays["u"] = traj.u
        np.savez(path, **arrays)
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def load_trajectory(path):
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as f:
            u = f["u"] if "u" in f.files else None
            return Trajectory(x=f["x"], s=f["s"], d=f["d"], u=u, scale=float(f["scale"]))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]

    def block(prefix):
        idx = [i for i, h in enumerate(header) if h.startswith(prefix + "_")]
        return idx

    xi, si, di, ui = block("x"), block("s"), block("d"), block("u")
    x = np.array([[float(r[i]) for i in xi] for r in body])
    s = np.array([[float(r[i]) for i in si] for r in body])
    d = np.array([[float(r[i]) for i in di] for r in body])
    u = np.array([[float(r[i]) for i in ui] for r in body[:-1]]) if ui else None
    return Trajectory(x=x, s=s, d=d, u=u)
