"""Latent-space planning: sampling MPC, gradient MPC with energy priors, and
the mean-versus-expected-cost (MAP optimality) checks.

Planners are duck-typed over the predictor interface shared by
``VJepaModel`` and ``LinearGaussianLatent``: ``predict_raw(z, u)``,
``predict(z, u)``, ``mean_jacobians()`` and ``d_u``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from lbl import kernels
from lbl.mathcore import expected_quadratic_cost

log = logging.getLogger(__name__)


@dataclass
class PlanConfig:
    horizon: int = 5
    num_samples: int = 256
    action_std: float = 1.0
    lam: float = 0.01
    iterations: int = 100
    step_size: float = 0.05
    patience: int = 10
    max_halvings: int = 5
    sample_rollouts: bool = True

    def __post_init__(self):
        if self.horizon < 1 or self.num_samples < 1:
            raise ValueError("horizon and num_samples must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


# ---------------------------------------------------------------------------
# energy priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyPrior:
    """Task energy ``E(z; eta)`` with an analytic gradient.

    ``fn(z, **eta)`` returns one energy per leading index of ``z``;
    ``grad(z, **eta)`` returns an array shaped like ``z``.
    """

    fn: object
    grad: object
    eta: dict = field(default_factory=dict)

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=np.float64), **self.eta)

    def gradient(self, z):
        return self.grad(np.asarray(z, dtype=np.float64), **self.eta)


def _quad_e(z, z_star, Q):
    e = z - z_star
    return np.einsum("...i,ij,...j->...", e, Q, e)


def _quad_g(z, z_star, Q):
    return (z - z_star) @ (Q + Q.T).T


def quadratic_energy(z_star, Q=None):
    """``(z - z*)^T Q (z - z*)``; ``Q`` defaults to the identity."""
    z_star = np.asarray(z_star, dtype=np.float64)
    Q = np.eye(z_star.shape[-1]) if Q is None else np.asarray(Q, dtype=np.float64)
    return EnergyPrior(_quad_e, _quad_g, dict(z_star=z_star, Q=Q))


def _gauss_e(z, mean, log_var):
    r = z - mean
    return np.sum(kernels.HALF_LOG_2PI + 0.5 * log_var + 0.5 * r * r * np.exp(-log_var), axis=-1)


def _gauss_g(z, mean, log_var):
    return (z - mean) * np.exp(-log_var)


def gaussian_energy(prior):
    """Negative log-density of a diagonal Gaussian prior expert."""
    return EnergyPrior(_gauss_e, _gauss_g, dict(mean=prior.mean, log_var=prior.log_var))


# ---------------------------------------------------------------------------
# sampling MPC
# ---------------------------------------------------------------------------

def _stage_costs(z, u, z_goal, lam):
    return np.sum((z - z_goal) ** 2, axis=-1) + lam * np.sum(u * u, axis=-1)


def shooting_rollouts(model, z_t, seqs, rng, sample=True):
    """Sample one latent trajectory per action sequence.

    ``seqs`` is ``(M, H, d_u)``; returns latents ``(M, H + 1, d_z)`` starting at ``z_t``.
    With ``sample=False`` each trajectory follows the predictive means instead.
    """
    seqs = np.asarray(seqs, dtype=np.float64)
    m, h = seqs.shape[:2]
    z = np.empty((m, h + 1, np.shape(z_t)[-1]))
    z[:, 0] = z_t
    for k in range(h):
        mu, lv_raw = model.predict_raw(z[:, k], seqs[:, k])
        if not sample:
            z[:, k + 1] = mu
            continue
        lv, _ = kernels.clamp_logvar(lv_raw)
        z[:, k + 1] = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
    return z


def shooting_costs(zs, seqs, z_goal, lam):
    """Cumulative post-action cost ``sum_k c(z[k+1], u[k])`` per sequence."""
    return np.sum(_stage_costs(zs[:, 1:], seqs, z_goal, lam), axis=1)


@dataclass
class ShootingResult:
    action: np.ndarray
    sequence: np.ndarray
    latents: np.ndarray
    cost: float
    index: int
    costs: np.ndarray


def vjepa_mpc(model, z_t, z_goal, cfg, rng, candidates=None):
    """Random-shooting MPC; returns a ``ShootingResult`` whose ``action`` is the first
    action of the cheapest sampled trajectory (ties go to the lowest index).

    ``candidates`` overrides the Gaussian proposal with an explicit ``(M, H, d_u)``
    array.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    if candidates is None:
        seqs = cfg.action_std * rng.standard_normal((cfg.num_samples, cfg.horizon, model.d_u))
    else:
        seqs = np.asarray(candidates, dtype=np.float64)
        if seqs.ndim != 3 or seqs.shape[2] != model.d_u:
            raise ValueError(f"candidates must be (M, H, {model.d_u}), got {seqs.shape}")
    zs = shooting_rollouts(model, z_t, seqs, rng, sample=cfg.sample_rollouts)
    costs = shooting_costs(zs, seqs, z_goal, cfg.lam)
    i = int(np.argmin(costs))
    return ShootingResult(seqs[i, 0].copy(), seqs[i].copy(), zs[i].copy(), float(costs[i]), i, costs)


# ---------------------------------------------------------------------------
# gradient MPC
# ---------------------------------------------------------------------------

def mean_rollout(model, z_t, useq):
    """Deterministic rollout ``z[k+1] = mu(z[k], u[k])``; returns ``(H + 1, d_z)``."""
    useq = np.asarray(useq, dtype=np.float64)
    z = np.empty((len(useq) + 1, np.shape(z_t)[-1]))
    z[0] = z_t
    for k, u in enumerate(useq):
        z[k + 1] = model.mean_step(z[k], u)
    return z


def energy_objective(model, z_t, useq, prior, lam):
    """``J = sum_{k=1..H} E(z_k) + lam ||u_{k-1}||^2`` and its gradient in ``useq``."""
    fz, fu = model.mean_jacobians()
    z = mean_rollout(model, z_t, useq)
    j = float(np.sum(prior(z[1:])) + lam * np.sum(useq * useq))
    g_e = prior.gradient(z[1:])
    grad = np.empty_like(useq)
    adj = np.zeros(z.shape[1])
    for k in range(len(useq) - 1, -1, -1):
        adj = g_e[k] + fz.T @ adj
        grad[k] = fu.T @ adj + 2.0 * lam * useq[k]
    return j, grad


@dataclass
class GradientPlan:
    actions: np.ndarray
    objective: float
    history: list
    step_size: float
    halvings: int
    aborted: bool


def bjepa_gradient_mpc(model, z_t, prior, cfg, u_init=None):
    """Gradient descent on the action sequence through the mean dynamics.

    A step is accepted only if it does not increase ``J``. After ``cfg.patience``
    consecutive increases the step size is halved; after ``cfg.max_halvings``
    halvings the search stops early with ``aborted=True``.
    """
    useq = np.zeros((cfg.horizon, model.d_u)) if u_init is None else np.array(u_init, dtype=np.float64)
    j, grad = energy_objective(model, z_t, useq, prior, cfg.lam)
    history = [j]
    alpha = cfg.step_size
    bad = halvings = 0
    aborted = False
    for _ in range(cfg.iterations):
        trial = useq - alpha * grad
        j_new, g_new = energy_objective(model, z_t, trial, prior, cfg.lam)
        if np.isfinite(j_new) and j_new <= j:
            useq, j, grad = trial, j_new, g_new
            history.append(j)
            bad = 0
            continue
        bad += 1
        if bad >= cfg.patience:
            if halvings >= cfg.max_halvings:
                aborted = True
                log.debug("gradient MPC aborted after %d halvings", halvings)
                break
            alpha *= 0.5
            halvings += 1
            bad = 0
    return GradientPlan(useq, j, history, alpha, halvings, aborted)


def grid_optimum(model, z_t, prior, lam, grid0, grid1):
    """Brute-force minimum of the H=2 energy objective over ``grid0 x grid1`` (d_u = 1).

    Returns ``(J, actions)`` with ``actions`` shaped ``(2, 1)``.
    """
    fz, fu = model.mean_jacobians()
    if fu.shape[1] != 1:
        raise ValueError("grid_optimum supports d_u = 1")
    g0 = np.asarray(grid0, dtype=np.float64)
    g1 = np.asarray(grid1, dtype=np.float64)
    z1 = np.asarray(z_t) @ fz.T + g0[:, None] * fu[:, 0]
    z2 = (z1 @ fz.T)[:, None, :] + g1[None, :, None] * fu[:, 0]
    tot = (prior(z1) + lam * g0 ** 2)[:, None] + prior(z2) + lam * g1[None, :] ** 2
    i, k = np.unravel_index(int(np.argmin(tot)), tot.shape)
    return float(tot[i, k]), np.array([[g0[i]], [g1[k]]])


def nested_grid_optimum(model, z_t, prior, lam, lo=-5.0, hi=5.0, n=201, rounds=4):
    """Coarse-to-fine ``grid_optimum``: each round re-grids +-2 cells around the incumbent."""
    g0 = g1 = np.linspace(lo, hi, n)
    for _ in range(rounds):
        j, u = grid_optimum(model, z_t, prior, lam, g0, g1)
        step = g0[1] - g0[0]
        g0 = np.linspace(u[0, 0] - 2 * step, u[0, 0] + 2 * step, n)
        g1 = np.linspace(u[1, 0] - 2 * step, u[1, 0] + 2 * step, n)
    return j, u


# ---------------------------------------------------------------------------
# MAP optimality
# ---------------------------------------------------------------------------

@dataclass
class MapCheck:
    expected: np.ndarray
    at_mean: np.ndarray
    offset_spread: float
    argmin_expected: int
    argmin_mean: int

    @property
    def consistent(self):
        return self.argmin_expected == self.argmin_mean and self.offset_spread < 1e-9


def map_equals_sampling_check(model, z_t, candidates, Q, z_star, lam=0.0):
    """Compare the exact expected one-step cost with the cost at the predictive mean.

    ``candidates`` is ``(M, d_u)``. With an action-independent predictive covariance
    the two differ by ``tr(Q Sigma)`` for every candidate.
    """
    u = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    z = np.broadcast_to(np.asarray(z_t, dtype=np.float64), (len(u), np.shape(z_t)[-1]))
    pred = model.predict(z, u)
    r = lam * np.sum(u * u, axis=1)
    expected = expected_quadratic_cost(pred, Q, z_star) + r
    e = pred.mean - z_star
    at_mean = np.einsum("ni,ij,nj->n", e, Q, e) + r
    diff = expected - at_mean
    return MapCheck(expected, at_mean, float(diff.max() - diff.min()),
                    int(np.argmin(expected)), int(np.argmin(at_mean)))


def propagate_linear(A, B, Sigma, z0, useq):
    """Mean and covariance of ``z[1..H]`` under ``z' = A z + B u + w``, ``w ~ N(0, Sigma)``."""
    d = A.shape[0]
    m = np.asarray(z0, dtype=np.float64)
    P = np.zeros((d, d))
    means, covs = [], []
    for u in useq:
        m = A @ m + B @ u
        P = A @ P @ A.T + Sigma
        means.append(m)
        covs.append(P)
    return np.array(means), np.array(covs)


def multistep_costs(A, B, Sigma, z0, useq, Q, z_star, lam=0.0):
    """(expected H-step cost, cost of the mean trajectory) for a linear rollout."""
    means, covs = propagate_linear(A, B, Sigma, z0, useq)
    e = means - z_star
    mean_cost = float(np.einsum("ki,ij,kj->", e, Q, e) + lam * np.sum(useq * useq))
    trace = float(sum(np.trace(Q @ P) for P in covs))
    return mean_cost + trace, mean_cost


# ---------------------------------------------------------------------------
# closed-loop harness on the controlled environment
# ---------------------------------------------------------------------------

@dataclass
class ControlSetup:
    model: object
    probe: object
    goal_signal: np.ndarray
    goal_latent: np.ndarray


def train_controlled(env, sigma, seed, episodes=20, length=300, train_cfg=None, goal_signal=None):
    """Fit an action-conditioned VJEPA on random-action episodes plus a state probe.

    The probe maps encoder latents ``z_t`` to ``s_t``. The goal latent is the
    encoding of the distractor-free, noise-free observation ``C s_goal``.
    """
    from lbl.env import rollout
    from lbl.models import TrainConfig, VJepaModel
    from lbl.optim import make_batch, train
    from lbl.probe import LinearProbe

    cfg = TrainConfig(seed=seed) if train_cfg is None else train_cfg
    xs, us, ss = [], [], []
    for e in range(episodes):
        rng = np.random.default_rng([seed, e, 0xEB15])
        acts = rng.standard_normal((length - 1, env.d_u))
        traj = rollout(env, sigma, length, rng, policy=acts)
        xs.append(traj.x)
        us.append(traj.u)
        ss.append(traj.s)
    model = VJepaModel(env.d_x, beta=cfg.beta, d_u=env.d_u, rng=np.random.default_rng([seed, 0xC71]))
    train(model, make_batch("vjepa", xs, us), cfg)
    z = model.encode(np.vstack(xs))
    probe = LinearProbe().fit(z, np.vstack(ss))
    goal = np.zeros(env.d_s) if goal_signal is None else np.asarray(goal_signal, dtype=np.float64)
    return ControlSetup(model, probe, goal, model.encode(env.C @ goal))


@dataclass
class ClosedLoop:
    trajectory: object
    distances: np.ndarray
    planned_costs: list

    @property
    def mean_distance(self):
        return float(self.distances[1:].mean())


def run_closed_loop(env, setup, sigma, steps, cfg, seed, policy="mpc"):
    """Drive the environment for ``steps`` actions with VJEPA-MPC or zero actions.

    Environment noise depends only on ``seed``, so the two policies face the same
    disturbance sequence. ``distances[t]`` is ``||probe(z_t) - s_goal||``.
    """
    from lbl.env import rollout

    plan_rng = np.random.default_rng([seed, 0x91A])
    planned = []

    def act(t, x_t):
        if policy == "zero":
            return np.zeros(env.d_u)
        res = vjepa_mpc(setup.model, setup.model.encode(x_t), setup.goal_latent, cfg, plan_rng)
        planned.append(res.cost)
        return res.action

    if policy not in ("mpc", "zero"):
        raise ValueError(f"unknown policy {policy!r}")
    traj = rollout(env, sigma, steps + 1, np.random.default_rng([seed, 0xE1]), policy=act)
    decoded = setup.probe.predict(setup.model.encode(traj.x))
    dist = np.linalg.norm(decoded - setup.goal_signal, axis=1)
    return ClosedLoop(traj, dist, planned)
