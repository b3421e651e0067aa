"""Trajectory-centric policy optimization for time-varying linear-Gaussian
controllers.

Each iteration works on a batch of rollouts in two steps. First a model-based
update: fit time-varying linear dynamics by ridge regression, build a local
quadratic cost model, and run a KL-constrained Riccati backward pass against
the previous policy (dual variable found by bisection on the horizon-summed
expected KL). Second a model-free correction: the part of the sampled
cost-to-go the quadratic model cannot express, S_resid = S_actual - S_model,
reweights the sampled actions with per-timestep softmax weights whose
temperature targets a fixed effective sample size, nudging the feedforward
offsets toward what actually scored well.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .numerics import SeededRng

DEFAULT_ETA_BRACKET = (1e-6, 1e6)
MAX_BISECT_ITERS = 50
DEFAULT_RIDGE = 1e-6
DEFAULT_FD_STEP = 1e-3
_UU_EIG_FLOOR = 1e-6
_RESIDUAL_UNIFORM_TOL = 1e-8


class ConditioningError(RuntimeError):
    """Regression or Riccati step is numerically unusable."""


class BisectionError(RuntimeError):
    """Dual search failed to bracket the KL constraint."""


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

@dataclass
class TVLGPolicy:
    """u_t ~ N(K_t x_t + k_t, Sigma_t) for t = 0..T-1."""

    K: np.ndarray  # (T, n_u, n_x)
    k: np.ndarray  # (T, n_u)
    sigma: np.ndarray  # (T, n_u, n_u)
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.k = np.asarray(self.k, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        t, n_u, n_x = self.K.shape
        if self.k.shape != (t, n_u) or self.sigma.shape != (t, n_u, n_u):
            raise ValueError("policy tensor shapes are inconsistent")
        if self.chol is None:
            try:
                self.chol = np.linalg.cholesky(self.sigma)
            except np.linalg.LinAlgError as exc:
                raise ConditioningError(f"policy covariance not positive definite: {exc}") from exc

    @property
    def horizon(self) -> int:
        return self.K.shape[0]

    @property
    def n_u(self) -> int:
        return self.K.shape[1]

    @property
    def n_x(self) -> int:
        return self.K.shape[2]

    def mean_action(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.K[t] @ x + self.k[t]

    def sample_action(self, t: int, x: np.ndarray, rng: SeededRng) -> np.ndarray:
        return self.mean_action(t, x) + self.chol[t] @ rng.normal(self.n_u)

    def copy(self) -> "TVLGPolicy":
        return TVLGPolicy(self.K.copy(), self.k.copy(), self.sigma.copy(), self.chol.copy())


def init_policy(
    horizon: int,
    n_x: int,
    n_u: int,
    base_variance: float = 0.04,
    emphasized_joint: int | None = None,
    emphasis: float = 4.0,
) -> TVLGPolicy:
    """Zero-gain, zero-offset policy with isotropic exploration, optionally
    boosted on one designated (wrist-like) action dimension."""
    variances = np.full(n_u, base_variance)
    if emphasized_joint is not None:
        variances[emphasized_joint] *= emphasis
    sigma = np.tile(np.diag(variances), (horizon, 1, 1))
    return TVLGPolicy(np.zeros((horizon, n_u, n_x)), np.zeros((horizon, n_u)), sigma)


# ---------------------------------------------------------------------------
# dynamics fitting
# ---------------------------------------------------------------------------

@dataclass
class LinearDynamics:
    f_x: np.ndarray  # (T, n_x, n_x)
    f_u: np.ndarray  # (T, n_x, n_u)
    f_c: np.ndarray  # (T, n_x)
    noise_cov: np.ndarray  # (T, n_x, n_x)

    @property
    def horizon(self) -> int:
        return self.f_x.shape[0]


def fit_linear_dynamics(
    states: np.ndarray,
    actions: np.ndarray,
    ridge: float = DEFAULT_RIDGE,
    time_window: int = 0,
) -> LinearDynamics:
    """Per-timestep ridge least squares of x_{t+1} on (x_t, u_t, 1), pooled
    across rollouts.

    states is (N, T+1, n_x), actions (N, T, n_u). ``time_window`` optionally
    pools transitions from neighboring timesteps too, which stabilizes the fit
    when the state is wide relative to the rollout count.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if states.ndim != 3 or actions.ndim != 3:
        raise ValueError("need batched rollouts: states (N, T+1, n_x), actions (N, T, n_u)")
    n_roll, t_plus_1, n_x = states.shape
    horizon = t_plus_1 - 1
    n_u = actions.shape[2]
    if n_roll < 2:
        raise ValueError("need at least 2 rollouts to fit dynamics")
    if actions.shape[:2] != (n_roll, horizon):
        raise ValueError("actions shape does not match states")

    f_x = np.zeros((horizon, n_x, n_x))
    f_u = np.zeros((horizon, n_x, n_u))
    f_c = np.zeros((horizon, n_x))
    noise_cov = np.zeros((horizon, n_x, n_x))
    dim_z = n_x + n_u + 1

    for t in range(horizon):
        lo = max(0, t - time_window)
        hi = min(horizon - 1, t + time_window)
        zs, ys = [], []
        for s in range(lo, hi + 1):
            zs.append(np.concatenate([states[:, s, :], actions[:, s, :], np.ones((n_roll, 1))], axis=1))
            ys.append(states[:, s + 1, :])
        z = np.concatenate(zs, axis=0)
        y = np.concatenate(ys, axis=0)
        gram = z.T @ z + ridge * np.eye(dim_z)
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise ConditioningError(
                f"dynamics regressors at t={t} are rank deficient after ridge (cond={cond:.2e})"
            )
        theta = np.linalg.solve(gram, z.T @ y)  # (dim_z, n_x)
        f_x[t] = theta[:n_x, :].T
        f_u[t] = theta[n_x : n_x + n_u, :].T
        f_c[t] = theta[-1, :]
        resid = y - z @ theta
        noise_cov[t] = resid.T @ resid / max(1, resid.shape[0] - 1)
        if not np.all(np.isfinite(noise_cov[t])):
            raise ConditioningError(f"non-finite residual covariance at t={t}")
    return LinearDynamics(f_x, f_u, f_c, noise_cov)


# ---------------------------------------------------------------------------
# local quadratic cost model
# ---------------------------------------------------------------------------

@dataclass
class QuadraticCost:
    """Per-timestep quadratic model in absolute (x, u) coordinates:
    cost_t(z) = 0.5 z' H_t z + g_t' z + c0_t with the u-block of H_t floored
    to positive definite."""

    hessian: np.ndarray  # (T, n_z, n_z)
    grad: np.ndarray  # (T, n_z)
    const: np.ndarray  # (T,)
    n_x: int
    n_u: int

    @property
    def horizon(self) -> int:
        return self.hessian.shape[0]

    def value(self, t: int, x: np.ndarray, u: np.ndarray) -> float:
        z = np.concatenate([x, u])
        return float(0.5 * z @ self.hessian[t] @ z + self.grad[t] @ z + self.const[t])


def quadratize_cost(
    cost_fn,
    nominal_states: np.ndarray,
    nominal_actions: np.ndarray,
    fd_step: float = DEFAULT_FD_STEP,
    uu_floor: float = _UU_EIG_FLOOR,
) -> QuadraticCost:
    """Finite-difference quadratic expansion of ``cost_fn(t, x, u)`` about the
    nominal trajectory, converted to absolute coordinates."""
    xs = np.asarray(nominal_states, dtype=np.float64)
    us = np.asarray(nominal_actions, dtype=np.float64)
    horizon, n_u = us.shape
    n_x = xs.shape[1]
    n_z = n_x + n_u
    hessian = np.zeros((horizon, n_z, n_z))
    grad = np.zeros((horizon, n_z))
    const = np.zeros(horizon)

    for t in range(horizon):
        z0 = np.concatenate([xs[t], us[t]])

        def f(z, t=t):
            value = cost_fn(t, z[:n_x], z[n_x:])
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite cost along the nominal trajectory at t={t}")
            return value

        f0 = f(z0)
        g_loc = np.zeros(n_z)
        h_loc = np.zeros((n_z, n_z))
        for i in range(n_z):
            zp, zm = z0.copy(), z0.copy()
            zp[i] += fd_step
            zm[i] -= fd_step
            fp, fm = f(zp), f(zm)
            g_loc[i] = (fp - fm) / (2.0 * fd_step)
            h_loc[i, i] = (fp - 2.0 * f0 + fm) / fd_step**2
        for i in range(n_z):
            for j in range(i + 1, n_z):
                zpp, zpm, zmp, zmm = z0.copy(), z0.copy(), z0.copy(), z0.copy()
                zpp[[i, j]] += fd_step
                zmm[[i, j]] -= fd_step
                zpm[i] += fd_step
                zpm[j] -= fd_step
                zmp[i] -= fd_step
                zmp[j] += fd_step
                h_loc[i, j] = h_loc[j, i] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4.0 * fd_step**2)

        h_loc = 0.5 * (h_loc + h_loc.T)
        # floor the action block's eigenvalues so Q_uu stays invertible
        uu = h_loc[n_x:, n_x:]
        eigval, eigvec = np.linalg.eigh(uu)
        h_loc[n_x:, n_x:] = eigvec @ np.diag(np.maximum(eigval, uu_floor)) @ eigvec.T

        hessian[t] = h_loc
        grad[t] = g_loc - h_loc @ z0
        const[t] = f0 - g_loc @ z0 + 0.5 * z0 @ h_loc @ z0
    return QuadraticCost(hessian, grad, const, n_x=n_x, n_u=n_u)


# ---------------------------------------------------------------------------
# KL-constrained backward pass
# ---------------------------------------------------------------------------

def _policy_penalty_terms(prev: TVLGPolicy):
    """Quadratic expansion of -log p_prev(u | x) per timestep (constants dropped)."""
    horizon, n_u, n_x = prev.K.shape
    n_z = n_x + n_u
    hs = np.zeros((horizon, n_z, n_z))
    gs = np.zeros((horizon, n_z))
    for t in range(horizon):
        prec = np.linalg.inv(prev.sigma[t])
        prec = 0.5 * (prec + prec.T)
        kt, bt = prev.K[t], prev.k[t]
        hs[t, :n_x, :n_x] = kt.T @ prec @ kt
        hs[t, :n_x, n_x:] = -kt.T @ prec
        hs[t, n_x:, :n_x] = -prec @ kt
        hs[t, n_x:, n_x:] = prec
        gs[t, :n_x] = kt.T @ prec @ bt
        gs[t, n_x:] = -prec @ bt
    return hs, gs


def _riccati(dynamics: LinearDynamics, hessian, grad, n_x: int, n_u: int) -> TVLGPolicy:
    horizon = dynamics.horizon
    big_k = np.zeros((horizon, n_u, n_x))
    small_k = np.zeros((horizon, n_u))
    sigma = np.zeros((horizon, n_u, n_u))
    v_mat = np.zeros((n_x, n_x))
    v_vec = np.zeros(n_x)

    for t in range(horizon - 1, -1, -1):
        f_t = np.concatenate([dynamics.f_x[t], dynamics.f_u[t]], axis=1)  # (n_x, n_z)
        q_mat = hessian[t] + f_t.T @ v_mat @ f_t
        q_mat = 0.5 * (q_mat + q_mat.T)
        q_vec = grad[t] + f_t.T @ (v_vec + v_mat @ dynamics.f_c[t])

        q_uu = q_mat[n_x:, n_x:]
        q_ux = q_mat[n_x:, :n_x]
        q_xx = q_mat[:n_x, :n_x]
        q_u = q_vec[n_x:]
        q_x = q_vec[:n_x]

        reg = 0.0
        for _ in range(18):
            try:
                np.linalg.cholesky(q_uu + reg * np.eye(n_u))
                break
            except np.linalg.LinAlgError:
                reg = max(reg * 10.0, 1e-8)
        else:
            raise ConditioningError(f"Q_uu not positive definite at t={t} after regularization escalation")
        q_uu = q_uu + reg * np.eye(n_u)

        q_uu_inv = np.linalg.inv(q_uu)
        q_uu_inv = 0.5 * (q_uu_inv + q_uu_inv.T)
        big_k[t] = -np.linalg.solve(q_uu, q_ux)
        small_k[t] = -np.linalg.solve(q_uu, q_u)
        sigma[t] = q_uu_inv

        v_mat = q_xx - q_ux.T @ q_uu_inv @ q_ux
        v_mat = 0.5 * (v_mat + v_mat.T)
        v_vec = q_x - q_ux.T @ q_uu_inv @ q_u
    return TVLGPolicy(big_k, small_k, sigma)


def expected_kl(
    dynamics: LinearDynamics,
    new_policy: TVLGPolicy,
    prev_policy: TVLGPolicy,
    x0_mean: np.ndarray,
    x0_cov: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Horizon sum (and per-timestep values) of E[KL(new || prev)] with state
    marginals propagated forward under the fitted dynamics and the new policy."""
    horizon = new_policy.horizon
    n_u = new_policy.n_u
    mean = np.asarray(x0_mean, dtype=np.float64).copy()
    cov = np.asarray(x0_cov, dtype=np.float64).copy()
    per_t = np.zeros(horizon)
    for t in range(horizon):
        d_k = new_policy.K[t] - prev_policy.K[t]
        d_b = new_policy.k[t] - prev_policy.k[t]
        prev_prec = np.linalg.inv(prev_policy.sigma[t])
        shift = d_k @ mean + d_b
        maha = float(shift @ prev_prec @ shift) + float(np.trace(prev_prec @ d_k @ cov @ d_k.T))
        trace_term = float(np.trace(prev_prec @ new_policy.sigma[t]))
        logdet = float(
            np.linalg.slogdet(prev_policy.sigma[t])[1] - np.linalg.slogdet(new_policy.sigma[t])[1]
        )
        per_t[t] = 0.5 * (trace_term + maha - n_u + logdet)

        act_mean = new_policy.K[t] @ mean + new_policy.k[t]
        cov_uu = new_policy.K[t] @ cov @ new_policy.K[t].T + new_policy.sigma[t]
        cov_xu = cov @ new_policy.K[t].T
        f_x, f_u = dynamics.f_x[t], dynamics.f_u[t]
        mean = f_x @ mean + f_u @ act_mean + dynamics.f_c[t]
        cov = (
            f_x @ cov @ f_x.T
            + f_u @ cov_uu @ f_u.T
            + f_x @ cov_xu @ f_u.T
            + f_u @ cov_xu.T @ f_x.T
            + dynamics.noise_cov[t]
        )
        cov = 0.5 * (cov + cov.T) + 1e-12 * np.eye(cov.shape[0])
    return float(per_t.sum()), per_t


def lqr_backward_pass(
    dynamics: LinearDynamics,
    cost: QuadraticCost,
    prev_policy: TVLGPolicy,
    kl_epsilon: float,
    x0_mean: np.ndarray | None = None,
    x0_cov: np.ndarray | None = None,
    eta_bracket: tuple[float, float] = DEFAULT_ETA_BRACKET,
) -> tuple[TVLGPolicy, dict]:
    """Riccati recursion on the cost augmented with a KL penalty against the
    previous policy.

    The dual variable eta scales the true cost (cost/eta + penalty): small eta
    recovers the unconstrained optimum, large eta pins the update to the
    previous policy. Bisection finds the horizon-summed expected KL within
    [0.9 eps, eps] whenever the constraint is active. kl_epsilon = inf skips
    the penalty entirely and returns the plain finite-horizon controller.
    """
    n_x, n_u = cost.n_x, cost.n_u
    if x0_mean is None:
        x0_mean = np.zeros(n_x)
    if x0_cov is None:
        x0_cov = 1e-8 * np.eye(n_x)

    if not np.isfinite(kl_epsilon):
        policy = _riccati(dynamics, cost.hessian, cost.grad, n_x, n_u)
        kl_total, kl_per_t = expected_kl(dynamics, policy, prev_policy, x0_mean, x0_cov)
        return policy, {"eta": 0.0, "kl": kl_total, "kl_per_t": kl_per_t, "active": False}
    if kl_epsilon <= 0:
        raise ValueError("kl_epsilon must be positive")

    pen_h, pen_g = _policy_penalty_terms(prev_policy)

    def solve(eta: float) -> tuple[TVLGPolicy, float, np.ndarray]:
        policy = _riccati(dynamics, cost.hessian / eta + pen_h, cost.grad / eta + pen_g, n_x, n_u)
        kl_total, kl_per_t = expected_kl(dynamics, policy, prev_policy, x0_mean, x0_cov)
        return policy, kl_total, kl_per_t

    eta_lo, eta_hi = eta_bracket
    policy_lo, kl_lo, per_lo = solve(eta_lo)
    if kl_lo <= kl_epsilon:
        # constraint inactive: essentially the unconstrained update
        return policy_lo, {"eta": eta_lo, "kl": kl_lo, "kl_per_t": per_lo, "active": False}
    policy_hi, kl_hi, per_hi = solve(eta_hi)
    if kl_hi > kl_epsilon:
        # even the most conservative update exceeds eps; return it rather than
        # chase an unattainable target (relevant only for vanishing eps)
        return policy_hi, {"eta": eta_hi, "kl": kl_hi, "kl_per_t": per_hi, "active": True, "clamped": True}

    best = (eta_hi, policy_hi, kl_hi, per_hi)
    log_lo, log_hi = np.log(eta_lo), np.log(eta_hi)
    for _ in range(MAX_BISECT_ITERS):
        if 0.9 * kl_epsilon <= best[2] <= kl_epsilon:
            break
        eta_mid = float(np.exp(0.5 * (log_lo + log_hi)))
        policy_mid, kl_mid, per_mid = solve(eta_mid)
        if kl_mid <= kl_epsilon:
            log_hi = np.log(eta_mid)
            best = (eta_mid, policy_mid, kl_mid, per_mid)
        else:
            log_lo = np.log(eta_mid)
    else:
        if not (best[2] <= kl_epsilon):
            raise BisectionError(f"KL bisection failed after {MAX_BISECT_ITERS} iterations")
    eta, policy, kl_total, kl_per_t = best
    return policy, {"eta": eta, "kl": kl_total, "kl_per_t": kl_per_t, "active": True}


# ---------------------------------------------------------------------------
# exponentiated-residual correction
# ---------------------------------------------------------------------------

@dataclass
class CostToGoSamples:
    """Sampled and model-predicted cost-to-go, per rollout and timestep.

    The residual is defined as actual - model, computed here so the identity
    holds exactly per sample by construction.
    """

    actual: np.ndarray  # (N, T)
    model: np.ndarray  # (N, T)
    residual: np.ndarray = None  # (N, T)

    def __post_init__(self):
        if self.actual.shape != self.model.shape:
            raise ValueError("cost-to-go arrays must share a shape")
        expected = self.actual - self.model
        if self.residual is None:
            self.residual = expected
        elif not np.array_equal(self.residual, expected):
            raise ValueError("residual must equal actual - model exactly")


def cost_to_go(step_costs: np.ndarray) -> np.ndarray:
    """Suffix sums along time: S[:, t] = sum_{j >= t} c[:, j]."""
    return np.cumsum(step_costs[:, ::-1], axis=1)[:, ::-1]


def residual_weights(residuals: np.ndarray, ess_fraction: float = 0.5) -> np.ndarray:
    """Softmax weights over rollouts, exp(-residual / temperature), with the
    temperature chosen so the effective sample size hits ess_fraction * N.

    Exactly uniform when the residual spread is negligible; shift-invariant by
    construction (the minimum is subtracted before exponentiation).
    """
    r = np.asarray(residuals, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residual cost-to-go")
    n = r.shape[0]
    shifted = r - r.min()
    spread = float(shifted.max())
    scale = max(1.0, float(np.abs(r).max()))
    if spread <= _RESIDUAL_UNIFORM_TOL * scale:
        return np.full(n, 1.0 / n)

    target = ess_fraction * n

    def ess(temp: float) -> float:
        w = np.exp(-shifted / temp)
        w = w / w.sum()
        return 1.0 / float(np.sum(w * w))

    lo, hi = spread * 1e-8, spread * 1e8
    if ess(hi) < target:
        temp = hi
    elif ess(lo) > target:
        temp = lo
    else:
        for _ in range(80):
            mid = np.sqrt(lo * hi)
            if ess(mid) < target:
                lo = mid
            else:
                hi = mid
        temp = np.sqrt(lo * hi)
    w = np.exp(-shifted / temp)
    return w / w.sum()


def pi2_update(
    policy: TVLGPolicy,
    samples: CostToGoSamples,
    actions: np.ndarray,
    ess_fraction: float = 0.5,
    update_sigma: bool = False,
    sigma_floor: float = 1e-6,
) -> tuple[TVLGPolicy, dict]:
    """Move each feedforward offset toward the residual-weighted average of the
    sampled actions, measured as deviations from the batch mean action.

    With uniform weights the deviations cancel exactly and the policy is
    returned unchanged. Gains are left to the model-based step.
    """
    n_roll, horizon, n_u = np.asarray(actions).shape
    if samples.residual.shape != (n_roll, horizon):
        raise ValueError("cost-to-go samples do not match the action batch")
    new_k = policy.k.copy()
    new_sigma = policy.sigma.copy()
    delta_norms = np.zeros(horizon)
    for t in range(horizon):
        w = residual_weights(samples.residual[:, t], ess_fraction)
        dev = actions[:, t, :] - actions[:, t, :].mean(axis=0)
        delta = w @ dev
        new_k[t] = policy.k[t] + delta
        delta_norms[t] = np.linalg.norm(delta)
        if update_sigma:
            centered = actions[:, t, :] - w @ actions[:, t, :]
            weighted_cov = (centered * w[:, None]).T @ centered
            new_sigma[t] = 0.5 * (weighted_cov + weighted_cov.T) + sigma_floor * np.eye(n_u)
    updated = TVLGPolicy(policy.K.copy(), new_k, new_sigma)
    return updated, {"delta_norm": float(np.linalg.norm(delta_norms)), "per_t_delta": delta_norms}


# ---------------------------------------------------------------------------
# full iteration
# ---------------------------------------------------------------------------

@dataclass
class PilqrConfig:
    n_rollouts: int = 10
    kl_epsilon: float = 2.0
    ess_fraction: float = 0.5
    ridge: float = DEFAULT_RIDGE
    dynamics_time_window: int = 2
    fd_step: float = DEFAULT_FD_STEP
    update_sigma: bool = False


def should_halve_epsilon(mean_costs: list[float]) -> bool:
    """Step-size safeguard: two consecutive increases of the mean cost."""
    return len(mean_costs) >= 3 and mean_costs[-1] > mean_costs[-2] > mean_costs[-3]


def pilqr_iteration(
    rollout_fn,
    policy: TVLGPolicy,
    cost_fn,
    config: PilqrConfig,
    rng: SeededRng,
) -> tuple[TVLGPolicy, dict]:
    """One optimization round: rollouts, dynamics fit, quadratic cost model,
    KL-constrained backward pass, then the residual correction.

    ``rollout_fn(policy, rng) -> Trajectory`` and ``cost_fn(t, x, u) -> float``
    keep this loop independent of any particular environment.
    """
    trajectories = [rollout_fn(policy, rng.child(f"rollout-{i}")) for i in range(config.n_rollouts)]
    states = np.stack([tr.states for tr in trajectories])  # (N, T+1, n_x)
    actions = np.stack([tr.actions for tr in trajectories])  # (N, T, n_u)
    horizon = actions.shape[1]

    step_costs = np.stack(
        [
            np.array([cost_fn(t, states[i, t], actions[i, t]) for t in range(horizon)])
            for i in range(len(trajectories))
        ]
    )

    dynamics = fit_linear_dynamics(states, actions, ridge=config.ridge, time_window=config.dynamics_time_window)
    quad = quadratize_cost(cost_fn, states.mean(axis=0), actions.mean(axis=0), fd_step=config.fd_step)

    x0_mean = states[:, 0, :].mean(axis=0)
    centered = states[:, 0, :] - x0_mean
    x0_cov = centered.T @ centered / max(1, centered.shape[0] - 1) + 1e-10 * np.eye(states.shape[2])

    lqr_policy, lqr_info = lqr_backward_pass(
        dynamics, quad, policy, config.kl_epsilon, x0_mean, x0_cov
    )

    model_costs = np.stack(
        [
            np.array([quad.value(t, states[i, t], actions[i, t]) for t in range(horizon)])
            for i in range(len(trajectories))
        ]
    )
    samples = CostToGoSamples(actual=cost_to_go(step_costs), model=cost_to_go(model_costs))
    new_policy, pi2_info = pi2_update(
        lqr_policy, samples, actions, ess_fraction=config.ess_fraction, update_sigma=config.update_sigma
    )

    total_costs = step_costs.sum(axis=1)
    lqr_step_norm = float(np.linalg.norm(lqr_policy.k - policy.k))
    metrics = {
        "mean_cost": float(total_costs.mean()),
        "min_cost": float(total_costs.min()),
        "kl": float(lqr_info["kl"]),
        "eta": float(lqr_info["eta"]),
        "residual_rms": float(np.sqrt(np.mean(samples.residual**2))),
        "pi2_delta_norm": pi2_info["delta_norm"],
        "lqr_step_norm": lqr_step_norm,
        "trajectories": trajectories,
        "kl_per_t": lqr_info["kl_per_t"],
    }
    return new_policy, metrics


def run_pilqr(
    rollout_fn,
    policy: TVLGPolicy,
    cost_fn,
    config: PilqrConfig,
    rng: SeededRng,
    n_iterations: int,
    success_fn=None,
) -> tuple[TVLGPolicy, list[dict]]:
    """Iterate with the step-size safeguard: two consecutive mean-cost
    increases halve the KL bound for the following iterations."""
    epsilon = config.kl_epsilon
    history: list[dict] = []
    mean_costs: list[float] = []
    for it in range(n_iterations):
        iter_config = dataclasses.replace(config, kl_epsilon=epsilon)
        policy, metrics = pilqr_iteration(rollout_fn, policy, cost_fn, iter_config, rng.child(f"iter-{it}"))
        mean_costs.append(metrics["mean_cost"])
        halved = should_halve_epsilon(mean_costs)
        if halved:
            epsilon = epsilon / 2.0
        metrics["iteration"] = it
        metrics["epsilon"] = iter_config.kl_epsilon
        metrics["epsilon_halved"] = halved
        if success_fn is not None:
            trajs = metrics["trajectories"]
            values = np.array([success_fn(tr) for tr in trajs])
            metrics["success_mean"] = float(values.mean())
            metrics["success_std"] = float(values.std())
        history.append(metrics)
    return policy, history
