"""Synthetic stand-in for cameras and robots.

Three generators live here:

* a scripted liquid-pouring latent process rendered into multiple views,
* smooth random joint motions for two differently-embodied agents, and
* a controllable 3-joint arm whose latent pouring variables are algebraic
  functions of its joints, for the trajectory-optimization experiments.

Views are fixed smooth random maps from latent to observation space; two views
of one sequence differ only through their maps and per-view noise, which is
what makes simultaneous frames genuinely correspond.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EvalSidecar, MultiViewSequence
from .numerics import SeededRng

CONTAINER_ANGLES = (90.0, 45.0, 0.0, -45.0)

ATTRIBUTE_NAMES = (
    "hand_contact",
    "within_distance",
    "container_angle",
    "liquid_flowing",
    "recipient_has_liquid",
)

# the script spends on average 30% of a sequence pouring; tests check the
# generated occupancy against this closed form
FLOW_FRACTION_RANGE = (0.20, 0.40)
_PRE_CONTACT_RANGE = (0.05, 0.15)
_CONTACT_TO_FLOW_RANGE = (0.10, 0.25)
_POST_FLOW_RANGE = (0.05, 0.15)

POSE_JOINT_RANGES = np.array(
    [
        [-1.6, 1.6],
        [-1.2, 1.2],
        [-2.0, 2.0],
        [-1.6, 1.6],
        [-2.4, 2.4],
        [-1.0, 1.0],
        [0.0, 0.4],
        [-3.1, 3.1],
    ]
)
N_POSE_JOINTS = 8


# ---------------------------------------------------------------------------
# view renderers
# ---------------------------------------------------------------------------

@dataclass
class ViewRenderer:
    """Fixed map from latent vectors to observation vectors.

    Observations carry two kinds of structure, mirroring what a camera sees.
    A smooth low-gain channel (tanh bottleneck) encodes the latent gently; a
    high-frequency channel (random sinusoids of the latent, view-specific
    frequencies and phases) plays the role of viewpoint-dependent texture:
    it dominates raw distances, stays coherent between temporal neighbors,
    but is decorrelated across views and across sequences. The basis tensors
    are mixed by a camera-angle-like parameter ``theta_deg``, so nearby
    angles give nearby maps and new angles can be interpolated. An optional
    agent perturbation creates the embodiment gap.
    """

    view_id: int
    theta_deg: float
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    offset: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    texture_gain: float
    noise_scale: float
    smooth_input_weights: np.ndarray | None = None

    @property
    def obs_dim(self) -> int:
        return self.w2.shape[1] + self.omega.shape[1]

    def render(self, latents: np.ndarray, rng: SeededRng | None = None) -> np.ndarray:
        z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        if z.shape[1] != self.w1.shape[0]:
            raise ValueError(f"latent dim {z.shape[1]} != renderer input {self.w1.shape[0]}")
        z_smooth = z if self.smooth_input_weights is None else z * self.smooth_input_weights
        smooth = np.tanh(z_smooth @ self.w1 + self.b1) @ self.w2 + self.b2 + self.offset
        texture = self.texture_gain * np.sin(z @ self.omega + self.phase)
        obs = np.concatenate([smooth, texture], axis=1)
        if rng is not None and self.noise_scale > 0:
            obs = obs + self.noise_scale * rng.normal(obs.shape)
        return obs if np.asarray(latents).ndim == 2 else obs[0]


@dataclass
class RendererFamily:
    """Shared random basis from which per-angle, per-agent renderers are cut.

    Half of every observation vector is the smooth channel, half the
    view-specific texture channel. ``texture_frequency`` sets how fast the
    texture decorrelates per unit latent change (coherent between temporal
    neighbors, saturated across sequences).
    """

    latent_dim: int
    hidden_dim: int
    max_obs_dim: int
    seed: int
    texture_gain: float = 2.0
    texture_frequency: float = 6.0
    view_mix: float = 0.6
    basis: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.basis:
            root = SeededRng(self.seed).child("renderer-family")
            l, h = self.latent_dim, self.hidden_dim
            d_smooth = self.max_obs_dim // 2
            d_tex = self.max_obs_dim - d_smooth
            s1 = 1.6 / np.sqrt(l)
            s2 = 1.0 / np.sqrt(h)
            so = self.texture_frequency / np.sqrt(l)
            vm = self.view_mix
            self.basis = {
                "w1_0": root.child("w1_0").normal((l, h)) * s1,
                "w1_s": root.child("w1_s").normal((l, h)) * (vm * s1),
                "w1_c": root.child("w1_c").normal((l, h)) * (vm * s1),
                "b1": root.child("b1").normal(h) * 0.3,
                "w2_0": root.child("w2_0").normal((h, d_smooth)) * s2,
                "w2_s": root.child("w2_s").normal((h, d_smooth)) * (vm * s2),
                "w2_c": root.child("w2_c").normal((h, d_smooth)) * (vm * s2),
                "b2": root.child("b2").normal(d_smooth) * 0.1,
                "off_s": root.child("off_s").normal(d_smooth) * 0.4,
                "off_c": root.child("off_c").normal(d_smooth) * 0.4,
            }

    def make(
        self,
        view_id: int,
        theta_deg: float,
        obs_dim: int | None = None,
        agent: str | None = None,
        agent_gap: float = 0.0,
        noise_scale: float = 0.0,
        smooth_input_weights: np.ndarray | None = None,
    ) -> ViewRenderer:
        if obs_dim is None:
            obs_dim = self.max_obs_dim
        if obs_dim > self.max_obs_dim:
            raise ValueError(f"obs_dim {obs_dim} exceeds family maximum {self.max_obs_dim}")
        d_smooth = min(self.max_obs_dim // 2, obs_dim)
        d_tex = obs_dim - d_smooth
        t = np.deg2rad(theta_deg)
        b = self.basis
        w1 = b["w1_0"] + np.sin(t) * b["w1_s"] + np.cos(t) * b["w1_c"]
        w2 = b["w2_0"] + np.sin(t) * b["w2_s"] + np.cos(t) * b["w2_c"]
        b1 = b["b1"].copy()
        offset = np.sin(t) * b["off_s"] + np.cos(t) * b["off_c"]
        # texture is view-specific by construction: a new angle means new
        # surface detail, drawn independently per angle (and per agent)
        tex_key = f"texture-{agent or 'shared'}-{theta_deg:.4f}"
        tex_rng = SeededRng(self.seed).child(tex_key)
        so = self.texture_frequency / np.sqrt(self.latent_dim)
        omega = tex_rng.child("omega").normal((self.latent_dim, self.max_obs_dim - self.max_obs_dim // 2)) * so
        phase = tex_rng.child("phase").uniform(0.0, 2.0 * np.pi, self.max_obs_dim - self.max_obs_dim // 2)
        if agent is not None and agent_gap > 0:
            agent_rng = SeededRng(self.seed).child(f"agent-{agent}")
            w1 = w1 + agent_gap * agent_rng.child("w1").normal(w1.shape) * (1.6 / np.sqrt(self.latent_dim))
            w2 = w2 + agent_gap * agent_rng.child("w2").normal(w2.shape) * (1.0 / np.sqrt(self.hidden_dim))
            offset = offset + agent_gap * agent_rng.child("off").normal(offset.shape) * 0.4
        return ViewRenderer(
            view_id=view_id,
            theta_deg=theta_deg,
            w1=w1,
            b1=b1,
            w2=w2[:, :d_smooth],
            b2=b["b2"][:d_smooth],
            offset=offset[:d_smooth],
            omega=omega[:, :d_tex],
            phase=phase[:d_tex],
            texture_gain=self.texture_gain,
            noise_scale=noise_scale,
            smooth_input_weights=smooth_input_weights,
        )


# ---------------------------------------------------------------------------
# scripted pouring sequences
# ---------------------------------------------------------------------------

@dataclass
class PouringParams:
    duration_s: float = 5.0
    frame_rate: float = 10.0
    n_views: int = 2
    obs_dim: int = 64
    latent_hidden: int = 32
    nuisance_dim: int = 4
    nuisance_amplitude: float = 0.5
    nuisance_smooth_scale: float = 0.7
    nuisance_cutoff_hz: float = 0.8
    view_noise: float = 0.25
    texture_gain: float = 5.0
    texture_frequency: float = 12.0
    # step-change attributes are rendered at reduced gain so no single boolean
    # dominates the smooth channel
    boolean_latent_scale: float = 0.6
    view_thetas: tuple[float, ...] = (0.0, 120.0, 240.0)
    renderer_seed: int = 7

    @property
    def latent_dim(self) -> int:
        # task booleans + tilt + fill + hand-distance channel + nuisance
        return 6 + self.nuisance_dim


def _band_limited(rng: SeededRng, n_frames: int, rate: float, cutoff_hz: float, dims: int) -> np.ndarray:
    """Unit-variance smooth noise: sums of sinusoids with frequencies below the
    cutoff. Halving the cutoff halves the mean per-step displacement."""
    t = np.arange(n_frames) / rate
    n_modes = 8
    u = rng.uniform(0.2, 1.0, (dims, n_modes))
    amp = rng.uniform(0.5, 1.0, (dims, n_modes))
    phase = rng.uniform(0.0, 2.0 * np.pi, (dims, n_modes))
    freqs = cutoff_hz * u
    sig = np.einsum(
        "dm,dtm->td", amp, np.sin(2.0 * np.pi * freqs[:, None, :] * t[None][..., None] + phase[:, None, :])
    )
    return sig / np.sqrt(np.sum(amp**2, axis=1) / 2.0)


def pouring_latent_script(rng: SeededRng, n_frames: int, frame_rate: float, params: PouringParams):
    """Sample the hidden pouring storyline for one sequence.

    Returns (continuous latent trace (T, latent_dim), attributes dict,
    keyframes [first_contact, first_flow, last_flow, last_contact]).
    """
    if n_frames < 12:
        raise ValueError("duration too short to fit the pouring event script")
    fracs = np.array(
        [
            rng.uniform(*_PRE_CONTACT_RANGE),
            rng.uniform(*_CONTACT_TO_FLOW_RANGE),
            rng.uniform(*FLOW_FRACTION_RANGE),
            rng.uniform(*_POST_FLOW_RANGE),
        ]
    )
    times = np.cumsum(fracs)  # fractions of the duration, max 0.95
    keys = np.round(times * (n_frames - 1)).astype(np.int64)
    for j in range(1, 4):
        keys[j] = max(keys[j], keys[j - 1] + 1)
    keys = np.minimum(keys, n_frames - 1)
    for j in range(2, -1, -1):
        keys[j] = min(keys[j], keys[j + 1] - 1)
    if keys[0] < 0:
        raise ValueError("duration too short to fit the pouring event script")
    k1, k2, k3, k4 = (int(k) for k in keys)

    idx = np.arange(n_frames)
    contact = (idx >= k1) & (idx <= k4)
    flowing = (idx >= k2) & (idx <= k3)

    # within-pouring-distance starts after contact, ends after flow stops
    wd_start = k1 + 1 + int(rng.uniform() * max(k2 - k1 - 1, 0))
    wd_start = min(wd_start, k2)
    wd_end = k3 + int(rng.uniform() * max(k4 - k3 - 1, 0))
    wd_end = max(wd_end, k3)
    within = (idx >= wd_start) & (idx <= wd_end)

    # continuous tilt: upright, down to the pour angle mid-flow, back up
    theta_min = rng.uniform(-45.0, 0.0)
    k_mid = (k2 + k3) // 2
    tilt_knots_x = [0, k1, k2, k_mid, k3, k4, n_frames - 1]
    tilt_knots_y = [90.0, 90.0, 45.0, theta_min, 44.0, 90.0, 90.0]
    tilt = np.interp(idx, tilt_knots_x, tilt_knots_y)
    angles = np.asarray(CONTAINER_ANGLES)
    container_angle = angles[np.argmin(np.abs(tilt[:, None] - angles[None, :]), axis=1)]

    fill_final = rng.uniform(0.6, 1.0)
    fill = np.zeros(n_frames)
    ramp = np.arange(1, k3 - k2 + 2) / (k3 - k2 + 1)
    fill[k2 : k3 + 1] = ramp * fill_final
    fill[k3 + 1 :] = fill_final
    has_liquid = fill > 0

    # hand-to-container distance: approach before contact, zero while holding,
    # retract after release; keeps every phase temporally distinctive in a way
    # that is comparable across sequences
    r_start, r_end = rng.uniform(0.8, 1.3, 2)
    approach = np.clip(idx / max(k1, 1), 0.0, 1.0)
    approach = approach * approach * (3.0 - 2.0 * approach)
    retract = np.clip((idx - k4) / max(n_frames - 1 - k4, 1), 0.0, 1.0)
    retract = retract * retract * (3.0 - 2.0 * retract)
    hand_dist = r_start * (1.0 - approach) + r_end * retract

    nuisance = params.nuisance_amplitude * _band_limited(
        rng, n_frames, frame_rate, params.nuisance_cutoff_hz, params.nuisance_dim
    )

    bscale = params.boolean_latent_scale
    latent = np.column_stack(
        [
            bscale * contact.astype(np.float64),
            bscale * within.astype(np.float64),
            tilt / 90.0,
            bscale * flowing.astype(np.float64),
            fill,
            hand_dist,
            nuisance,
        ]
    )
    attributes = {
        "hand_contact": contact.astype(np.int64),
        "within_distance": within.astype(np.int64),
        "container_angle": container_angle,
        "liquid_flowing": flowing.astype(np.int64),
        "recipient_has_liquid": has_liquid.astype(np.int64),
    }
    return latent, attributes, np.array([k1, k2, k3, k4], dtype=np.int64)


def pouring_renderers(params: PouringParams, n_views: int | None = None) -> list[ViewRenderer]:
    family = RendererFamily(
        params.latent_dim, params.latent_hidden, params.obs_dim, params.renderer_seed,
        texture_gain=params.texture_gain, texture_frequency=params.texture_frequency,
    )
    views = params.n_views if n_views is None else n_views
    if views > len(params.view_thetas):
        raise ValueError(f"only {len(params.view_thetas)} view angles configured, {views} requested")
    weights = np.ones(params.latent_dim)
    weights[6:] = params.nuisance_smooth_scale
    return [
        family.make(v, params.view_thetas[v], noise_scale=params.view_noise, smooth_input_weights=weights)
        for v in range(views)
    ]


def generate_pouring_sequence(
    rng: SeededRng,
    sequence_id: str,
    params: PouringParams,
    renderers: list[ViewRenderer] | None = None,
    render_noise: bool = True,
) -> tuple[MultiViewSequence, EvalSidecar]:
    """One scripted pouring sequence rendered into every configured view."""
    if params.duration_s < 3.0:
        raise ValueError("duration too short to fit the pouring event script (need >= 3 s)")
    if params.n_views < 1:
        raise ValueError("need at least one view")
    n_frames = int(round(params.duration_s * params.frame_rate))
    latent, attributes, keyframes = pouring_latent_script(
        rng.child("script"), n_frames, params.frame_rate, params
    )
    if renderers is None:
        renderers = pouring_renderers(params)
    frames = np.stack(
        [
            r.render(latent, rng.child(f"view-noise-{r.view_id}") if render_noise else None)
            for r in renderers
        ]
    )
    seq = MultiViewSequence(sequence_id, frames, params.frame_rate)
    sidecar = EvalSidecar(
        sequence_id,
        attributes=attributes,
        keyframes=keyframes,
        latent_trace=latent,
    )
    return seq, sidecar


# ---------------------------------------------------------------------------
# smooth random pose sequences for two agents
# ---------------------------------------------------------------------------

@dataclass
class PoseParams:
    duration_s: float = 20.0
    frame_rate: float = 10.0
    view_thetas: tuple[float, ...] = (0.0, 60.0, 120.0)
    human_obs_dim: int = 56
    robot_obs_dim: int = 64
    latent_hidden: int = 32
    motion_cutoff_hz: float = 0.5
    view_noise: float = 0.25
    texture_gain: float = 2.0
    texture_frequency: float = 6.0
    agent_gap: float = 0.5
    renderer_seed: int = 11

    @property
    def max_obs_dim(self) -> int:
        return max(self.human_obs_dim, self.robot_obs_dim)


def pose_renderers(
    params: PoseParams, agent: str, thetas: tuple[float, ...] | None = None
) -> list[ViewRenderer]:
    if agent not in ("human", "robot"):
        raise ValueError(f"unknown agent '{agent}'")
    family = RendererFamily(
        N_POSE_JOINTS, params.latent_hidden, params.max_obs_dim, params.renderer_seed,
        texture_gain=params.texture_gain, texture_frequency=params.texture_frequency,
    )
    obs_dim = params.human_obs_dim if agent == "human" else params.robot_obs_dim
    if thetas is None:
        thetas = params.view_thetas
    return [
        family.make(v, theta, obs_dim=obs_dim, agent=agent, agent_gap=params.agent_gap,
                    noise_scale=params.view_noise)
        for v, theta in enumerate(thetas)
    ]


def sample_joint_trajectory(
    rng: SeededRng, n_frames: int, frame_rate: float, cutoff_hz: float
) -> np.ndarray:
    """Band-limited random motion mapped strictly inside the joint ranges."""
    sig = _band_limited(rng, n_frames, frame_rate, cutoff_hz, N_POSE_JOINTS)
    lo = POSE_JOINT_RANGES[:, 0]
    hi = POSE_JOINT_RANGES[:, 1]
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    return center + half * np.tanh(0.8 * sig)


def generate_pose_sequence(
    rng: SeededRng,
    sequence_id: str,
    agent: str,
    params: PoseParams,
    renderers: list[ViewRenderer] | None = None,
    render_noise: bool = True,
) -> tuple[MultiViewSequence, EvalSidecar]:
    """Random smooth joint motion rendered through the agent's view renderers.

    The joints (vector of 8 per frame) go to the sidecar: they are the robot's
    proprioception for self-regression and the evaluation targets for
    human-like sequences.
    """
    if params.duration_s <= 0:
        raise ValueError("duration must be positive")
    n_frames = int(round(params.duration_s * params.frame_rate))
    joints = sample_joint_trajectory(rng.child("joints"), n_frames, params.frame_rate, params.motion_cutoff_hz)
    if renderers is None:
        renderers = pose_renderers(params, agent)
    frames = np.stack(
        [
            r.render(joints, rng.child(f"view-noise-{r.view_id}") if render_noise else None)
            for r in renderers
        ]
    )
    seq = MultiViewSequence(sequence_id, frames, params.frame_rate)
    sidecar = EvalSidecar(sequence_id, joints=joints, agent=agent)
    return seq, sidecar


# ---------------------------------------------------------------------------
# controllable pouring-surrogate arm
# ---------------------------------------------------------------------------

@dataclass
class ArmParams:
    n_joints: int = 3
    dt: float = 0.1
    horizon: int = 40
    damping: float = 1.2
    coupling: float = 0.25
    action_gain: float = 1.0
    action_limit: float = 6.0
    process_noise: float = 0.01
    target: tuple[float, float] = (1.2, 1.1)
    distance_threshold: float = 0.7
    distance_width: float = 0.35
    tilt_width_deg: float = 8.0
    # the arm starts poised near the recipient; learning concerns the tilt
    # and fine positioning, not gross transport
    init_angles: tuple[float, ...] = (1.0, -0.9, 0.0)
    fill_rate: float = 2.0
    obs_dim: int = 48
    latent_hidden: int = 32
    view_noise: float = 0.08
    texture_gain: float = 2.0
    texture_frequency: float = 6.0
    robot_theta: float = 0.0
    human_theta: float = 105.0
    renderer_seed: int = 23

    # index of the joint that drives the container angle; exploration is
    # initialized higher here, like a wrist joint
    wrist_joint: int = 2

    @property
    def latent_dim(self) -> int:
        return 6


ARM_STATE_FIELDS = ("angles", "velocities", "fill")


@dataclass
class ArmState:
    angles: np.ndarray
    velocities: np.ndarray
    fill: float

    def copy(self) -> "ArmState":
        return ArmState(self.angles.copy(), self.velocities.copy(), self.fill)


class ControlledEnv:
    """Second-order arm with nonlinear velocity coupling.

    The reward path only ever sees observations rendered from the latent task
    variables; the latents themselves (and the fill level in particular) are
    exposed separately for evaluation.
    """

    def __init__(self, params: ArmParams):
        self.params = params
        n = params.n_joints
        mix = SeededRng(params.renderer_seed).child("arm-coupling").normal((n, n))
        self.vel_coupling = -params.damping * np.eye(n) + params.coupling * (mix - mix.T)
        self.action_matrix = params.action_gain * np.eye(n)
        family = RendererFamily(
            params.latent_dim, params.latent_hidden, params.obs_dim, params.renderer_seed,
            texture_gain=params.texture_gain, texture_frequency=params.texture_frequency,
        )
        self.robot_view = family.make(0, params.robot_theta, noise_scale=params.view_noise)
        self.human_view = family.make(1, params.human_theta, noise_scale=params.view_noise)
        self.state = ArmState(np.zeros(n), np.zeros(n), 0.0)

    # -- latent geometry -----------------------------------------------------

    def end_effector(self, angles: np.ndarray) -> np.ndarray:
        q = angles
        return np.array(
            [np.cos(q[0]) + np.cos(q[0] + q[1]), np.sin(q[0]) + np.sin(q[0] + q[1])]
        )

    def tilt_deg(self, angles: np.ndarray) -> float:
        return 90.0 - 135.0 * 0.5 * (np.tanh(angles[self.params.wrist_joint] - 1.5) + 1.0)

    def task_latent(self, state: ArmState) -> np.ndarray:
        p = self.params
        ee = self.end_effector(state.angles)
        dist = float(np.linalg.norm(ee - np.asarray(p.target)))
        closeness = 1.0 / (1.0 + np.exp(-(p.distance_threshold - dist) / p.distance_width))
        tilt = self.tilt_deg(state.angles)
        flow = closeness / (1.0 + np.exp(-(45.0 - tilt) / p.tilt_width_deg))
        return np.array([closeness, tilt / 90.0, flow, state.fill, ee[0] / 2.0, ee[1] / 2.0])

    def flow_intensity(self, state: ArmState) -> float:
        return float(self.task_latent(state)[2])

    # -- dynamics ------------------------------------------------------------

    def reset(self, rng: SeededRng | None = None) -> tuple[ArmState, np.ndarray]:
        n = self.params.n_joints
        self.state = ArmState(np.array(self.params.init_angles[:n], dtype=np.float64), np.zeros(n), 0.0)
        obs = self.render_robot(self.state, rng)
        return self.state.copy(), obs

    def step(self, action: np.ndarray, rng: SeededRng | None = None) -> tuple[ArmState, np.ndarray]:
        """Advance one tick: angles += dt * velocities, then the velocity update
        with tanh-coupled terms, the action, and optional process noise."""
        p = self.params
        u = np.asarray(action, dtype=np.float64)
        if u.shape != (p.n_joints,):
            raise ValueError(f"action must have shape ({p.n_joints},), got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("non-finite action")
        u = np.clip(u, -p.action_limit, p.action_limit)
        s = self.state
        new_angles = s.angles + p.dt * s.velocities
        accel = self.vel_coupling @ np.tanh(s.velocities) + self.action_matrix @ u
        new_vel = s.velocities + p.dt * accel
        if rng is not None and p.process_noise > 0:
            new_vel = new_vel + p.process_noise * np.sqrt(p.dt) * rng.normal(p.n_joints)
        new_state = ArmState(new_angles, new_vel, s.fill)
        flow = self.flow_intensity(new_state)
        new_state.fill = min(1.0, s.fill + p.dt * p.fill_rate * flow)
        self.state = new_state
        obs = self.render_robot(new_state, rng)
        return new_state.copy(), obs

    def render_robot(self, state: ArmState, rng: SeededRng | None = None) -> np.ndarray:
        return self.robot_view.render(self.task_latent(state), rng)

    def render_human(self, state: ArmState, rng: SeededRng | None = None) -> np.ndarray:
        return self.human_view.render(self.task_latent(state), rng)

    def step_jacobians(self, state: ArmState, action: np.ndarray):
        """Analytic Jacobians of the noise-free (angles, velocities) update with
        respect to state and action; checked against finite differences."""
        p = self.params
        n = p.n_joints
        f_x = np.zeros((2 * n, 2 * n))
        f_u = np.zeros((2 * n, n))
        f_x[:n, :n] = np.eye(n)
        f_x[:n, n:] = p.dt * np.eye(n)
        sech2 = 1.0 - np.tanh(state.velocities) ** 2
        f_x[n:, n:] = np.eye(n) + p.dt * self.vel_coupling * sech2[None, :]
        f_u[n:, :] = p.dt * self.action_matrix
        return f_x, f_u


def proprio_vector(state: ArmState) -> np.ndarray:
    return np.concatenate([state.angles, state.velocities])


@dataclass
class Trajectory:
    """One rollout: states include whatever the caller's state_fn packs (for
    the learner that is joints + velocities + embedding), fills are latent and
    evaluation-only."""

    states: np.ndarray  # (T+1, n_x)
    actions: np.ndarray  # (T, n_u)
    observations: np.ndarray  # (T+1, obs_dim)
    fills: np.ndarray  # (T+1,)


def rollout(env: ControlledEnv, policy, rng: SeededRng, state_fn=None) -> Trajectory:
    """Sample u_t ~ N(K_t x_t + k_t, Sigma_t) for the policy's horizon.

    ``state_fn(proprio, obs) -> x`` builds the controller state; the default
    uses the proprioceptive block alone.
    """
    p = env.params
    horizon = policy.horizon
    if horizon != p.horizon:
        raise ValueError(f"policy horizon {horizon} != env horizon {p.horizon}")
    if state_fn is None:
        state_fn = lambda proprio, obs: proprio

    arm_state, obs = env.reset(rng.child("reset"))
    x = state_fn(proprio_vector(arm_state), obs)
    noise_rng = rng.child("action-noise")
    step_rng = rng.child("process")

    states = [x]
    actions = []
    observations = [obs]
    fills = [arm_state.fill]
    for t in range(horizon):
        u = policy.sample_action(t, x, noise_rng)
        arm_state, obs = env.step(u, step_rng.child(t))
        x = state_fn(proprio_vector(arm_state), obs)
        states.append(x)
        actions.append(u)
        observations.append(obs)
        fills.append(arm_state.fill)
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        observations=np.asarray(observations),
        fills=np.asarray(fills),
    )


# ---------------------------------------------------------------------------
# scripted expert and random motions for the arm
# ---------------------------------------------------------------------------

def script_pour_joints(rng: SeededRng, horizon: int, params: ArmParams) -> np.ndarray:
    """Smooth joint trajectory that reaches the target and tilts the wrist
    through a pour; used to produce demonstrations and training clips."""
    n = params.n_joints
    t = np.linspace(0.0, 1.0, horizon + 1)
    init = np.array(params.init_angles[:n], dtype=np.float64)
    # fine positioning from the poised start onto the target
    reach = np.array([1.36, -1.24, 0.0])[:n] + 0.06 * rng.normal(n)
    ramp = np.clip(t / 0.35, 0.0, 1.0)
    smooth = ramp * ramp * (3.0 - 2.0 * ramp)
    joints = init[None, :] + np.outer(smooth, reach - init)
    # wrist tilt: hold upright, pour mid-sequence, partially recover
    tilt_peak = 3.0 + 0.3 * rng.normal()
    pour = np.clip((t - 0.3) / 0.3, 0.0, 1.0)
    pour = pour * pour * (3.0 - 2.0 * pour)
    recover = 1.0 - 0.25 * np.clip((t - 0.85) / 0.15, 0.0, 1.0)
    joints[:, params.wrist_joint] += tilt_peak * pour * recover
    return joints


def script_random_joints(rng: SeededRng, horizon: int, params: ArmParams, cutoff_hz: float = 0.4) -> np.ndarray:
    sig = _band_limited(rng, horizon + 1, 1.0 / params.dt, cutoff_hz, params.n_joints)
    scale = np.array([0.7, 0.7, 1.8])[: params.n_joints]
    center = np.asarray(params.init_angles[: params.n_joints]) + np.array([0.2, -0.2, 0.9])[: params.n_joints]
    return center + scale * np.tanh(0.7 * sig)


def trace_from_joints(env: ControlledEnv, joints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latent trace and fills obtained by sweeping the arm along given joints
    (kinematic playback: velocities by finite differences, fill integrated)."""
    p = env.params
    horizon = joints.shape[0] - 1
    latents = np.zeros((horizon + 1, p.latent_dim))
    fills = np.zeros(horizon + 1)
    fill = 0.0
    for t in range(horizon + 1):
        vel = (joints[t] - joints[t - 1]) / p.dt if t > 0 else np.zeros(p.n_joints)
        state = ArmState(joints[t], vel, fill)
        if t > 0:
            flow = env.flow_intensity(state)
            fill = min(1.0, fill + p.dt * p.fill_rate * flow)
            state.fill = fill
        latents[t] = env.task_latent(state)
        fills[t] = fill
    return latents, fills


def demo_sequence(
    env: ControlledEnv, rng: SeededRng, kind: str = "pour"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render one scripted clip from both the robot and human views.

    Returns (robot_view_frames, human_view_frames, fills), each with
    horizon + 1 frames.
    """
    p = env.params
    if kind == "pour":
        joints = script_pour_joints(rng.child("joints"), p.horizon, p)
    elif kind == "random":
        joints = script_random_joints(rng.child("joints"), p.horizon, p)
    else:
        raise ValueError(f"unknown clip kind '{kind}'")
    latents, fills = trace_from_joints(env, joints)
    robot = env.robot_view.render(latents, rng.child("robot-noise"))
    human = env.human_view.render(latents, rng.child("human-noise"))
    return robot, human, fills
