"""Command implementations behind the CLI: dataset generation, embedding
training, evaluation, policy learning, pose imitation, and embedding export.

Commands never mutate a dataset in place; every command writes into a fresh
output directory and stamps the config hash into each file it emits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envsim, evaluate, pilqr, pose, samplers
from .config import Config, config_hash
from .data import (
    EvalSidecar,
    MultiViewSequence,
    load_manifest,
    load_sidecar,
    load_split,
    manifest_records,
    write_dataset,
)
from .losses import (
    OrderHead,
    TripletMargin,
    lifted_structured_loss,
    new_order_head,
    npairs_loss,
    shuffle_learn_loss,
    triplet_loss,
)
from .net import (
    Mlp,
    backward,
    forward,
    load_checkpoint,
    new_embedding_net,
    new_optimizer,
    save_checkpoint,
    train_step,
)
from .numerics import SeededRng
from .reward import EmbeddingStateCost, RewardParams, embed_demonstration
from .samplers import gather_triplet_embeddings

LOSS_KINDS = ("mvtcn-triplet", "svtcn-triplet", "mvtcn-npairs", "mvtcn-lifted", "shuffle-learn")


class OutputDirError(ValueError):
    pass


def fresh_out_dir(path: str | Path) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        raise OutputDirError(f"output directory {out} exists and is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def _pouring_params(cfg: Config) -> envsim.PouringParams:
    views = int(cfg["dataset.views"])
    spacing = float(cfg["dataset.view_spacing_deg"])
    thetas = tuple(spacing * i for i in range(max(views, 2)))
    return envsim.PouringParams(
        duration_s=float(cfg["dataset.duration_s"]),
        frame_rate=float(cfg["dataset.frame_rate"]),
        n_views=views,
        obs_dim=int(cfg["dataset.obs_dim"]),
        nuisance_dim=int(cfg["dataset.nuisance_dim"]),
        nuisance_amplitude=float(cfg["dataset.nuisance_amplitude"]),
        nuisance_smooth_scale=float(cfg["dataset.nuisance_smooth_scale"]),
        nuisance_cutoff_hz=float(cfg["dataset.nuisance_cutoff_hz"]),
        boolean_latent_scale=float(cfg["dataset.boolean_latent_scale"]),
        view_noise=float(cfg["dataset.view_noise"]),
        texture_gain=float(cfg["dataset.texture_gain"]),
        texture_frequency=float(cfg["dataset.texture_frequency"]),
        view_thetas=thetas,
        renderer_seed=int(cfg["dataset.renderer_seed"]),
    )


def _pose_params(cfg: Config) -> envsim.PoseParams:
    return envsim.PoseParams(
        duration_s=float(cfg["pose_data.duration_s"]),
        frame_rate=float(cfg["pose_data.frame_rate"]),
        view_thetas=tuple(cfg["pose_data.view_thetas"]),
        human_obs_dim=int(cfg["pose_data.human_obs_dim"]),
        robot_obs_dim=int(cfg["pose_data.robot_obs_dim"]),
        view_noise=float(cfg["pose_data.view_noise"]),
        texture_gain=float(cfg["pose_data.texture_gain"]),
        texture_frequency=float(cfg["pose_data.texture_frequency"]),
        agent_gap=float(cfg["pose_data.agent_gap"]),
        renderer_seed=int(cfg["pose_data.renderer_seed"]),
    )


def _arm_params(cfg: Config) -> envsim.ArmParams:
    return envsim.ArmParams(
        dt=float(cfg["rl.dt"]),
        horizon=int(cfg["rl.horizon"]),
        process_noise=float(cfg["rl.process_noise"]),
        fill_rate=float(cfg["rl.fill_rate"]),
        distance_threshold=float(cfg["rl.distance_threshold"]),
        distance_width=float(cfg["rl.distance_width"]),
        tilt_width_deg=float(cfg["rl.tilt_width_deg"]),
        obs_dim=int(cfg["rl.arm_obs_dim"]),
        view_noise=float(cfg["rl.arm_view_noise"]),
        texture_gain=float(cfg["rl.arm_texture_gain"]),
        texture_frequency=float(cfg["rl.arm_texture_frequency"]),
        renderer_seed=int(cfg["rl.arm_renderer_seed"]),
    )


def cmd_generate_data(cfg: Config, out_dir: str | Path) -> Path:
    out = fresh_out_dir(out_dir)
    kind = cfg["dataset.kind"]
    seed = int(cfg["seed"])
    rng = SeededRng(seed).child("generate-data")
    chash = config_hash(cfg)

    if kind == "pouring":
        params = _pouring_params(cfg)
        renderers = envsim.pouring_renderers(params)
        entries = []
        counts = {
            "train": int(cfg["dataset.train_sequences"]),
            "val": int(cfg["dataset.val_sequences"]),
            "test": int(cfg["dataset.test_sequences"]),
        }
        index = 0
        for split, count in counts.items():
            for _ in range(count):
                seq_id = f"pour-{index:04d}"
                seq, sidecar = envsim.generate_pouring_sequence(
                    rng.child(seq_id), seq_id, params, renderers
                )
                entries.append((seq, sidecar, split))
                index += 1
        extra = {"config_hash": chash, "pouring": {"view_thetas": list(params.view_thetas)}}
        return write_dataset(out, "pouring", params.frame_rate, entries, extra)

    if kind == "pose":
        params = _pose_params(cfg)
        human_renderers = envsim.pose_renderers(params, "human")
        robot_renderers = envsim.pose_renderers(params, "robot")
        entries = []
        blocks = (
            ("train", "human", int(cfg["pose_data.tc_human_sequences"])),
            ("train", "robot", int(cfg["pose_data.tc_robot_sequences"])),
            ("human-labeled", "human", int(cfg["pose_data.human_label_sequences"])),
            ("test", "human", int(cfg["pose_data.test_sequences"])),
        )
        index = 0
        for split, agent, count in blocks:
            renderers = human_renderers if agent == "human" else robot_renderers
            for _ in range(count):
                seq_id = f"pose-{agent}-{index:04d}"
                seq, sidecar = envsim.generate_pose_sequence(
                    rng.child(seq_id), seq_id, agent, params, renderers
                )
                entries.append((seq, sidecar, split))
                index += 1
        extra = {"config_hash": chash, "pose": {"view_thetas": list(params.view_thetas), "agent_gap": params.agent_gap}}
        return write_dataset(out, "pose", params.frame_rate, entries, extra)

    if kind == "arm-clips":
        params = _arm_params(cfg)
        env = envsim.ControlledEnv(params)
        n_clips = int(cfg["rl.tc_train_clips"])
        pour_every = max(1, int(round(1.0 / max(float(cfg["rl.tc_pour_fraction"]), 1e-9))))
        entries = []
        for i in range(n_clips):
            kind_i = "pour" if i % pour_every == 0 else "random"
            seq_id = f"clip-{i:04d}"
            robot, human, fills = envsim.demo_sequence(env, rng.child(seq_id), kind_i)
            seq = MultiViewSequence(seq_id, np.stack([robot, human]), 1.0 / params.dt)
            sidecar = EvalSidecar(seq_id, latent_trace=fills[:, None])
            entries.append((seq, sidecar, "train"))
        for j in range(3):
            seq_id = f"demo-{j:03d}"
            robot, human, fills = envsim.demo_sequence(env, rng.child(seq_id), "pour")
            seq = MultiViewSequence(seq_id, np.stack([robot, human]), 1.0 / params.dt)
            sidecar = EvalSidecar(seq_id, latent_trace=fills[:, None])
            entries.append((seq, sidecar, "demo"))
        extra = {"config_hash": chash, "arm": {"horizon": params.horizon}}
        return write_dataset(out, "arm-clips", 1.0 / params.dt, entries, extra)

    raise ValueError(f"unknown dataset kind '{kind}'")


# ---------------------------------------------------------------------------
# embedding training
# ---------------------------------------------------------------------------

def _pad_to(obs: np.ndarray, width: int) -> np.ndarray:
    if obs.shape[-1] == width:
        return obs
    if obs.shape[-1] > width:
        raise ValueError(f"observation dim {obs.shape[-1]} exceeds net input width {width}")
    pad = [(0, 0)] * (obs.ndim - 1) + [(0, width - obs.shape[-1])]
    return np.pad(obs, pad)


class EmbeddingTrainer:
    """Batch assembly + gradient step for one loss kind over a sequence pool."""

    def __init__(self, cfg: Config, train_seqs, val_seqs, seed: int):
        self.cfg = cfg
        self.loss_kind = cfg["train.loss"]
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown train.loss '{self.loss_kind}' (choose from {LOSS_KINDS})")
        if not train_seqs:
            raise ValueError("empty training split")
        self.train_seqs = train_seqs
        self.val_seqs = val_seqs
        self.input_dim = max(s.obs_dim for s in [*train_seqs, *val_seqs])
        self.seed = seed
        root = SeededRng(seed)
        self.net = new_embedding_net(
            root.child("net-init"),
            self.input_dim,
            tuple(cfg["net.hidden"]),
            int(cfg["net.embed_dim"]),
            bool(cfg["net.normalize"]),
        )
        self.optimizer = new_optimizer(self.net, float(cfg["train.learning_rate"]))
        self.head: OrderHead | None = None
        self.head_optimizer = None
        if self.loss_kind == "shuffle-learn":
            self.head = new_order_head(
                root.child("head-init"), int(cfg["net.embed_dim"]), int(cfg["train.order_head_hidden"])
            )
            self.head_optimizer = new_optimizer(self.head.mlp, float(cfg["train.learning_rate"]))
        self.margin = TripletMargin(float(cfg["train.triplet_margin"]))
        self.step_rng = root.child("train-batches")
        self.total_steps = max(int(cfg["train.steps"]), 1)
        self.lr_schedule = str(cfg["train.lr_schedule"])
        # per-dimension standardization fitted on the training split; folded
        # into the first layer at checkpoint time so saved nets take raw input
        frames = np.concatenate([_pad_to(s.frames.reshape(-1, s.obs_dim), self.input_dim) for s in train_seqs])
        self.obs_mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        self.obs_std = np.where(std > 1e-9, std, 1.0)

    def standardize(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.obs_mean) / self.obs_std

    def folded_net(self) -> Mlp:
        """A copy of the net with the input standardizer absorbed into the
        first layer, so it consumes raw observations."""
        weights = [w.copy() for w in self.net.weights]
        biases = [b.copy() for b in self.net.biases]
        weights[0] = weights[0] / self.obs_std[:, None]
        biases[0] = biases[0] - (self.obs_mean / self.obs_std) @ self.net.weights[0]
        return Mlp(weights, biases, self.net.normalize)

    def set_step(self, step: int) -> None:
        """Cosine learning-rate decay to 5% of the base rate."""
        if self.lr_schedule != "cosine":
            return
        base = float(self.cfg["train.learning_rate"])
        frac = min(step / self.total_steps, 1.0)
        lr = base * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))
        self.optimizer.learning_rate = lr
        if self.head_optimizer is not None:
            self.head_optimizer.learning_rate = lr

    def _pick_seq(self, pool, rng: SeededRng):
        return pool[int(rng.integers(0, len(pool)))]

    def _stack_obs(self, rows: list[np.ndarray]) -> np.ndarray:
        return self.standardize(_pad_to(np.asarray(rows), self.input_dim))

    def batch_loss(self, pool, rng: SeededRng, apply_update: bool) -> float:
        """One batch of the configured loss; optionally takes the gradient step."""
        cfg = self.cfg
        batch_size = int(cfg["train.batch_size"])
        kind = self.loss_kind

        if kind in ("mvtcn-triplet", "svtcn-triplet"):
            triplets, lookup = [], {}
            for _ in range(batch_size):
                seq = self._pick_seq(pool, rng)
                lookup[seq.sequence_id] = seq
                if kind == "mvtcn-triplet":
                    triplets.append(
                        samplers.sample_multiview_triplet(
                            seq,
                            rng,
                            negative_margin_s=float(cfg["train.mv_negative_margin_s"]),
                            negative_from_anchor_view=bool(cfg["train.negative_from_anchor_view"]),
                        )
                    )
                else:
                    triplets.append(
                        samplers.sample_singleview_triplet(
                            seq,
                            rng,
                            positive_range_s=float(cfg["train.positive_range_s"]),
                            negative_multiplier=float(cfg["train.negative_multiplier"]),
                        )
                    )
            rows = []
            for t in triplets:
                seq = lookup[t.sequence_id]
                rows.extend(
                    [
                        seq.frames[t.anchor.view, t.anchor.frame],
                        seq.frames[t.positive.view, t.positive.frame],
                        seq.frames[t.negative.view, t.negative.frame],
                    ]
                )
            obs = self._stack_obs(rows)
            emb, cache = forward(self.net, obs, want_cache=True)
            loss, (ga, gp, gn) = triplet_loss(emb[0::3], emb[1::3], emb[2::3], self.margin)
            upstream = np.zeros_like(emb)
            upstream[0::3], upstream[1::3], upstream[2::3] = ga, gp, gn
            if apply_update:
                grads, _ = backward(self.net, cache, upstream)
                train_step(self.net, self.optimizer, grads)
            return loss

        if kind in ("mvtcn-npairs", "mvtcn-lifted"):
            seq = self._pick_seq(pool, rng)
            b = min(batch_size, seq.n_frames)
            pairs = samplers.sample_npairs_batch(seq, rng, b)
            rows = []
            for anchor, positive in pairs:
                rows.append(seq.frames[anchor.view, anchor.frame])
                rows.append(seq.frames[positive.view, positive.frame])
            obs = self._stack_obs(rows)
            emb, cache = forward(self.net, obs, want_cache=True)
            if kind == "mvtcn-npairs":
                loss, (ga, gp) = npairs_loss(emb[0::2], emb[1::2])
            else:
                loss, (ga, gp) = lifted_structured_loss(
                    emb[0::2], emb[1::2], margin=float(cfg["train.lifted_margin"])
                )
            upstream = np.zeros_like(emb)
            upstream[0::2], upstream[1::2] = ga, gp
            if apply_update:
                grads, _ = backward(self.net, cache, upstream)
                train_step(self.net, self.optimizer, grads)
            return loss

        # shuffle-learn
        tuples, labels, rows = [], [], []
        for _ in range(batch_size):
            seq = self._pick_seq(pool, rng)
            tup = samplers.sample_shuffle_learn_tuple(
                seq,
                rng,
                tmax=int(cfg["train.order_tmax"]),
                tmin=int(cfg["train.order_tmin"]),
                negative_ratio=float(cfg["train.order_negative_ratio"]),
            )
            tuples.append(tup)
            labels.append(tup.label)
            for frame in tup.frames:
                rows.append(seq.frames[tup.view, frame])
        obs = self._stack_obs(rows)
        emb, cache = forward(self.net, obs, want_cache=True)
        loss, head_grads, (g1, g2, g3) = shuffle_learn_loss(
            self.head, emb[0::3], emb[1::3], emb[2::3], np.array(labels, dtype=np.float64)
        )
        upstream = np.zeros_like(emb)
        upstream[0::3], upstream[1::3], upstream[2::3] = g1, g2, g3
        if apply_update:
            grads, _ = backward(self.net, cache, upstream)
            train_step(self.net, self.optimizer, grads)
            train_step(self.head.mlp, self.head_optimizer, head_grads)
        return loss

    def val_loss(self) -> float:
        """Average loss on fixed validation batches (same batches every call,
        so checkpoint scores are comparable)."""
        pool = self.val_seqs if self.val_seqs else self.train_seqs
        rng = SeededRng(self.seed).child("val-loss")
        n_batches = int(self.cfg["train.val_batches"])
        return float(np.mean([self.batch_loss(pool, rng, apply_update=False) for _ in range(n_batches)]))


def cmd_train_embedding(cfg: Config, dataset_dir: str | Path, out_dir: str | Path) -> dict:
    out = fresh_out_dir(out_dir)
    chash = config_hash(cfg)
    seed = int(cfg["seed"])
    train_seqs = load_split(dataset_dir, "train")
    val_seqs = load_split(dataset_dir, "val")
    trainer = EmbeddingTrainer(cfg, train_seqs, val_seqs, seed)

    steps = int(cfg["train.steps"])
    every = int(cfg["train.checkpoint_every"])
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir()
    curve_rows = []
    checkpoints = []

    def save_at(step: int, train_loss: float) -> None:
        val = trainer.val_loss()
        path = ckpt_dir / f"ckpt-{step:06d}.npz"
        save_checkpoint(
            path,
            trainer.folded_net(),
            None,
            meta={
                "config_hash": chash,
                "step": step,
                "val_loss": val,
                "loss_kind": trainer.loss_kind,
                "input_dim": trainer.input_dim,
            },
        )
        curve_rows.append([step, train_loss, val, chash])
        checkpoints.append({"step": step, "path": str(path), "val_loss": val})

    if steps == 0:
        save_at(0, float("nan"))
    running = []
    for step in range(1, steps + 1):
        trainer.set_step(step)
        loss = trainer.batch_loss(train_seqs, trainer.step_rng, apply_update=True)
        running.append(loss)
        if step % every == 0 or step == steps:
            save_at(step, float(np.mean(running[-every:])))

    write_csv(out / "loss_curve.csv", ["step", "train_loss", "val_loss", "config_hash"], curve_rows)
    write_json(out / "training.json", {"config_hash": chash, "checkpoints": checkpoints, "loss": trainer.loss_kind})
    return {"out": out, "checkpoints": checkpoints, "trainer": trainer}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _embed_view(net: Mlp, seq: MultiViewSequence, view: int) -> np.ndarray:
    return forward(net, _pad_to(seq.view(view), net.input_dim))


def _labeled_frames(net: Mlp, root, seqs, views, attr_names) -> tuple[np.ndarray, dict, list]:
    """Embeddings plus per-frame labels for the listed views of each sequence."""
    embeddings = []
    labels = {name: [] for name in attr_names}
    ids = []
    for seq in seqs:
        sidecar = load_sidecar(root, seq.sequence_id)
        for view in views:
            embeddings.append(_embed_view(net, seq, view))
            for name in attr_names:
                labels[name].append(np.asarray(sidecar.attributes[name]))
            ids.extend((seq.sequence_id, view, i) for i in range(seq.n_frames))
    return (
        np.concatenate(embeddings, axis=0),
        {k: np.concatenate(v) for k, v in labels.items()},
        ids,
    )


def evaluate_alignment(
    net: Mlp, dataset_dir, seqs, query_view: int, target_view: int | None = None
) -> tuple[list[list], float]:
    """Alignment error over all ordered pairs of the given sequences.

    Query frames come from ``query_view``, target frames from ``target_view``
    (another camera by default), so the metric demands viewpoint invariance
    like the two-operator recordings it stands in for.
    """
    if target_view is None:
        target_view = (query_view + 1) % seqs[0].n_views
    emb_q, emb_t, keyframes = {}, {}, {}
    for seq in seqs:
        emb_q[seq.sequence_id] = _embed_view(net, seq, query_view)
        emb_t[seq.sequence_id] = _embed_view(net, seq, target_view)
        keyframes[seq.sequence_id] = evaluate.KeyframeAlignment.from_array(
            load_sidecar(dataset_dir, seq.sequence_id).keyframes
        )
    rows = []
    errors = []
    for a in seqs:
        for b in seqs:
            if a.sequence_id == b.sequence_id:
                continue
            err = evaluate.alignment_error_from_embeddings(
                emb_q[a.sequence_id], emb_t[b.sequence_id],
                keyframes[a.sequence_id], keyframes[b.sequence_id],
            )
            rows.append([a.sequence_id, b.sequence_id, err])
            errors.append(err)
    return rows, float(np.mean(errors))


def cmd_evaluate(cfg: Config, dataset_dir: str | Path, checkpoint: str | Path, out_dir: str | Path) -> dict:
    out = fresh_out_dir(out_dir)
    chash = config_hash(cfg)
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} does not exist")
    net, _, meta = load_checkpoint(checkpoint)
    view = int(cfg["eval.view"])

    query_seqs = load_split(dataset_dir, cfg["eval.query_split"])
    ref_seqs = load_split(dataset_dir, cfg["eval.reference_split"])

    pair_rows, alignment_mean = evaluate_alignment(net, dataset_dir, query_seqs, view)
    other_views = [v for v in range(query_seqs[0].n_views) if v != view] or [view]
    write_csv(
        out / "alignment_pairs.csv",
        ["video_1", "video_2", "alignment_error", "config_hash"],
        [[*r, chash] for r in pair_rows],
    )

    attr_names = list(envsim.ATTRIBUTE_NAMES)
    ref_emb, ref_labels, _ = _labeled_frames(net, dataset_dir, ref_seqs, other_views, attr_names)
    qry_emb, qry_labels, _ = _labeled_frames(net, dataset_dir, query_seqs, [view], attr_names)
    report = evaluate.classification_error_knn(ref_emb, ref_labels, qry_emb, qry_labels)
    write_csv(
        out / "attribute_errors.csv",
        ["attribute", "class_balanced_error", "config_hash"],
        [[name, report.per_attribute[name], chash] for name in attr_names]
        + [["aggregate", report.aggregate, chash]],
    )

    metrics = {
        "config_hash": chash,
        "checkpoint": str(checkpoint),
        "checkpoint_meta": meta,
        "alignment_error_mean": alignment_mean,
        "classification": {
            "per_attribute": report.per_attribute,
            "aggregate": report.aggregate,
            "excluded_classes": [[a, str(c)] for a, c in report.excluded],
        },
    }
    write_json(out / "metrics.json", metrics)
    return {"out": out, "metrics": metrics}


def val_classification_error(cfg: Config, dataset_dir, net: Mlp) -> float:
    """Class-balanced error on the labeled validation split: queries from the
    evaluation view, references from the other views (used by checkpoint
    selection)."""
    view = int(cfg["eval.view"])
    val_seqs = load_split(dataset_dir, "val")
    attr_names = list(envsim.ATTRIBUTE_NAMES)
    other_views = [v for v in range(val_seqs[0].n_views) if v != view] or [view]
    ref_emb, ref_labels, _ = _labeled_frames(net, dataset_dir, val_seqs, other_views, attr_names)
    qry_emb, qry_labels, _ = _labeled_frames(net, dataset_dir, val_seqs, [view], attr_names)
    report = evaluate.classification_error_knn(ref_emb, ref_labels, qry_emb, qry_labels)
    return report.aggregate


# ---------------------------------------------------------------------------
# policy learning on the pouring-surrogate arm
# ---------------------------------------------------------------------------

def _policy_to_file(path: Path, policy: pilqr.TVLGPolicy, meta: dict) -> None:
    header = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, K=policy.K, k=policy.k, sigma=policy.sigma, header=header)


def load_policy(path: str | Path) -> tuple[pilqr.TVLGPolicy, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["header"]).decode("utf-8"))
        return pilqr.TVLGPolicy(data["K"], data["k"], data["sigma"]), meta


def cmd_train_policy(
    cfg: Config,
    dataset_dir: str | Path,
    checkpoint: str | Path,
    demo_id: str,
    out_dir: str | Path,
) -> dict:
    out = fresh_out_dir(out_dir)
    chash = config_hash(cfg)
    seed = int(cfg["seed"])
    root = SeededRng(seed).child("train-policy")

    net, _, _ = load_checkpoint(checkpoint)
    if bool(cfg["rl.random_reward_control"]):
        # control run: same architecture, fresh untrained weights
        net = new_embedding_net(
            root.child("random-control"),
            net.input_dim,
            tuple(w.shape[1] for w in net.weights[:-1]),
            net.output_dim,
            net.normalize,
        )

    params = _arm_params(cfg)
    env = envsim.ControlledEnv(params)
    horizon = params.horizon

    manifest = load_manifest(dataset_dir)
    rec = next((r for r in manifest_records(manifest) if r.sequence_id == demo_id), None)
    if rec is None:
        raise ValueError(f"demo sequence '{demo_id}' not found in dataset")
    demo_seq = [s for s in load_split(dataset_dir, rec.split) if s.sequence_id == demo_id][0]
    demo_frames = demo_seq.view(1)[:horizon]  # human-view frames
    demo = embed_demonstration(net, _pad_to(demo_frames, net.input_dim))

    d = net.output_dim
    n_prop = 2 * params.n_joints
    embed_slice = slice(n_prop, n_prop + d)
    reward_params = RewardParams(
        alpha=float(cfg["rl.reward_alpha"]),
        beta=float(cfg["rl.reward_beta"]),
        gamma=float(cfg["rl.reward_gamma"]),
    )
    cost = EmbeddingStateCost(demo, embed_slice, reward_params, float(cfg["rl.action_penalty"]))

    def state_fn(proprio, obs):
        return np.concatenate([proprio, forward(net, _pad_to(obs, net.input_dim))])

    def rollout_fn(policy, rng):
        return envsim.rollout(env, policy, rng, state_fn)

    policy = pilqr.init_policy(
        horizon,
        n_prop + d,
        params.n_joints,
        base_variance=float(cfg["rl.base_exploration_variance"]),
        emphasized_joint=params.wrist_joint,
        emphasis=float(cfg["rl.wrist_exploration_factor"]),
    )
    pconf = pilqr.PilqrConfig(
        n_rollouts=int(cfg["rl.rollouts"]),
        kl_epsilon=float(cfg["rl.kl_epsilon"]),
        ess_fraction=float(cfg["rl.ess_fraction"]),
        ridge=float(cfg["rl.dynamics_ridge"]),
        dynamics_time_window=int(cfg["rl.dynamics_time_window"]),
    )
    iterations = int(cfg["rl.iterations"])
    policy, history = pilqr.run_pilqr(
        rollout_fn,
        policy,
        cost.cost,
        pconf,
        root.child("pilqr"),
        iterations,
        success_fn=lambda tr: float(tr.fills[-1]),
    )

    rows = [
        [
            h["iteration"],
            h["mean_cost"],
            h["min_cost"],
            h["kl"],
            h["epsilon"],
            int(h["epsilon_halved"]),
            h["residual_rms"],
            h["success_mean"],
            h["success_std"],
            chash,
        ]
        for h in history
    ]
    write_csv(
        out / "learning_curve.csv",
        [
            "iteration",
            "mean_cost",
            "min_cost",
            "kl",
            "epsilon",
            "epsilon_halved",
            "residual_rms",
            "success_mean",
            "success_std",
            "config_hash",
        ],
        rows,
    )
    _policy_to_file(out / "policy.npz", policy, {"config_hash": chash, "demo_id": demo_id})
    return {"out": out, "history": history, "policy": policy}


# ---------------------------------------------------------------------------
# pose imitation
# ---------------------------------------------------------------------------

def _pose_frame_sets(cfg: Config, dataset_dir, net_width: int):
    """Assemble (self, human-labeled, test) frame/joint arrays from a pose
    dataset. Joint targets are read per sequence from its sidecar."""
    root = Path(dataset_dir)

    def collect(split: str, agent: str | None):
        obs_rows, joint_rows = [], []
        for seq in load_split(root, split, agent=agent):
            sidecar = load_sidecar(root, seq.sequence_id)
            for view in range(seq.n_views):
                obs_rows.append(_pad_to(seq.view(view), net_width))
                joint_rows.append(sidecar.joints)
        if not obs_rows:
            return np.zeros((0, net_width)), np.zeros((0, pose.N_JOINTS))
        return np.concatenate(obs_rows), np.concatenate(joint_rows)

    return collect("train", "robot"), collect("human-labeled", "human"), collect("test", "human")


def cmd_imitate_pose(cfg: Config, dataset_dir: str | Path, checkpoint: str | Path | None, out_dir: str | Path) -> dict:
    out = fresh_out_dir(out_dir)
    chash = config_hash(cfg)
    seed = int(cfg["seed"])
    combos = [str(c) for c in cfg["pose.combinations"]]
    n_seeds = int(cfg["pose.seeds"])

    tc_net = None
    if any("tc" in c.split("+") for c in combos):
        if checkpoint is None:
            raise ValueError("pose combinations include 'tc' but no embedding checkpoint was given")
        tc_net, _, _ = load_checkpoint(checkpoint)
    hidden = tuple(cfg["net.hidden"])
    embed_dim = int(cfg["net.embed_dim"])
    normalize = bool(cfg["net.normalize"])
    net_width = tc_net.input_dim if tc_net is not None else max(
        int(cfg["pose_data.human_obs_dim"]), int(cfg["pose_data.robot_obs_dim"])
    )

    (self_obs, self_joints), (hum_obs, hum_joints), (test_obs, test_joints) = _pose_frame_sets(
        cfg, dataset_dir, net_width
    )
    label_rng = SeededRng(seed).child("human-label-noise")
    human_labels = (
        pose.make_noisy_human_labels(hum_obs, hum_joints, float(cfg["pose.human_label_noise"]), label_rng)
        if hum_obs.shape[0]
        else None
    )

    eval_theta = cfg["pose.eval_theta"]
    if eval_theta is not None:
        test_obs, test_joints = _rerender_pose_test(cfg, dataset_dir, float(eval_theta), net_width)

    result_rows, per_joint_rows = [], []
    summary = {}
    for combo in combos:
        flags = combo.split("+")
        sup = pose.SupervisionConfig(
            tc="tc" in flags, self_signal="self" in flags, human="human" in flags
        )
        errors = []
        for s in range(n_seeds):
            run_rng = SeededRng(seed).child(f"pose-{combo}-{s}")
            if sup.tc:
                net = Mlp([w.copy() for w in tc_net.weights], [b.copy() for b in tc_net.biases], tc_net.normalize)
            else:
                net = new_embedding_net(run_rng.child("net-init"), net_width, hidden, embed_dim, normalize)
            decoder = pose.new_joints_decoder(run_rng.child("decoder-init"), embed_dim)
            pose.train_decoder(
                net,
                decoder,
                sup,
                (self_obs, self_joints),
                human_labels,
                run_rng.child("train"),
                steps=int(cfg["pose.decoder_steps"]),
                batch_size=int(cfg["pose.batch_size"]),
                learning_rate=float(cfg["pose.learning_rate"]),
                fine_tune_embedding=bool(cfg["pose.fine_tune_embedding"]),
            )
            preds = pose.imitate(net, decoder, test_obs)
            report = pose.joint_error(preds, test_joints)
            errors.append(report.aggregate)
            result_rows.append([combo, s, report.aggregate, report.aggregate_excluding, chash])
            per_joint_rows.append([combo, s, *report.per_joint.tolist(), chash])
        summary[combo] = {"mean": float(np.mean(errors)), "std": float(np.std(errors)), "errors": errors}

    # random-valid-joints baseline under the same evaluation
    rand_errors = []
    for s in range(n_seeds):
        rng = SeededRng(seed).child(f"pose-random-{s}")
        lo, hi = pose.POSE_JOINT_RANGES[:, 0], pose.POSE_JOINT_RANGES[:, 1]
        preds = lo + (hi - lo) * rng.uniform(size=test_joints.shape)
        report = pose.joint_error(preds, test_joints)
        rand_errors.append(report.aggregate)
        result_rows.append(["random", s, report.aggregate, report.aggregate_excluding, chash])
    summary["random"] = {
        "mean": float(np.mean(rand_errors)),
        "std": float(np.std(rand_errors)),
        "errors": rand_errors,
    }

    write_csv(
        out / "supervision_results.csv",
        ["supervision", "seed", "joint_error_pct", "joint_error_excl_pct", "config_hash"],
        result_rows,
    )
    write_csv(
        out / "per_joint_errors.csv",
        ["supervision", "seed", *[f"joint_{j}" for j in range(pose.N_JOINTS)], "config_hash"],
        per_joint_rows,
    )
    write_json(out / "summary.json", {"config_hash": chash, "summary": summary})
    return {"out": out, "summary": summary}


def _rerender_pose_test(cfg: Config, dataset_dir, theta: float, net_width: int):
    """Render the test joints through an interpolated (held-out) view."""
    params = _pose_params(cfg)
    renderer = envsim.pose_renderers(params, "human", thetas=(theta,))[0]
    obs_rows, joint_rows = [], []
    rng = SeededRng(int(cfg["seed"])).child(f"heldout-view-{theta}")
    for seq in load_split(dataset_dir, "test", agent="human"):
        sidecar = load_sidecar(dataset_dir, seq.sequence_id)
        obs = renderer.render(sidecar.joints, rng.child(seq.sequence_id))
        obs_rows.append(_pad_to(obs, net_width))
        joint_rows.append(sidecar.joints)
    return np.concatenate(obs_rows), np.concatenate(joint_rows)


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------

def cmd_export_embeddings(
    cfg: Config, dataset_dir: str | Path, checkpoint: str | Path, split: str, out_dir: str | Path
) -> dict:
    out = fresh_out_dir(out_dir)
    chash = config_hash(cfg)
    net, _, _ = load_checkpoint(checkpoint)
    rows = []
    for seq in load_split(dataset_dir, split):
        for view in range(seq.n_views):
            emb = _embed_view(net, seq, view)
            for frame in range(seq.n_frames):
                rows.append([seq.sequence_id, view, frame, *emb[frame].tolist(), chash])
    header = ["sequence_id", "view", "frame", *[f"e{i}" for i in range(net.output_dim)], "config_hash"]
    path = out / f"embeddings_{split}.csv"
    write_csv(path, header, rows)
    return {"out": out, "path": path, "rows": len(rows)}
