"""Episodic sampling, meta-training and evaluation.

Training samples N-way K-shot tasks from the training-aspect split,
computes the cross-entropy of the query predictions and takes one
optimizer step per episode.  Evaluation reports mean accuracy with a 95%
confidence half-width (1.96 * sigma / sqrt(episodes)) plus a confusion
matrix, over independently sampled test episodes.

All randomness flows from per-epoch derived seeds, so a resumed run
continues exactly where a straight-through run would be.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .exceptions import SamplingError, TrainingDivergedError
from .model import FewShotNetwork, ModelConfig
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import make_optimizer
from .rdm_io import RdmDataset

logger = logging.getLogger(__name__)

# seed-derivation subkeys, fixed for reproducibility across versions
_KEY_VAL_SPLIT, _KEY_TRAIN, _KEY_VAL, _KEY_EVAL = 11, 13, 17, 19


@dataclass(frozen=True)
class SplitSpec:
    """Which aspects (and optional scenario filters) form train and test."""

    train_aspects: tuple = (0.0,)
    test_aspects: tuple = (90.0,)
    subjects: tuple | None = None
    distances: tuple | None = None

    def __post_init__(self):
        if set(self.train_aspects) & set(self.test_aspects):
            raise SamplingError("train and test aspect sets must be disjoint")

    def train_view(self, data: RdmDataset) -> RdmDataset:
        return data.filter(aspects=self.train_aspects, subjects=self.subjects,
                           distances=self.distances)

    def test_view(self, data: RdmDataset) -> RdmDataset:
        return data.filter(aspects=self.test_aspects, subjects=self.subjects,
                           distances=self.distances)


@dataclass
class EpisodeTask:
    """One N-way K-shot task with already-assembled network inputs."""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    n_way: int
    k_shot: int
    t_query: int
    class_ids: np.ndarray  # episode label -> dataset class index


def _query_quota(n_way: int, t_query: int) -> list:
    base = t_query // n_way
    quotas = [base + (1 if i < t_query % n_way else 0) for i in range(n_way)]
    return quotas


def sample_episode_positions(data: RdmDataset, n_way: int, k_shot: int,
                             t_query: int, rng: np.random.Generator) -> tuple:
    """Sample one episode as dataset positions (no image assembly).

    Returns (support_pos, support_y, query_pos, query_y, class_ids); support
    and query positions are disjoint and labels are remapped to 0..n_way-1
    in sampled-class order.  Raises SamplingError naming the deficient class
    when the split cannot honor the protocol.
    """
    by_class = data.indices_by_class()
    if len(by_class) < n_way:
        raise SamplingError(
            f"split has {len(by_class)} classes, need {n_way} for {n_way}-way episodes")
    need = k_shot + math.ceil(t_query / n_way)
    for c, idx in sorted(by_class.items()):
        if idx.size < need:
            raise SamplingError(
                f"class {data.class_names[c]!r} has {idx.size} samples in this split, "
                f"needs >= {need} for {n_way}-way {k_shot}-shot t={t_query}")
    chosen = rng.choice(sorted(by_class), size=n_way, replace=False)
    quotas = _query_quota(n_way, t_query)
    sup_pos, sup_y, qry_pos, qry_y = [], [], [], []
    for label, (c, quota) in enumerate(zip(chosen, quotas)):
        perm = rng.permutation(by_class[int(c)])
        sup_pos.extend(perm[:k_shot])
        sup_y.extend([label] * k_shot)
        qry_pos.extend(perm[k_shot:k_shot + quota])
        qry_y.extend([label] * quota)
    order = rng.permutation(len(qry_pos))
    return (np.asarray(sup_pos), np.asarray(sup_y, dtype=np.int64),
            np.asarray(qry_pos)[order], np.asarray(qry_y, dtype=np.int64)[order],
            np.asarray([int(c) for c in chosen]))


def sample_episode(data: RdmDataset, n_way: int, k_shot: int, t_query: int,
                   rng: np.random.Generator, channels: int = 3) -> EpisodeTask:
    """Sample an episode and assemble its channels-last image stacks."""
    sup_pos, sup_y, qry_pos, qry_y, class_ids = sample_episode_positions(
        data, n_way, k_shot, t_query, rng)
    return EpisodeTask(
        support_x=data.stack_images(sup_pos, channels), support_y=sup_y,
        query_x=data.stack_images(qry_pos, channels), query_y=qry_y,
        n_way=n_way, k_shot=k_shot, t_query=t_query, class_ids=class_ids)


@dataclass
class RunMetrics:
    """Accuracy summary over a batch of episodes (accuracies in percent)."""

    per_episode_acc: np.ndarray
    mean_acc: float
    ci95: float
    confusion: np.ndarray
    loss_curve: list | None = None

    @classmethod
    def from_episodes(cls, accuracies, confusion, loss_curve=None) -> "RunMetrics":
        acc = np.asarray(accuracies, dtype=np.float64)
        mean = float(acc.mean()) if acc.size else 0.0
        if acc.size > 1:
            ci = 1.96 * float(acc.std(ddof=1)) / math.sqrt(acc.size)
        else:
            ci = 0.0
        return cls(per_episode_acc=acc, mean_acc=mean, ci95=ci,
                   confusion=np.asarray(confusion, dtype=np.int64),
                   loss_curve=loss_curve)

    def to_dict(self) -> dict:
        out = {"mean_acc": self.mean_acc, "ci95": self.ci95,
               "episodes": int(self.per_episode_acc.size),
               "per_episode_acc": [float(a) for a in self.per_episode_acc],
               "confusion": self.confusion.tolist()}
        if self.loss_curve is not None:
            out["loss_curve"] = [float(x) for x in self.loss_curve]
        return out


def protocol_name(n_way: int, k_shot: int) -> str:
    return f"{n_way}way-{k_shot}shot"


def embed_split(network: FewShotNetwork, data: RdmDataset, channels: int = 3,
                se_override: np.ndarray | None = None) -> np.ndarray:
    """Eval-mode descriptors for every map in a split, in dataset order.

    Embeddings in eval mode are per-image, so caching them across the
    episodes of an evaluation changes nothing but the runtime.
    """
    images = data.stack_images(np.arange(len(data)), channels)
    return network.embed_eval_descriptors(images, se_override=se_override)


def evaluate(network: FewShotNetwork, data: RdmDataset, protocols,
             episodes: int = 600, seed: int = 0, channels: int = 3,
             se_override: np.ndarray | None = None) -> dict:
    """Run each protocol over freshly sampled episodes of the given split.

    ``protocols`` is an iterable of (n_way, k_shot, t_query) triples.
    Returns {protocol name: RunMetrics}.  The split is embedded once and
    episodes index into the cached descriptors.
    """
    desc = embed_split(network, data, channels, se_override)
    results = {}
    for pi, (n_way, k_shot, t_query) in enumerate(protocols):
        rng = np.random.default_rng(np.random.SeedSequence((seed, _KEY_EVAL, pi)))
        accs = []
        confusion = np.zeros((n_way, n_way), dtype=np.int64)
        for _ in range(episodes):
            sup_pos, sup_y, qry_pos, qry_y, _ = sample_episode_positions(
                data, n_way, k_shot, t_query, rng)
            pred, _ = network.predict_from_descriptors(desc[sup_pos], sup_y,
                                                       desc[qry_pos], n_way)
            accs.append(100.0 * float(np.mean(pred == qry_y)))
            np.add.at(confusion, (qry_y, pred), 1)
        results[protocol_name(n_way, k_shot)] = RunMetrics.from_episodes(accs, confusion)
    return results


def scenario_sweep(network: FewShotNetwork, data: RdmDataset, by: str,
                   protocol=(3, 10, 15), episodes: int = 300, seed: int = 0,
                   channels: int = 3) -> list:
    """Evaluate per metadata value (``by`` is 'distance' or 'subject').

    Returns [{"by": ..., "value": ..., "metrics": RunMetrics}] sorted by
    value; values whose filter selects nothing are skipped with a warning.
    """
    if by == "distance":
        values = sorted(set(float(v) for v in np.unique(data.distance)))
        views = [(v, data.filter(distances=[v])) for v in values]
    elif by == "subject":
        values = sorted(set(int(v) for v in np.unique(data.subject)))
        views = [(v, data.filter(subjects=[v])) for v in values]
    else:
        raise ValueError(f"sweep field must be 'distance' or 'subject', got {by!r}")
    rows = []
    for vi, (value, view) in enumerate(views):
        if len(view) == 0:
            logger.warning("scenario sweep: no samples for %s=%s, skipping", by, value)
            continue
        metrics = evaluate(network, view, [protocol], episodes=episodes,
                           seed=seed + vi, channels=channels)
        rows.append({"by": by, "value": value,
                     "metrics": metrics[protocol_name(protocol[0], protocol[1])]})
    return rows


def split_train_val(data: RdmDataset, fraction: float, seed: int):
    """Stratified per-class holdout of the training split for checkpoint
    selection; returns (train_view, val_view)."""
    if fraction <= 0.0:
        return data, None
    rng = np.random.default_rng(np.random.SeedSequence((seed, _KEY_VAL_SPLIT)))
    val_mask = np.zeros(len(data), dtype=bool)
    for _, idx in sorted(data.indices_by_class().items()):
        perm = rng.permutation(idx)
        n_val = max(1, int(round(fraction * idx.size)))
        val_mask[perm[:n_val]] = True
    return data.subset(~val_mask), data.subset(val_mask)


@dataclass
class TrainConfig:
    """Episodic training protocol and optimization knobs."""

    n_way: int = 9
    k_shot: int = 5
    t_query: int = 15
    epochs: int = 100
    episodes_per_epoch: int = 100
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    se_enabled: bool = True
    metric: str = "knn"
    knn_k: int = 3
    se_reduction: int = 16
    val_fraction: float = 0.1
    val_episodes: int = 4
    batch_size: int = 64
    channels: int = 3

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self) -> ModelConfig:
        return ModelConfig(se_enabled=self.se_enabled, metric=self.metric,
                           knn_k=self.knn_k, se_reduction=self.se_reduction,
                           input_channels=self.channels)


class EpisodicTrainer:
    """Meta-trains a FewShotNetwork over sampled episodes.

    After ``fit``: ``network_`` carries the best-on-validation weights,
    ``history_`` the per-epoch loss and validation accuracy, ``last_state_``
    the final weights.  Training state round-trips through checkpoints for
    exact resumption.
    """

    def __init__(self, config: TrainConfig | None = None):
        self.config = config or TrainConfig()

    def fit(self, train_data: RdmDataset, ckpt_dir=None,
            resume_from=None) -> "EpisodicTrainer":
        cfg = self.config
        self._val_disabled = False
        fit_data, val_data = split_train_val(train_data, cfg.val_fraction, cfg.seed)
        network = FewShotNetwork(cfg.model_config(), seed=cfg.seed,
                                 batch_size=cfg.batch_size)
        optimizer = make_optimizer(cfg.optimizer, network.named_params(), cfg.lr)
        start_epoch = 0
        history = {"epoch_loss": [], "val_acc": []}
        best = {"val_acc": -1.0, "epoch": -1, "state": None}
        if resume_from is not None:
            arrays, sidecar = load_checkpoint(resume_from)
            network.load_state_arrays(arrays)
            optimizer.load_state_dict(sidecar.get("optimizer", {}))
            start_epoch = int(sidecar.get("epoch", -1)) + 1
            history = sidecar.get("history", history)
            best["val_acc"] = float(sidecar.get("best_val_acc", -1.0))
            best["epoch"] = int(sidecar.get("best_epoch", -1))
        ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else None

        for epoch in range(start_epoch, cfg.epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, _KEY_TRAIN, epoch)))
            losses = []
            for ep_i in range(cfg.episodes_per_epoch):
                task = sample_episode(fit_data, cfg.n_way, cfg.k_shot,
                                      cfg.t_query, rng, cfg.channels)
                loss, _ = network.episode_loss(task.support_x, task.support_y,
                                               task.query_x, task.query_y,
                                               cfg.n_way, train=True)
                loss_value = float(loss.data)
                if not math.isfinite(loss_value):
                    self._dump_divergence(ckpt_dir, task, epoch, ep_i, losses)
                    raise TrainingDivergedError(
                        f"loss became {loss_value} at epoch {epoch} episode {ep_i}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(loss_value)
            history["epoch_loss"].append(float(np.mean(losses)))
            val_acc = self._validate(network, val_data, epoch)
            history["val_acc"].append(val_acc)
            if val_acc is None or val_acc > best["val_acc"]:
                best.update(val_acc=-1.0 if val_acc is None else val_acc,
                            epoch=epoch, state=network.state_arrays())
            if ckpt_dir is not None:
                self._save(ckpt_dir, network, optimizer, epoch, history, best)

        self.last_state_ = network.state_arrays()
        self.history_ = history
        self.best_epoch_ = best["epoch"]
        self.best_val_acc_ = best["val_acc"]
        if best["state"] is not None:
            network.load_state_arrays(best["state"])
        self.network_ = network
        return self

    def _validate(self, network, val_data, epoch):
        cfg = self.config
        if val_data is None or cfg.val_episodes <= 0 or self._val_disabled:
            return None
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _KEY_VAL, epoch)))
        try:
            positions = [sample_episode_positions(val_data, cfg.n_way, cfg.k_shot,
                                                  cfg.t_query, rng)
                         for _ in range(cfg.val_episodes)]
        except SamplingError as exc:
            # tiny datasets: skip checkpoint selection rather than fail the run
            logger.warning("validation disabled, holdout too small (%s)", exc)
            self._val_disabled = True
            return None
        desc = embed_split(network, val_data, cfg.channels)
        accs = []
        for sup_pos, sup_y, qry_pos, qry_y, _ in positions:
            pred, _ = network.predict_from_descriptors(desc[sup_pos], sup_y,
                                                       desc[qry_pos], cfg.n_way)
            accs.append(100.0 * float(np.mean(pred == qry_y)))
        return float(np.mean(accs))

    def _save(self, ckpt_dir, network, optimizer, epoch, history, best):
        sidecar = {"epoch": epoch, "history": history,
                   "best_val_acc": best["val_acc"], "best_epoch": best["epoch"],
                   "optimizer": optimizer.state_dict(),
                   "train_config": self.config.to_dict(),
                   "model_config": network.config.to_dict()}
        save_checkpoint(ckpt_dir / "last.ckpt", network.state_arrays(), sidecar)
        if best["epoch"] == epoch and best["state"] is not None:
            best_sidecar = {"epoch": epoch, "best_val_acc": best["val_acc"],
                            "best_epoch": best["epoch"],
                            "train_config": self.config.to_dict(),
                            "model_config": network.config.to_dict()}
            save_checkpoint(ckpt_dir / "best.ckpt", best["state"], best_sidecar)

    def _dump_divergence(self, ckpt_dir, task, epoch, ep_i, losses):
        if ckpt_dir is None:
            return
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        np.savez(ckpt_dir / "diverged_episode.npz",
                 support_x=task.support_x, support_y=task.support_y,
                 query_x=task.query_x, query_y=task.query_y,
                 epoch=epoch, episode=ep_i, losses=np.asarray(losses))


def load_network(ckpt_path, batch_size: int = 64) -> FewShotNetwork:
    """Rebuild a FewShotNetwork from a checkpoint and its sidecar config."""
    arrays, sidecar = load_checkpoint(ckpt_path)
    mc = sidecar.get("model_config", {})
    config = ModelConfig(**mc) if mc else ModelConfig()
    network = FewShotNetwork(config, seed=0, batch_size=batch_size)
    network.load_state_arrays(arrays)
    return network
