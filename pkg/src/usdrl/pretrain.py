"""Self-supervised pretraining: positive-pair construction, early fusion, Adam loop, checkpoints."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn
import torch.nn.functional as F
from torch.overrides import TorchFunctionMode

from .checkpoint import read_container, write_container
from .config import PretrainConfig
from .dste import DSTE, EncoderConfig, InputEmbedding, init_params, instance_embed
from .mgfd import LossWeights, ProjectionSet, Projectors, loss_total
from .skelio import AugSpec, DatasetManifest, SkeletonSequence, augment
from .validation import modality_batch, stack_frames

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class StreamFeatures:
    f_t: Tensor
    f_s: Tensor


def fuse_modalities(features: dict[str, StreamFeatures]) -> StreamFeatures:
    """Early fusion: elementwise mean of per-modality embeddings, per stream."""
    if not features:
        raise ValueError("cannot fuse an empty set of modalities")
    feats = list(features.values())
    if len(feats) == 1:
        return feats[0]
    shapes = {(tuple(f.f_t.shape), tuple(f.f_s.shape)) for f in feats}
    if len(shapes) != 1:
        raise ValueError(f"modality features disagree on shape: {sorted(shapes)}")
    f_t, f_s = feats[0].f_t, feats[0].f_s
    for f in feats[1:]:
        f_t, f_s = f_t + f.f_t, f_s + f.f_s
    return StreamFeatures(f_t / len(feats), f_s / len(feats))


class USDRLNet(nn.Module):
    """Per-modality input embeddings, shared encoder, three projectors."""

    def __init__(self, cfg: EncoderConfig, modalities: Sequence[str] = ("joint",), seed: int = 0,
                 batch_norm: bool = True):
        super().__init__()
        self.cfg = cfg
        self.modalities = list(modalities)
        self.embeddings = nn.ModuleDict({m: InputEmbedding(cfg) for m in self.modalities})
        self.encoder = DSTE(cfg)
        self.projectors = Projectors(cfg.repr_dim, cfg.proj_dim, batch_norm)
        init_params(self, seed)

    def stream_features(self, inputs: dict[str, Tensor]) -> StreamFeatures:
        return fuse_modalities({m: StreamFeatures(*self.embeddings[m](inputs[m])) for m in self.modalities})

    def encode(self, inputs: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
        f = self.stream_features(inputs)
        return self.encoder(f.f_t, f.f_s)

    def embed(self, inputs: dict[str, Tensor]) -> Tensor:
        return instance_embed(*self.encode(inputs))

    def forward(self, inputs: dict[str, Tensor]) -> ProjectionSet:
        y_t, y_s = self.encode(inputs)
        return self.projectors(y_t.amax(dim=-2), y_s.amax(dim=-2))


def batch_inputs(seqs: Sequence[SkeletonSequence], cfg: EncoderConfig, modalities, edges,
                 dtype=torch.float32) -> dict[str, Tensor]:
    """Resample to ``cfg.seq_len``, derive modalities, convert to tensors."""
    x = stack_frames(seqs, cfg.seq_len)
    return {m: torch.as_tensor(v, dtype=dtype) for m, v in modality_batch(x, modalities, edges).items()}


def group_views(sequences: Sequence[SkeletonSequence]) -> dict[str, list[SkeletonSequence]]:
    """Records by sample id, first-appearance order, views sorted."""
    pool: dict[str, list[SkeletonSequence]] = {}
    for s in sequences:
        pool.setdefault(s.id, []).append(s)
    for views in pool.values():
        views.sort(key=lambda s: -1 if s.view is None else s.view)
    return pool


def make_pairs(batch: Sequence[SkeletonSequence], strategy: str, aug: AugSpec, K: int,
               rng: np.random.Generator | None = None,
               pool: dict[str, list[SkeletonSequence]] | None = None) -> list[list[SkeletonSequence]]:
    """K aligned copies of ``batch``; row ``i`` of every copy shares the sample id.

    ``augment``: K independent augmentations of each record.  ``multiview``:
    each copy starts from a different camera view of the same id (cycling when
    K exceeds the view count), then is augmented independently.
    """
    rng = np.random.default_rng(aug.seed) if rng is None else rng
    copies: list[list[SkeletonSequence]] = [[] for _ in range(K)]
    if strategy == "augment":
        for seq in batch:
            for c in copies:
                c.append(augment(seq, aug, rng))
    elif strategy == "multiview":
        pool = group_views(batch) if pool is None else pool
        for seq in batch:
            views = pool.get(seq.id, [])
            if len(views) < 2:
                raise ValueError(f"multi-view pairing needs >= 2 views of sample {seq.id!r}, found {len(views)}")
            order = rng.permutation(len(views))
            for i, c in enumerate(copies):
                c.append(augment(views[order[i % len(views)]], aug, rng))
    else:
        raise ValueError(f"unknown pairing strategy {strategy!r}")
    return copies


def make_optimizer(params, lr: float, weight_decay: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, weight_decay=weight_decay, foreach=False)


def train_step(model: USDRLNet, optimizer: torch.optim.Optimizer, copies: Sequence[dict[str, Tensor]],
               weights: LossWeights) -> dict[str, float]:
    """One forward/backward/Adam update over K aligned input copies; returns the loss breakdown."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    breakdown = loss_total([model(inputs) for inputs in copies], weights)
    values = breakdown.as_floats()
    for name, v in values.items():
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss term {name!r}: {v}")
    breakdown.total.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    optimizer.step()
    return values


class Pretrainer:
    """Owns the model, optimizer and data RNG for one pretraining run (single writer)."""

    def __init__(self, cfg: PretrainConfig, manifest: DatasetManifest):
        self.cfg = cfg
        self.manifest = manifest
        tc = cfg.train
        self.dtype = DTYPES[tc.dtype]
        self.model = USDRLNet(cfg.encoder, tc.modalities, seed=tc.seed).to(self.dtype)
        self.optimizer = make_optimizer(self.model.parameters(), tc.lr, tc.weight_decay)
        self.rng = np.random.default_rng(tc.seed)
        self.aug = cfg.data.aug_spec(manifest.flip_pairs, seed=tc.seed)
        self.step = 0
        self.epoch = 0
        self.history: list[dict] = []

    def lr_at(self, epoch: int) -> float:
        tc = self.cfg.train
        return tc.lr if epoch < tc.decay_epoch else tc.lr / 10

    def _units(self, data: Sequence[SkeletonSequence]):
        if self.cfg.train.pairing == "multiview":
            pool = group_views(data)
            return [views[0] for views in pool.values()], pool
        return list(data), None

    def inputs(self, seqs: Sequence[SkeletonSequence]) -> dict[str, Tensor]:
        return batch_inputs(seqs, self.cfg.encoder, self.cfg.train.modalities, self.manifest.edges, self.dtype)

    def run_epoch(self, data: Sequence[SkeletonSequence], log_fh=None) -> list[dict]:
        tc = self.cfg.train
        lr = self.lr_at(self.epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        units, pool = self._units(data)
        if len(units) < 2:
            raise ValueError("pretraining needs at least 2 samples")
        order = self.rng.permutation(len(units))
        n_batches = max(1, len(units) // tc.batch_size)
        size = min(tc.batch_size, len(units))
        records = []
        for b in range(n_batches):
            batch = [units[i] for i in order[b * size:(b + 1) * size]]
            copies = make_pairs(batch, tc.pairing, self.aug, tc.copies, self.rng, pool)
            values = train_step(self.model, self.optimizer, [self.inputs(c) for c in copies], self.cfg.loss)
            rec = {"step": self.step, "epoch": self.epoch, **values, "lr": lr}
            records.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
            self.step += 1
        self.epoch += 1
        self.history.extend(records)
        return records

    def fit(self, data: Sequence[SkeletonSequence], epochs: int | None = None, log_path=None,
            checkpoint_path=None) -> "Pretrainer":
        """Train until ``epochs`` (default ``cfg.train.epochs``) total epochs have run."""
        tc = self.cfg.train
        epochs = tc.epochs if epochs is None else epochs
        log_fh = open(log_path, "a") if log_path else None
        try:
            while self.epoch < epochs:
                recs = self.run_epoch(data, log_fh)
                log.info("epoch %d loss %.5f", self.epoch, recs[-1]["total"])
                if checkpoint_path and tc.checkpoint_every and self.epoch % tc.checkpoint_every == 0:
                    p = Path(checkpoint_path)
                    self.save(p.with_name(f"{p.stem}.epoch{self.epoch}{p.suffix}"))
        finally:
            if log_fh is not None:
                log_fh.close()
        if checkpoint_path:
            self.save(checkpoint_path)
        return self

    # -- checkpointing ------------------------------------------------------

    def arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.detach().cpu().numpy() for name, t in self.model.state_dict().items()}
        names = [n for n, _ in self.model.named_parameters()]
        state = self.optimizer.state_dict()["state"]
        for idx, st in state.items():
            for key, val in st.items():
                out[f"opt/{names[idx]}/{key}"] = torch.as_tensor(val).detach().cpu().numpy()
        return out

    def save(self, path) -> None:
        write_container(
            path, self.cfg.to_dict(), self.arrays(),
            manifest=self.manifest.to_dict(), step=self.step, epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
        )

    @classmethod
    def load(cls, path) -> "Pretrainer":
        header, arrays = read_container(path)
        cfg = PretrainConfig.from_dict(header["config"])
        m = header["manifest"]
        manifest = DatasetManifest(m["joint_count"], m["person_slots"], m["coord_dims"], m["edges"],
                                   m["class_names"], m.get("splits", {}), m.get("flip_pairs", []))
        trainer = cls(cfg, manifest)
        state = {k: torch.as_tensor(v) for k, v in arrays.items() if not k.startswith("opt/")}
        trainer.model.load_state_dict(state)
        names = [n for n, _ in trainer.model.named_parameters()]
        opt_state = trainer.optimizer.state_dict()
        for idx, name in enumerate(names):
            prefix = f"opt/{name}/"
            entry = {k[len(prefix):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith(prefix)}
            if entry:
                opt_state["state"][idx] = entry
        trainer.optimizer.load_state_dict(opt_state)
        trainer.step, trainer.epoch = header["step"], header["epoch"]
        trainer.rng.bit_generator.state = header["rng_state"]
        return trainer


def fit(data: Sequence[SkeletonSequence], cfg: PretrainConfig, manifest: DatasetManifest,
        checkpoint_path=None, log_path=None) -> Pretrainer:
    return Pretrainer(cfg, manifest).fit(data, log_path=log_path, checkpoint_path=checkpoint_path)


def embedding_std(h) -> float:
    """Mean over dimensions of the per-dimension standard deviation across samples."""
    h = np.asarray(h, dtype=np.float64)
    return float(h.std(axis=0, ddof=1).mean())


# -- gradient verification ----------------------------------------------------

class _KinkRecorder(TorchFunctionMode):
    """Record ReLU sign patterns and max-pool argmax indices seen during a forward pass."""

    def __init__(self):
        super().__init__()
        self.pattern: list[Tensor] = []

    def __torch_function__(self, func, types, args=(), kwargs=None):
        kwargs = kwargs or {}
        if func in (F.relu, torch.relu, Tensor.relu):
            self.pattern.append((args[0] > 0).detach().clone())
        elif func in (torch.amax, Tensor.amax):
            dim = kwargs.get("dim", args[1] if len(args) > 1 else None)
            self.pattern.append(args[0].detach().argmax(dim=dim))
        return func(*args, **kwargs)


def _same_pattern(a: list[Tensor], b: list[Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    kinks: int = 0
    h: float = 1e-4

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def finite_diff_check(model: USDRLNet, copies: Sequence[dict[str, Tensor]], weights: LossWeights,
                      h: float = 1e-4, max_entries: int = 12, threshold: float = 1e-6,
                      seed: int = 0) -> GradCheckReport:
    """Compare autograd gradients of the total loss to central differences, in float64.

    Arrays larger than ``max_entries`` are subsampled.  Entries whose gradient
    magnitude is at most ``threshold`` on both routes are not compared.  An
    entry whose probe interval ``[x-h, x+h]`` crosses a ReLU or max-pool switch
    is not differentiable there; it is counted in ``kinks`` and not compared.
    """
    model = copy.deepcopy(model).double().train()
    copies = [{k: v.double() for k, v in c.items()} for c in copies]

    def loss() -> tuple[Tensor, list[Tensor]]:
        with _KinkRecorder() as rec:
            value = loss_total([model(c) for c in copies], weights).total
        return value, rec.pattern

    model.zero_grad(set_to_none=True)
    value, base = loss()
    value.backward()
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, h=h)
    with torch.no_grad():
        for name, p in model.named_parameters():
            grad = torch.zeros_like(p) if p.grad is None else p.grad
            flat, gflat = p.view(-1), grad.reshape(-1)
            n = flat.numel()
            idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                up, pat_up = loss()
                flat[i] = orig - h
                down, pat_down = loss()
                flat[i] = orig
                numeric = (up.item() - down.item()) / (2 * h)
                analytic = gflat[i].item()
                scale = max(abs(numeric), abs(analytic))
                if scale <= threshold:
                    continue
                if not (_same_pattern(base, pat_up) and _same_pattern(base, pat_down)):
                    report.kinks += 1
                    continue
                worst = max(worst, abs(numeric - analytic) / scale)
                report.checked += 1
            report.per_param[name] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
    return report
