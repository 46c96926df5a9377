"""scikit-learn style estimators around the encoder and its evaluation heads."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from torch import nn

from .config import PretrainConfig
from .downstream.heads import frame_probs, predict_early
from .pretrain import Pretrainer, USDRLNet, batch_inputs
from .skelio import BACKGROUND, DatasetManifest, SkeletonSequence, temporal_resample
from .validation import check_embeddings, check_labels, check_sequences


def _check_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class USDRL(BaseEstimator, TransformerMixin):
    """Self-supervised skeleton encoder; ``transform`` returns instance embeddings ``[n][2*C_r]``."""

    def __init__(self, config: PretrainConfig | None = None, manifest: DatasetManifest | None = None,
                 checkpoint_path=None, log_path=None, batch_size: int = 64):
        self.config = config
        self.manifest = manifest
        self.checkpoint_path = checkpoint_path
        self.log_path = log_path
        self.batch_size = batch_size

    def fit(self, X, y=None):
        seqs = check_sequences(X)
        if self.manifest is None:
            raise ValueError("USDRL needs a DatasetManifest for the skeleton topology")
        cfg = self.config or PretrainConfig()
        self.trainer_ = Pretrainer(cfg, self.manifest).fit(seqs, log_path=self.log_path,
                                                          checkpoint_path=self.checkpoint_path)
        self.history_ = self.trainer_.history
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "USDRL":
        trainer = Pretrainer.load(path)
        est = cls(config=trainer.cfg, manifest=trainer.manifest, checkpoint_path=path)
        est.trainer_ = trainer
        est.history_ = []
        return est

    @property
    def model_(self) -> USDRLNet:
        _check_fitted(self, "trainer_")
        return self.trainer_.model

    def _batches(self, X):
        seqs = check_sequences(X)
        for i in range(0, len(seqs), self.batch_size):
            yield self.trainer_.inputs(seqs[i:i + self.batch_size])

    @torch.no_grad()
    def transform(self, X) -> np.ndarray:
        model = self.model_.eval()
        return np.concatenate([model.embed(b).double().numpy() for b in self._batches(X)])

    @torch.no_grad()
    def frame_features(self, X) -> np.ndarray:
        """Temporal-stream dense representations ``[n][T][C_r]``."""
        model = self.model_.eval()
        return np.concatenate([model.encode(b)[0].double().numpy() for b in self._batches(X)])


class LinearProbe(BaseEstimator, ClassifierMixin):
    """Single affine layer trained with softmax cross-entropy (full batch, Adam) on frozen features.

    Features are standardized with training statistics, which keeps the
    classifier affine in the raw features.
    """

    def __init__(self, epochs: int = 300, lr: float = 0.05, weight_decay: float = 0.0,
                 num_classes: int | None = None):
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.num_classes = num_classes

    def fit(self, X, y):
        X = check_embeddings(X)
        y = check_labels(y, len(X))
        if self.num_classes is None:
            self.classes_ = np.unique(y)
        else:
            self.classes_ = np.arange(self.num_classes)
        index = {c: i for i, c in enumerate(self.classes_)}
        target = torch.as_tensor([index[c] for c in y])
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        xs = torch.as_tensor((X - self.mean_) / self.scale_)
        layer = nn.Linear(X.shape[1], len(self.classes_)).double()
        nn.init.zeros_(layer.weight)
        nn.init.zeros_(layer.bias)
        opt = torch.optim.Adam(layer.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        for _ in range(self.epochs):
            opt.zero_grad()
            F.cross_entropy(layer(xs), target).backward()
            opt.step()
        self.coef_ = layer.weight.detach().numpy().copy()
        self.intercept_ = layer.bias.detach().numpy().copy()
        return self

    def decision_function(self, X) -> np.ndarray:
        _check_fitted(self, "coef_")
        X = check_embeddings(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_.T + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return torch.as_tensor(self.decision_function(X)).softmax(dim=-1).numpy()

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class KNNRetriever(BaseEstimator, ClassifierMixin):
    """Cosine-similarity nearest-neighbour retrieval; ties go to the lower gallery index."""

    def __init__(self, n_neighbors: int = 1):
        self.n_neighbors = n_neighbors

    def fit(self, X, y, ids=None):
        self.gallery_ = check_embeddings(X, ids, nonzero=True)
        self.labels_ = check_labels(y, len(self.gallery_))
        self.classes_ = np.unique(self.labels_)
        self._unit = self.gallery_ / np.linalg.norm(self.gallery_, axis=1, keepdims=True)
        return self

    def similarity(self, X, ids=None) -> np.ndarray:
        _check_fitted(self, "gallery_")
        Q = check_embeddings(X, ids, nonzero=True)
        return (Q / np.linalg.norm(Q, axis=1, keepdims=True)) @ self._unit.T

    def rank(self, X, ids=None) -> np.ndarray:
        """Gallery indices per query, most similar first."""
        return np.argsort(-self.similarity(X, ids), axis=1, kind="stable")

    def predict(self, X) -> np.ndarray:
        ranks = self.rank(X)[:, : self.n_neighbors]
        votes = self.labels_[ranks]
        if self.n_neighbors == 1:
            return votes[:, 0]
        return np.array([np.bincount(v).argmax() for v in votes])


class FrameClassifier(BaseEstimator, ClassifierMixin):
    """Linear per-frame head on frozen temporal-stream features of a pretrained encoder.

    With ``background=True`` an extra last column models background frames
    (label ``-1``); untrimmed training sequences are cut into windows of the
    encoder length.  Trimmed sequences use their sequence label on every frame.
    """

    def __init__(self, encoder: USDRL | None = None, num_classes: int | None = None, background: bool = True,
                 stride: int | None = None, epochs: int = 300, lr: float = 0.05):
        self.encoder = encoder
        self.num_classes = num_classes
        self.background = background
        self.stride = stride
        self.epochs = epochs
        self.lr = lr

    @property
    def window_(self) -> int:
        return self.encoder.trainer_.cfg.encoder.seq_len

    def _windows(self, seqs: Sequence[SkeletonSequence]):
        T = self.window_
        stride = self.stride or max(1, T // 2)
        xs, ys = [], []
        for s in seqs:
            if s.frame_labels is None:
                if s.label is None:
                    raise ValueError(f"sequence {s.id!r} has neither frame labels nor a label")
                r = temporal_resample(s, T)
                xs.append(r)
                ys.append(np.full(T, s.label))
                continue
            n = s.length
            starts = list(range(0, max(n - T, 0) + 1, stride))
            if starts[-1] + T < n:
                starts.append(n - T)
            for st in starts:
                frames = s.frames[st:st + T]
                labels = s.frame_labels[st:st + T]
                if len(frames) < T:
                    pad = T - len(frames)
                    frames = np.concatenate([frames, np.zeros((pad,) + frames.shape[1:])])
                    labels = np.concatenate([labels, np.full(pad, BACKGROUND)])
                xs.append(SkeletonSequence(s.id, frames))
                ys.append(labels)
        return xs, np.stack(ys)

    def _column(self, labels: np.ndarray) -> np.ndarray:
        return np.where(labels == BACKGROUND, self.num_classes, labels)

    def fit(self, X, y=None):
        if self.encoder is None or self.num_classes is None:
            raise ValueError("FrameClassifier needs an encoder and num_classes")
        seqs = check_sequences(X)
        windows, labels = self._windows(seqs)
        if not self.background and np.any(labels == BACKGROUND):
            raise ValueError("background frames present but background=False")
        feats = self.encoder.frame_features(windows)
        n_out = self.num_classes + int(self.background)
        self.head_ = LinearProbe(self.epochs, self.lr, num_classes=n_out).fit(
            feats.reshape(-1, feats.shape[-1]), self._column(labels).reshape(-1))
        self.classes_ = np.arange(n_out)
        return self

    def predict_window_proba(self, x: np.ndarray) -> np.ndarray:
        """Per-frame probabilities for a batch of raw windows ``[B][T][M][V][C]``."""
        _check_fitted(self, "head_")
        seqs = [SkeletonSequence(f"w{i}", w) for i, w in enumerate(x)]
        feats = self.encoder.frame_features(seqs)
        B, T, C = feats.shape
        return self.head_.predict_proba(feats.reshape(-1, C)).reshape(B, T, -1)

    def predict_frame_proba(self, seq: SkeletonSequence, stride: int | None = None) -> np.ndarray:
        """Sliding-window frame probabilities for one long sequence."""
        return frame_probs(seq.frames, self.window_, stride or self.stride or self.window_ // 2,
                           self.predict_window_proba)

    def predict_frames(self, seq: SkeletonSequence, stride: int | None = None) -> np.ndarray:
        """Per-frame labels with background mapped to ``-1``."""
        lab = np.argmax(self.predict_frame_proba(seq, stride), axis=1)
        return np.where(lab == self.num_classes, BACKGROUND, lab) if self.background else lab

    def sequence_frame_proba(self, X) -> np.ndarray:
        """Frame probabilities ``[n][T][C]`` of trimmed sequences resampled to the encoder length."""
        seqs = [temporal_resample(s, self.window_) for s in check_sequences(X)]
        return self.predict_window_proba(np.stack([s.frames for s in seqs]))

    def predict_early(self, X, y, ratios):
        if not self.encoder.trainer_.cfg.encoder.causal:
            raise ValueError("early prediction needs an encoder built with encoder.causal = true")
        return predict_early(self.sequence_frame_proba(X), y, ratios)
