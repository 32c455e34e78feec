"""Training utilities: soft-Dice + cross-entropy loss, RAdam/Adam, schedules.

The loss is the nnU-Net convention: equally weighted soft Dice (softmax
probabilities, foreground classes) plus voxel-wise cross entropy. The learning
rate follows a linear schedule lr(e) = base * (1 - e / epochs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, NumericError
from .metrics import LabelVolume, evaluate
from .tensor import Tensor, no_grad


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    eye = np.eye(classes, dtype=np.float32)
    return eye[labels.reshape(-1)]


def dice_ce_loss(logits: Tensor, labels: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Soft Dice + cross entropy, equal weights; logits (H,W,D,K), labels (H,W,D)."""
    k = logits.shape[-1]
    flat = logits.reshape((-1, k))
    logp = flat.log_softmax(axis=-1)
    target = Tensor(one_hot(labels, k).astype(logits.dtype))
    ce = -(logp * target).sum() * (1.0 / labels.size)
    p = logp.exp()
    inter = (p * target).sum(axis=0)
    denom = p.sum(axis=0) + Tensor(target.data.sum(axis=0))
    dice = (inter * 2.0 + eps) / (denom + eps)
    if k > 1:
        # soft Dice over foreground classes only; with background included
        # the term is dominated by the majority class and the model can sit
        # at the all-background solution
        fg = np.ones(k, dtype=logits.dtype)
        fg[0] = 0.0
        dice_mean = (dice * Tensor(fg)).sum() * (1.0 / (k - 1))
    else:
        dice_mean = dice.mean()
    dice_loss = 1.0 - dice_mean
    return ce + dice_loss


def linear_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """lr at epoch e of E equals base * (1 - e / E)."""
    return base_lr * (1.0 - epoch / epochs)


@dataclass
class RAdam:
    """Rectified Adam (per the published update rule); set rectify=False for
    plain Adam as a debugging fallback."""

    params: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rectify: bool = True
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)
    _t: int = 0

    def __post_init__(self):
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        self._t += 1
        t = self._t
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho = rho_inf - 2.0 * t * (b2 ** t) / bias2
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            m_hat = m / bias1
            if not self.rectify:
                p.data -= lr * m_hat / (np.sqrt(v / bias2) + self.eps)
            elif rho > 4.0:
                r = math.sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf)
                              / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                p.data -= lr * r * m_hat / (np.sqrt(v / bias2) + self.eps)
            else:
                # variance not yet tractable: un-adapted update
                p.data -= lr * m_hat

    def state_arrays(self) -> dict:
        out = {"t": np.array([self._t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, state: dict) -> None:
        self._t = int(state["t"][0])
        for i in range(len(self.params)):
            self._m[i] = np.array(state[f"m{i}"], dtype=self._m[i].dtype)
            self._v[i] = np.array(state[f"v{i}"], dtype=self._v[i].dtype)


def make_optimizer(params, kind: str = "radam") -> RAdam:
    if kind == "radam":
        return RAdam(params)
    if kind == "adam":
        return RAdam(params, rectify=False)
    raise ConfigError(f"unknown optimizer '{kind}' (choose radam or adam)")


def train_step(model, batch, optimizer: RAdam, lr: float, step_index: int = 0) -> float:
    """One optimizer update on a batch of (image, labels) pairs."""
    optimizer.zero_grad()
    try:
        loss = None
        for img, lbl in batch:
            sample_loss = dice_ce_loss(model(Tensor(img)), lbl)
            loss = sample_loss if loss is None else loss + sample_loss
        loss = loss * (1.0 / len(batch))
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step_index)
        loss.backward()
    except NumericError as e:
        # the tape refuses non-finite intermediates; at training time that
        # is a diverged run, reported with the offending step
        raise DivergenceError(step_index) from e
    optimizer.step(lr)
    return value


def predict_labels(model, img: np.ndarray) -> np.ndarray:
    """Argmax class per voxel; ties resolve to the lowest class id."""
    with no_grad():
        logits = model(Tensor(img)).data
    return np.argmax(logits, axis=-1).astype(np.uint8)


def validation_dice(model, samples, classes: int) -> tuple:
    """Mean foreground DSC over samples plus the per-class mean vector."""
    per_class = np.zeros(classes)
    counts = np.zeros(classes)
    for img, lbl in samples:
        pred = predict_labels(model, img)
        rep = evaluate(LabelVolume(pred, n_classes=classes),
                       LabelVolume(lbl, n_classes=classes))
        for c, d in rep.dsc.items():
            if d is not None:
                per_class[c] += d
                counts[c] += 1
    with np.errstate(invalid="ignore"):
        per_class = np.where(counts > 0, per_class / np.maximum(counts, 1), np.nan)
    fg = per_class[1:]
    fg = fg[np.isfinite(fg)]
    return (float(fg.mean()) if fg.size else float("nan")), per_class


def fit(model, train_set, val_set, *, epochs: int, base_lr: float = 3e-4,
        batch_size: int = 2, optimizer: str = "radam", seed: int = 0,
        log=None, start_epoch: int = 0, opt_state: dict | None = None):
    """Plain training loop; deterministic given (seed, data, thread count).

    Returns (history, best) where history is a list of per-epoch dicts and
    best is (epoch, val_dsc, named parameter arrays at the best epoch).
    """
    opt = make_optimizer(model.parameters(), optimizer)
    if opt_state:
        opt.load_state_arrays(opt_state)
    order_rng = np.random.default_rng([seed, 0xB00C])
    history = []
    best = (-1, -1.0, None)
    step = 0
    for epoch in range(start_epoch, epochs):
        lr = linear_lr(base_lr, epoch, epochs)
        idx = order_rng.permutation(len(train_set))
        losses = []
        for lo in range(0, len(idx), batch_size):
            batch = [train_set[i] for i in idx[lo: lo + batch_size]]
            losses.append(train_step(model, batch, opt, lr, step))
            step += 1
        val_dsc, per_class = validation_dice(model, val_set, model.cfg.classes) \
            if val_set else (float("nan"), None)
        rec = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               "val_dsc": val_dsc}
        history.append(rec)
        if log:
            log(rec)
        if val_set and (best[2] is None or val_dsc >= best[1]):
            snap = {k: v.data.copy() for k, v in model.named_parameters().items()}
            best = (epoch, val_dsc, snap)
    if best[2] is None:
        best = (epochs - 1, float("nan"),
                {k: v.data.copy() for k, v in model.named_parameters().items()})
    return history, best, opt
