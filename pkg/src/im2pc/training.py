"""Loss, optimizer, schedule, and the training loop."""

from __future__ import annotations

import csv

import numpy as np

from .autodiff import Tensor
from .config import TrainConfig
from .errors import NonFiniteLoss
from .geometry import PoseQT, rre_rte
from .params import Module, Parameter, save_checkpoint
from .registration import RegistrationNet, StageOutput


class LossParams(Module):
    """Learnable loss scales s_q (init -2.5) and s_t (init 0)."""

    def __init__(self, sq_init=-2.5, st_init=0.0):
        self.s_q = Parameter("loss.s_q", np.array(sq_init))
        self.s_t = Parameter("loss.s_t", np.array(st_init))


def single_loss(q: Tensor, t: Tensor, gt: PoseQT, lp: LossParams) -> Tensor:
    """|q_gt - q|_2 * exp(-s_q) + s_q + |t_gt - t|_1 * exp(-s_t) + s_t."""
    dq = (q - Tensor(gt.q)).norm_l2()
    dt = (t - Tensor(gt.t)).norm_l1()
    sq, st = lp.s_q.tensor, lp.s_t.tensor
    return dq * (-sq).exp() + sq + dt * (-st).exp() + st


def total_loss(coarse: StageOutput, fine: StageOutput, gt: PoseQT,
               lp: LossParams, alpha3=0.8, alpha4=1.6) -> Tensor:
    return alpha3 * single_loss(fine.q_t, fine.t_t, gt, lp) + \
        alpha4 * single_loss(coarse.q_t, coarse.t_t, gt, lp)


class Adam:
    """First/second-moment adaptive optimizer with bias correction."""

    def __init__(self, params: list[Parameter], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            m_hat = self.m[i] / (1 - self.b1**self.t)
            v_hat = self.v[i] / (1 - self.b2**self.t)
            p.tensor.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: list[Parameter], max_norm: float):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad**2).sum())
    total = np.sqrt(total)
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.tensor.grad = p.grad * scale
    return total


def evaluate_scenes(model: RegistrationNet, scenes) -> tuple[float, float]:
    """Mean RRE (deg) and RTE over scenes, no gating."""
    rres, rtes = [], []
    for scene in scenes:
        target = scene.gt_pose.inverse()
        _, fine = model(scene.cloud, scene.image, scene.K, train=False)
        rre, rte = rre_rte(fine.pose, target)
        rres.append(rre)
        rtes.append(rte)
    return float(np.mean(rres)), float(np.mean(rtes))


def train(model: RegistrationNet, scenes, cfg: TrainConfig, out_ckpt,
          log_path=None, max_steps=None, log_fn=None):
    """Train on Scene objects; returns (best_rte, history rows).

    Writes a CSV log `epoch,split,loss,rre_deg,rte,lr` when log_path is set
    and checkpoints the best-by-holdout-RTE parameters to out_ckpt.
    """
    if not scenes:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    n_hold = int(round(len(scenes) * cfg.holdout_frac))
    hold = scenes[len(scenes) - n_hold:]
    trainset = scenes[: len(scenes) - n_hold] or scenes
    if not hold:
        hold = trainset
    model.cfg.dropout = cfg.dropout
    lp = LossParams(cfg.sq_init, cfg.st_init)
    params = model.named_parameters() + lp.named_parameters()
    opt = Adam(params, lr=cfg.lr, betas=cfg.betas)
    rows = []
    best_rte = np.inf
    steps = 0
    log_file = open(log_path, "w", newline="") if log_path else None
    writer = None
    if log_file:
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(["epoch", "split", "loss", "rre_deg", "rte", "lr"])
    try:
        for epoch in range(cfg.epochs):
            opt.lr = cfg.lr * (1.0 - cfg.lr_decay) ** epoch
            epoch_losses = []
            bs = max(1, cfg.batch_size)
            for bi in range(0, len(trainset), bs):
                batch = trainset[bi: bi + bs]
                loss = None
                for scene in batch:
                    target = scene.gt_pose.inverse()
                    coarse, fine = model(scene.cloud, scene.image, scene.K,
                                         train=True, rng=rng)
                    one = total_loss(coarse, fine, target, lp,
                                     alpha3=cfg.alpha3, alpha4=cfg.alpha4)
                    loss = one if loss is None else loss + one
                loss = loss * (1.0 / len(batch))
                val = float(loss.data)
                if not np.isfinite(val):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch} batch {bi}")
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(params, cfg.clip_norm)
                opt.step()
                epoch_losses.append(val)
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            last_epoch = epoch == cfg.epochs - 1 or \
                (max_steps is not None and steps >= max_steps)
            if epoch % max(1, cfg.eval_every) != 0 and not last_epoch:
                if log_fn:
                    log_fn(epoch, float(np.mean(epoch_losses)), None, None)
                continue
            rre, rte = evaluate_scenes(model, hold)
            row = [epoch, "holdout", float(np.mean(epoch_losses)), rre, rte, opt.lr]
            rows.append(row)
            if writer:
                writer.writerow([f"{x:.9f}" if isinstance(x, float) else x for x in row])
                log_file.flush()
            if log_fn:
                log_fn(epoch, float(np.mean(epoch_losses)), rre, rte)
            if rte < best_rte:
                best_rte = rte
                save_checkpoint(out_ckpt, params, model.named_buffers())
            if max_steps is not None and steps >= max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    return best_rte, rows
