"""Per-batch training step, evaluation, and the full run loop.

One step: forward the weakly augmented labeled batch, the weakly augmented
unlabeled batch (teacher, no gradient), and the strongly augmented unlabeled
batch (student); assemble supervised + pseudo-label + self-supervised +
weight-decay losses; one Nesterov SGD update at the scheduled rate; one EMA
update. All three forward passes run in train mode and update shared BN
statistics in that fixed order.

Randomness is derived per step from (seed, stream-id, k), so runs are
bit-reproducible and a checkpoint resume continues the exact sequence.
"""

import os
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import augment, data, ema, losses, metrics, model, schedule_optim

_INIT_STREAM, _AUG_STREAM = 33, 44


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainState:
    bundle: model.ModelBundle
    opt: schedule_optim.NesterovSgd
    ema: ema.EmaState
    schedule: schedule_optim.LrSchedule
    step: int
    seed: int


def init_state(cfg):
    torch.manual_seed(int(np.random.SeedSequence([cfg.seed, _INIT_STREAM]).generate_state(1)[0]))
    bundle = model.build_model(cfg.arch, cfg.num_classes, feature_dim=cfg.feature_dim)
    opt = schedule_optim.NesterovSgd(momentum=cfg.sgd_momentum)
    shadow = ema.ema_init(bundle.named_trainable(), momentum=cfg.ema_momentum)
    sched = schedule_optim.LrSchedule(cfg.eta0, cfg.gamma, cfg.total_steps)
    return TrainState(bundle, opt, shadow, sched, 0, cfg.seed)


def _to_nchw(images):
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


@dataclass
class BatchViews:
    """Augmented tensors for one step, NCHW float32."""
    labeled_weak: torch.Tensor
    labels_onehot: torch.Tensor
    unlabeled_weak: torch.Tensor
    unlabeled_strong: torch.Tensor


def _supervised_only(cfg):
    # No gradient can reach the model through the unlabeled branch: the
    # self-supervised weight is zero and the pseudo-label mask can never fire
    # (strict max(w) > tau with tau > 1). Skip the unlabeled compute.
    return cfg.w_s == 0.0 and (not cfg.enable_pseudo_label_loss or cfg.tau > 1.0)


def make_views(batch, cfg, policy, seed):
    """Apply weak/strong augmentation for step k; pure in (batch, seed, k)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _AUG_STREAM, batch.step]))
    lab = augment.augment_batch(batch.labeled_images, augment.weak_augment, rng)
    if _supervised_only(cfg):
        empty = torch.empty(0, 3, *batch.labeled_images.shape[1:3])
        return BatchViews(_to_nchw(lab), torch.from_numpy(batch.labels_onehot), empty, empty)
    weak = augment.augment_batch(batch.unlabeled_images, augment.weak_augment, rng)
    strong = augment.augment_batch(
        batch.unlabeled_images, lambda im, r: augment.strong_augment(im, policy, r), rng)
    return BatchViews(_to_nchw(lab), torch.from_numpy(batch.labels_onehot),
                      _to_nchw(weak), _to_nchw(strong))


def step_on_views(state, views, cfg):
    """Loss assembly + one optimizer and EMA update on pre-augmented views."""
    bundle = state.bundle
    bundle.train_mode(True)
    have_unlabeled = views.unlabeled_weak.shape[0] > 0

    feats_l = bundle.backbone(views.labeled_weak)
    logits_l = bundle.head_g(feats_l)
    l_l = losses.supervised_loss(views.labels_onehot, logits_l)

    zero = torch.zeros(())
    l_p, l_s, mask_rate, degenerate = zero, zero, 0.0, 0
    if have_unlabeled:
        with torch.no_grad():  # teacher branch: weak augmentation, stop-gradient
            z = bundle.backbone(views.unlabeled_weak)
            w_logits = bundle.head_g(z)
        v = bundle.backbone(views.unlabeled_strong)
        q_logits = bundle.head_g(v)
        if cfg.enable_pseudo_label_loss:
            l_p, mask_rate = losses.pseudo_label_loss(w_logits, q_logits, cfg.tau)
        else:
            with torch.no_grad():
                conf = torch.softmax(w_logits, dim=1).max(dim=1).values
                mask_rate = float((conf > cfg.tau).float().mean().item())
        if cfg.ssl_loss_kind == "cosine":
            l_s, degenerate = losses.cosine_ssl_loss(v, bundle.head_h, z)
        elif cfg.ssl_loss_kind == "mse":
            l_s = losses.mse_ssl_loss(v, bundle.head_h, z)
        else:
            l_s = losses.softmax_ssl_loss(v, bundle.head_h, z, cfg.softmax_temperature)

    l_wd = losses.weight_decay_term(bundle.param_groups(), cfg.w_d)
    total = l_l + l_p + l_wd
    if cfg.w_s > 0.0 and have_unlabeled:
        total = total + cfg.w_s * l_s

    if not torch.isfinite(total):
        raise TrainingDiverged(
            "non-finite loss at step %d: l_l=%s l_p=%s l_s=%s l_wd=%s"
            % (state.step, l_l.item(), float(l_p), float(l_s), l_wd.item()))

    for p in bundle.trainable_parameters():
        p.grad = None
    total.backward()
    grads = {name: p.grad for name, p in bundle.named_trainable() if p.grad is not None}
    lr = schedule_optim.lr_at(state.schedule, state.step)
    try:
        state.opt.step(bundle.named_trainable(), grads, lr)
    except schedule_optim.NonFiniteGradient as exc:
        raise TrainingDiverged("step %d aborted: %s" % (state.step, exc))
    ema.ema_update(state.ema, bundle.named_trainable())
    state.step += 1

    return losses.LossReport(
        l_l=float(l_l.detach()), l_p=float(l_p.detach()), l_s=float(l_s.detach()),
        l_wd=float(l_wd.detach()), total=float(total.detach()),
        mask_rate=mask_rate, ssl_degenerate=degenerate)


def train_step(state, batch, cfg, policy):
    """Execute one full training step on a raw SslBatch."""
    assert batch.step == state.step, "batch/state step mismatch"
    views = make_views(batch, cfg, policy, state.seed)
    return step_on_views(state, views, cfg)


@torch.no_grad()
def evaluate(state, test_images, test_labels, batch_size=256, use_ema=True):
    """Top-1 error rate on the test set using the EMA shadow parameters.

    Runs on a deep copy: live weights and BN statistics are untouched.
    """
    if len(test_images) == 0:
        raise ValueError("empty test set")
    eval_bundle = state.bundle.clone()
    if use_ema:
        ema.copy_shadow_to(state.ema, eval_bundle)  # BN buffers stay from the live model
    eval_bundle.train_mode(False)
    correct = 0
    imgs = test_images.astype(np.float32) / 255.0 if test_images.dtype == np.uint8 else test_images
    for i in range(0, len(imgs), batch_size):
        x = _to_nchw(imgs[i:i + batch_size])
        logits = eval_bundle.head_g(eval_bundle.backbone(x))
        correct += int((logits.argmax(dim=1).numpy() == test_labels[i:i + batch_size]).sum())
    return 1.0 - correct / len(imgs)


@dataclass
class RunResult:
    min_error: float
    last20_median: float
    final_error: float
    out_dir: str
    log_path: str
    checkpoint_path: str


def run(cfg, dataset, split, out_dir, resume_from=None, progress=False, stop_at=None):
    """Train for cfg.total_steps, evaluating every eval_interval steps.

    Writes into out_dir: config snapshot, split file, augmentation policy,
    metrics CSV, final checkpoint. Returns min / last-20-median / final error.
    stop_at pauses the run after that step (keeping the full-length LR
    schedule) so it can be resumed from the written checkpoint.
    """
    os.makedirs(out_dir, exist_ok=True)
    from . import config as config_mod
    config_mod.save_config(cfg, os.path.join(out_dir, "config.txt"))
    data.save_split(split, os.path.join(out_dir, "split.txt"))
    policy = augment.default_policy(fill=tuple(dataset.image_mean),
                                    ops_per_image=cfg.strong_ops_per_image,
                                    cutout_fraction=cfg.cutout_fraction)
    with open(os.path.join(out_dir, "policy.json"), "w", encoding="utf-8") as fh:
        fh.write(policy.to_json())

    log_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.pt")
    state = init_state(cfg)
    log = metrics.MetricLog(log_path)
    if resume_from is not None:
        ckpt = model.load_checkpoint(resume_from)
        state.bundle.load_state_dict(ckpt["model"])
        state.opt.load_state_dict(ckpt["optimizer"])
        state.ema = ema.EmaState.from_state_dict(ckpt["ema"])
        state.step = ckpt["step"]
        if os.path.exists(log_path):
            log = metrics.MetricLog.load(log_path)

    interval = cfg.effective_eval_interval
    last_step = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    t0 = time.perf_counter()
    stream = data.batch_stream(dataset, split, cfg, cfg.seed, start_step=state.step)
    for batch in stream:
        if state.step >= last_step:
            break
        report = train_step(state, batch, cfg, policy)
        k = state.step  # post-increment step count
        if k % interval == 0 or k == cfg.total_steps:
            err = evaluate(state, dataset.test_images, dataset.test_labels)
            log.append_row(metrics.MetricRow(
                step=k, l_l=report.l_l, l_p=report.l_p, l_s=report.l_s,
                mask_rate=report.mask_rate, lr=schedule_optim.lr_at(state.schedule, k - 1),
                wall_time_s=time.perf_counter() - t0, eval_error=err, ema=True))
            if progress:
                print("step %d/%d err %.4f (l_l %.3f l_p %.3f l_s %.3f mask %.2f)"
                      % (k, cfg.total_steps, err, report.l_l, report.l_p,
                         report.l_s, report.mask_rate), flush=True)

    model.save_checkpoint(ckpt_path, state.bundle, state.opt.state_dict(),
                          state.ema.state_dict(), state.step, cfg.content_hash())
    if stop_at is not None and state.step < cfg.total_steps:
        return RunResult(float("nan"), float("nan"), float("nan"),
                         out_dir, log_path, ckpt_path)
    stats = metrics.run_stats(log)
    final_error = log.eval_errors[-1]
    return RunResult(stats.min_error, stats.last20_median, final_error,
                     out_dir, log_path, ckpt_path)
