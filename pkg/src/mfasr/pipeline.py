"""Run-directory orchestration: configuration, artifacts, and the five
training stages.

Stage order and their artifacts under ``<run>/artifacts``:

    pretrain_l1       pretrained_g.mfaw
    train_gan_large   teacher_g.mfaw, teacher_d.mfaw
    distill_gd        student_g.mfaw, student_d.mfaw
    train_supernet    supernet.mfaw
    (search)          genotype.json          (via the search module)
    finetune          final_g.mfaw

Every stage logs one JSON object per iteration to ``<run>/logs`` and
writes a manifest next to each artifact. Iteration counts are the
full-scale defaults divided by ``scale_factor``, so a desk run keeps the
schedule's structure at a fraction of the cost.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import engine, latency
from .dataio import augment, load_dataset, psnr_y, quantize8, upscale_bicubic
from .errors import ConfigError, DivergenceError, PipelineError
from .graph import (DISC_TAPS, GEN_TAPS, GENE_COUNT, Genotype, ModelFamily,
                    NetworkGraph, build_mfanet, build_patchgan)
from .losses import (DistillAdapters, LossParts, LossWeights,
                     feature_match_loss_grad, loss_adv_g_grad, loss_disc_grad,
                     loss_percep_grad, loss_recon_grad, percep_extractor,
                     tap_channels, total_loss)
from .optim import Adam, lr_at
from .rng import Rng
from .search import Candidate, FitnessEvaluator, SearchConfig, evolutionary_search
from .weights import (WeightStore, init_weights, load, reorder_by_importance,
                      save, slice_for_genotype)

STAGES = ("pretrain_l1", "train_gan_large", "distill_gd", "train_supernet",
          "finetune")

_ARTIFACTS = {
    "pretrained_g": "pretrained_g.mfaw",
    "teacher_g": "teacher_g.mfaw",
    "teacher_d": "teacher_d.mfaw",
    "student_g": "student_g.mfaw",
    "student_d": "student_d.mfaw",
    "supernet": "supernet.mfaw",
    "genotype": "genotype.json",
    "final_g": "final_g.mfaw",
    "lut": "lut.json",
}


@dataclass
class RunConfig:
    """Resolved configuration for one run directory (JSON on disk)."""
    run_dir: str
    dataset_dir: str
    val_dir: str | None = None
    scale: int = 4
    choices: tuple[int, ...] = (48, 32, 24)
    cfabs_per_mfam: int = 2
    teacher_g_width: int = 64
    teacher_d_base: int = 48
    student_d_base: int = 32
    batch: int = 16
    patch_hr: int = 128
    seed: int = 0
    scale_factor: int = 100
    distill_norm: str = "rms"
    val_border: int | None = None
    val_images: int = 4
    val_every: int = 0  # 0: only at the last iteration
    # full-scale schedules; effective counts are these // scale_factor
    pretrain_iters: int = 500_000
    pretrain_lr: float = 2e-4
    pretrain_milestones: tuple[int, ...] = ()
    gan_iters: int = 15_000
    gan_lr: float = 1e-4
    gan_milestones: tuple[int, ...] = (5_000, 10_000)
    distill_iters: int = 15_000
    distill_lr: float = 1e-4
    distill_milestones: tuple[int, ...] = ()
    supernet_iters: int = 800_000
    supernet_lr: float = 1e-4
    supernet_milestones: tuple[int, ...] = (200_000, 400_000, 600_000)
    finetune_iters: int = 10_000
    finetune_lr: float = 1e-4
    finetune_milestones: tuple[int, ...] = ()
    # trade-off weights; the adversarial default follows the stated schedule
    recon_weight: float = 1.0
    distill_weight: float = 0.05
    percep_weight: float = 1.0
    adv_weight: float = 10.0
    # search settings
    latency_budget_us: float | None = None
    search_population: int = 32
    search_generations: int = 40
    search_mutation_rate: float = 0.1
    search_elite_k: int = 8
    search_seed: int = 0

    def __post_init__(self):
        self.choices = tuple(int(c) for c in self.choices)
        for name in ("pretrain_milestones", "gan_milestones",
                     "distill_milestones", "supernet_milestones",
                     "finetune_milestones"):
            setattr(self, name, tuple(int(m) for m in getattr(self, name)))
        problems = []
        if self.scale not in (2, 4):
            problems.append(f"scale must be 2 or 4, got {self.scale}")
        if len(set(self.choices)) != len(self.choices) or len(self.choices) < 2:
            problems.append(f"choices must be distinct, >= 2 values: {self.choices}")
        if self.batch < 1:
            problems.append(f"batch must be >= 1, got {self.batch}")
        if self.patch_hr % self.scale:
            problems.append(f"patch_hr {self.patch_hr} not divisible by scale")
        if self.scale_factor < 1:
            problems.append(f"scale_factor must be >= 1, got {self.scale_factor}")
        if self.distill_norm not in ("rms", "euclidean"):
            problems.append(f"distill_norm must be rms or euclidean, "
                            f"got {self.distill_norm!r}")
        if self.teacher_g_width < max(self.choices):
            problems.append("teacher_g_width must be >= the widest choice")
        for name in ("pretrain_iters", "gan_iters", "distill_iters",
                     "supernet_iters", "finetune_iters", "val_images"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("recon_weight", "distill_weight", "percep_weight",
                     "adv_weight"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))

    # -- derived ------------------------------------------------------------

    def family(self) -> ModelFamily:
        return ModelFamily(self.choices, self.scale, self.cfabs_per_mfam)

    def student_genotype(self) -> Genotype:
        return Genotype.uniform(max(self.choices))

    def effective(self, iters: int) -> int:
        return max(1, iters // self.scale_factor)

    def milestones(self, marks) -> tuple[int, ...]:
        return tuple(max(1, m // self.scale_factor) for m in marks)

    def stage_weights(self, stage: str) -> LossWeights:
        w = {"pretrain_l1": LossWeights(self.recon_weight, 0, 0, 0, 0),
             "train_gan_large": LossWeights(self.recon_weight, 0, 0,
                                            self.percep_weight, self.adv_weight),
             "distill_gd": LossWeights(self.recon_weight, self.distill_weight,
                                       self.distill_weight, self.percep_weight,
                                       self.adv_weight),
             "train_supernet": LossWeights(self.recon_weight, 0, 0,
                                           self.percep_weight, 0),
             "finetune": LossWeights(self.recon_weight, self.distill_weight,
                                     self.distill_weight, self.percep_weight,
                                     self.adv_weight)}
        if stage not in w:
            raise ConfigError(f"unknown stage {stage!r}")
        return w[stage]

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str, **overrides) -> "RunConfig":
        doc = json.loads(text)
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# ---------------------------------------------------------------------------
# run-directory plumbing

def artifact_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.run_dir, "artifacts", _ARTIFACTS[name])


def _require(cfg: RunConfig, name: str, producer: str) -> str:
    path = artifact_path(cfg, name)
    if not os.path.exists(path):
        raise PipelineError(f"missing artifact {path}; run '{producer}' first")
    return path


def _prepare_dirs(cfg: RunConfig) -> None:
    os.makedirs(os.path.join(cfg.run_dir, "artifacts"), exist_ok=True)
    os.makedirs(os.path.join(cfg.run_dir, "logs"), exist_ok=True)
    with open(os.path.join(cfg.run_dir, "config.json"), "w") as f:
        f.write(cfg.to_json() + "\n")


def write_manifest(cfg: RunConfig, path: str, stage: str) -> None:
    from . import __version__
    doc = {"artifact": os.path.basename(path), "stage": stage,
           "config_sha256": cfg.sha256(), "seed": cfg.seed,
           "toolkit_version": __version__}
    with open(path + ".manifest.json", "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


@contextmanager
def _run_lock(cfg: RunConfig):
    os.makedirs(cfg.run_dir, exist_ok=True)
    lock = os.path.join(cfg.run_dir, "lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"run directory is locked by {lock}; remove it if no stage is "
            f"running") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.unlink(lock)


class _MetricsLog:
    def __init__(self, cfg: RunConfig, stage: str):
        self.stage = stage
        self.path = os.path.join(cfg.run_dir, "logs", f"{stage}.jsonl")
        self._f = open(self.path, "w")
        self._t0 = time.monotonic()

    def write(self, iteration: int, parts: LossParts, total: float,
              lr: float, psnr_val: float | None) -> None:
        rec = {"iter": iteration, "stage": self.stage,
               "loss_total": float(total), "loss_parts": parts.to_dict(),
               "psnr_val": psnr_val, "lr": lr,
               "wallclock_ms": (time.monotonic() - self._t0) * 1e3}
        self._f.write(json.dumps(rec) + "\n")

    def close(self):
        self._f.close()


def _check_finite(stage: str, iteration: int, total: float, parts: LossParts):
    if not np.isfinite(total):
        raise DivergenceError(
            f"non-finite loss at {stage} iteration {iteration}",
            diagnostics={"stage": stage, "iter": iteration,
                         "loss_total": float(total), "parts": parts.to_dict()})


def _seed(base: int, k: int) -> int:
    return base * 10007 + k


# ---------------------------------------------------------------------------
# batch sampling

def _load_pairs(cfg: RunConfig, which: str):
    root = cfg.dataset_dir if which == "train" else cfg.val_dir
    if root is None:
        return []
    pairs = load_dataset(root, cfg.scale)
    lr_patch = cfg.patch_hr // cfg.scale
    if which == "train":
        small = [p[0].shape[1:] for p in pairs if min(p[0].shape[1:]) < lr_patch]
        if small:
            raise ConfigError(
                f"patch_hr {cfg.patch_hr} needs {lr_patch}-pixel LR crops but "
                f"{len(small)} images are smaller")
    return pairs


def _sample_batch(pairs, cfg: RunConfig, step_rng: Rng):
    lr_patch = cfg.patch_hr // cfg.scale
    s = cfg.scale
    idx_rng = step_rng.split(0)
    lrs, hrs = [], []
    for j in range(cfg.batch):
        i = int(idx_rng.integers(0, len(pairs)))
        lr_img, hr_img = pairs[i]
        pos = step_rng.split(1000 + j)
        _, lh, lw = lr_img.shape
        top = int(pos.integers(0, lh - lr_patch + 1))
        left = int(pos.integers(0, lw - lr_patch + 1))
        lr_p = lr_img[:, top:top + lr_patch, left:left + lr_patch]
        hr_p = hr_img[:, top * s:(top + lr_patch) * s,
                      left * s:(left + lr_patch) * s]
        # identical child streams => identical flip/rotation draws
        lrs.append(augment(lr_p, step_rng.split(2000 + j)))
        hrs.append(augment(hr_p, step_rng.split(2000 + j)))
    return np.stack(lrs), np.stack(hrs)


def _val_psnr(graph: NetworkGraph, store: WeightStore, val_pairs, cfg: RunConfig,
              limit: int | None = None) -> float | None:
    if not val_pairs:
        return None
    border = cfg.scale if cfg.val_border is None else cfg.val_border
    use = val_pairs[:limit] if limit else val_pairs
    scores = []
    for lr, hr in use:
        sr = engine.predict(graph, store, lr[None])[0]
        scores.append(psnr_y(np.clip(sr, 0.0, 1.0), hr, border=border))
    return float(np.mean(scores))


def _maybe_val(i: int, iters: int, cfg: RunConfig, fn):
    last = i == iters - 1
    if cfg.val_every > 0:
        return fn() if (i % cfg.val_every == 0 or last) else None
    return fn() if last else None


# ---------------------------------------------------------------------------
# stage drivers

def stage_pretrain(cfg: RunConfig) -> dict:
    pairs = _load_pairs(cfg, "train")
    val_pairs = _load_pairs(cfg, "val")
    graph = build_mfanet(Genotype.uniform(cfg.teacher_g_width), cfg.scale,
                         cfg.cfabs_per_mfam)
    store = init_weights(graph, _seed(cfg.seed, 11))
    opt = Adam(cfg.pretrain_lr)
    iters = cfg.effective(cfg.pretrain_iters)
    marks = cfg.milestones(cfg.pretrain_milestones)
    weights = cfg.stage_weights("pretrain_l1")
    data_rng = Rng(_seed(cfg.seed, 12))
    log = _MetricsLog(cfg, "pretrain_l1")
    try:
        for i in range(iters):
            opt.lr = lr_at(i, cfg.pretrain_lr, marks)
            lr_b, hr_b = _sample_batch(pairs, cfg, data_rng.split(i))
            fwd = engine.forward(graph, store, lr_b)
            val, dsr = loss_recon_grad(fwd.output, hr_b)
            parts = LossParts(recon=val)
            total = total_loss(parts, weights)
            _check_finite("pretrain_l1", i, total, parts)
            _, pg = engine.backward(graph, store, fwd, weights.recon * dsr)
            opt.step(store.arrays, pg)
            psnr = _maybe_val(i, iters, cfg,
                              lambda: _val_psnr(graph, store, val_pairs, cfg,
                                                cfg.val_images))
            log.write(i, parts, total, opt.lr, psnr)
    finally:
        log.close()
    out = artifact_path(cfg, "pretrained_g")
    save(store, out)
    write_manifest(cfg, out, "pretrain_l1")
    return {"artifacts": [out], "iters": iters}


def _disc_update(d_graph, d_store, opt_d, hr_b, sr_detached):
    fwd_real = engine.forward(d_graph, d_store, hr_b)
    fwd_fake = engine.forward(d_graph, d_store, sr_detached)
    val, dreal, dfake = loss_disc_grad(fwd_real.output, fwd_fake.output)
    _, pg_r = engine.backward(d_graph, d_store, fwd_real, dreal)
    _, pg_f = engine.backward(d_graph, d_store, fwd_fake, dfake)
    pg = {k: pg_r.get(k, 0) + pg_f.get(k, 0) for k in set(pg_r) | set(pg_f)}
    opt_d.step(d_store.arrays, pg)
    return val


def stage_train_gan(cfg: RunConfig) -> dict:
    g_path = _require(cfg, "pretrained_g", "pretrain")
    pairs = _load_pairs(cfg, "train")
    val_pairs = _load_pairs(cfg, "val")
    g_graph = build_mfanet(Genotype.uniform(cfg.teacher_g_width), cfg.scale,
                           cfg.cfabs_per_mfam)
    g_store = load(g_path)
    d_graph = build_patchgan(cfg.teacher_d_base)
    d_store = init_weights(d_graph, _seed(cfg.seed, 21))
    p_graph, p_store = percep_extractor()
    weights = cfg.stage_weights("train_gan_large")
    iters = cfg.effective(cfg.gan_iters)
    marks = cfg.milestones(cfg.gan_milestones)
    opt_g = Adam(cfg.gan_lr)
    opt_d = Adam(cfg.gan_lr)
    data_rng = Rng(_seed(cfg.seed, 22))
    log = _MetricsLog(cfg, "train_gan_large")
    try:
        for i in range(iters):
            opt_g.lr = opt_d.lr = lr_at(i, cfg.gan_lr, marks)
            lr_b, hr_b = _sample_batch(pairs, cfg, data_rng.split(i))
            fwd_g = engine.forward(g_graph, g_store, lr_b)
            sr = fwd_g.output

            d_val = _disc_update(d_graph, d_store, opt_d, hr_b, sr)

            fwd_d = engine.forward(d_graph, d_store, sr)
            adv, dlogit = loss_adv_g_grad(fwd_d.output)
            d_input_grad, _ = engine.backward(d_graph, d_store, fwd_d,
                                              weights.adv * dlogit)
            rec, d_rec = loss_recon_grad(sr, hr_b)
            per, d_per = loss_percep_grad(sr, hr_b, p_graph, p_store)
            parts = LossParts(recon=rec, percep=per, adv=adv)
            total = total_loss(parts, weights)
            _check_finite("train_gan_large", i, total + d_val, parts)
            dsr = weights.recon * d_rec + weights.percep * d_per + d_input_grad
            _, pg = engine.backward(g_graph, g_store, fwd_g, dsr)
            opt_g.step(g_store.arrays, pg)
            psnr = _maybe_val(i, iters, cfg,
                              lambda: _val_psnr(g_graph, g_store, val_pairs, cfg,
                                                cfg.val_images))
            log.write(i, parts, total, opt_g.lr, psnr)
    finally:
        log.close()
    outs = []
    for name, store, stage in (("teacher_g", g_store, "train_gan_large"),
                               ("teacher_d", d_store, "train_gan_large")):
        path = artifact_path(cfg, name)
        save(store, path)
        write_manifest(cfg, path, stage)
        outs.append(path)
    return {"artifacts": outs, "iters": iters}


def stage_distill(cfg: RunConfig) -> dict:
    tg_path = _require(cfg, "teacher_g", "train-gan")
    td_path = _require(cfg, "teacher_d", "train-gan")
    pairs = _load_pairs(cfg, "train")
    val_pairs = _load_pairs(cfg, "val")

    t_graph = build_mfanet(Genotype.uniform(cfg.teacher_g_width), cfg.scale,
                           cfg.cfabs_per_mfam)
    t_store = load(tg_path)
    td_graph = build_patchgan(cfg.teacher_d_base)
    td_store = load(td_path)

    s_geno = cfg.student_genotype()
    s_graph = build_mfanet(s_geno, cfg.scale, cfg.cfabs_per_mfam)
    s_store = init_weights(s_graph, _seed(cfg.seed, 31), genotype=s_geno)
    sd_graph = build_patchgan(cfg.student_d_base)
    sd_store = init_weights(sd_graph, _seed(cfg.seed, 32))

    g_adapters = DistillAdapters.build(tap_channels(t_graph),
                                       tap_channels(s_graph), _seed(cfg.seed, 33))
    d_adapters = DistillAdapters.build(tap_channels(td_graph),
                                       tap_channels(sd_graph), _seed(cfg.seed, 34))
    p_graph, p_store = percep_extractor()
    weights = cfg.stage_weights("distill_gd")
    iters = cfg.effective(cfg.distill_iters)
    marks = cfg.milestones(cfg.distill_milestones)
    opt_g = Adam(cfg.distill_lr)
    opt_d = Adam(cfg.distill_lr)
    opt_ga = Adam(cfg.distill_lr)
    opt_da = Adam(cfg.distill_lr)
    data_rng = Rng(_seed(cfg.seed, 35))
    log = _MetricsLog(cfg, "distill_gd")
    try:
        for i in range(iters):
            opt_g.lr = opt_d.lr = opt_ga.lr = opt_da.lr = \
                lr_at(i, cfg.distill_lr, marks)
            lr_b, hr_b = _sample_batch(pairs, cfg, data_rng.split(i))
            t_fwd = engine.forward(t_graph, t_store, lr_b)
            s_fwd = engine.forward(s_graph, s_store, lr_b)
            sr = s_fwd.output

            # student discriminator: adversarial BCE plus tap matching on
            # both the real and the generated halves of the batch
            td_real = engine.forward(td_graph, td_store, hr_b).taps
            td_fake = engine.forward(td_graph, td_store, sr).taps
            sd_real = engine.forward(sd_graph, sd_store, hr_b)
            sd_fake = engine.forward(sd_graph, sd_store, sr)
            d_adv, dreal, dfake = loss_disc_grad(sd_real.output, sd_fake.output)
            dd_r, taps_r, pga_r = feature_match_loss_grad(
                td_real, sd_real.taps, DISC_TAPS, d_adapters, cfg.distill_norm)
            dd_f, taps_f, pga_f = feature_match_loss_grad(
                td_fake, sd_fake.taps, DISC_TAPS, d_adapters, cfg.distill_norm)
            dd = 0.5 * (dd_r + dd_f)
            half = 0.5 * weights.distill_d
            _, pg_r = engine.backward(sd_graph, sd_store, sd_real, dreal,
                                      {k: half * v for k, v in taps_r.items()})
            _, pg_f = engine.backward(sd_graph, sd_store, sd_fake, dfake,
                                      {k: half * v for k, v in taps_f.items()})
            pg_d = {k: pg_r.get(k, 0) + pg_f.get(k, 0)
                    for k in set(pg_r) | set(pg_f)}
            opt_d.step(sd_store.arrays, pg_d)
            if d_adapters.params:
                pg_da = {k: half * (pga_r.get(k, 0) + pga_f.get(k, 0))
                         for k in set(pga_r) | set(pga_f)}
                opt_da.step(d_adapters.params, pg_da)

            # student generator: reconstruction + tap matching + perceptual
            # + adversarial through the refreshed student discriminator
            fwd_d = engine.forward(sd_graph, sd_store, sr)
            adv, dlogit = loss_adv_g_grad(fwd_d.output)
            d_input_grad, _ = engine.backward(sd_graph, sd_store, fwd_d,
                                              weights.adv * dlogit)
            rec, d_rec = loss_recon_grad(sr, hr_b)
            per, d_per = loss_percep_grad(sr, hr_b, p_graph, p_store)
            dg, tap_grads, pg_ga = feature_match_loss_grad(
                t_fwd.taps, s_fwd.taps, GEN_TAPS, g_adapters, cfg.distill_norm)
            parts = LossParts(recon=rec, distill_g=dg, distill_d=dd,
                              percep=per, adv=adv)
            total = total_loss(parts, weights)
            _check_finite("distill_gd", i, total + d_adv, parts)
            dsr = weights.recon * d_rec + weights.percep * d_per + d_input_grad
            scaled_taps = {k: weights.distill_g * v for k, v in tap_grads.items()}
            _, pg_g = engine.backward(s_graph, s_store, s_fwd, dsr, scaled_taps)
            opt_g.step(s_store.arrays, pg_g)
            if g_adapters.params:
                opt_ga.step(g_adapters.params,
                            {k: weights.distill_g * v for k, v in pg_ga.items()})

            psnr = _maybe_val(i, iters, cfg,
                              lambda: _val_psnr(s_graph, s_store, val_pairs, cfg,
                                                cfg.val_images))
            log.write(i, parts, total, opt_g.lr, psnr)
    finally:
        log.close()
    outs = []
    for name, store in (("student_g", s_store), ("student_d", sd_store)):
        path = artifact_path(cfg, name)
        save(store, path)
        write_manifest(cfg, path, "distill_gd")
        outs.append(path)
    return {"artifacts": outs, "iters": iters}


def stage_train_supernet(cfg: RunConfig) -> dict:
    sg_path = _require(cfg, "student_g", "distill")
    pairs = _load_pairs(cfg, "train")
    val_pairs = _load_pairs(cfg, "val")
    family = cfg.family()
    super_geno = cfg.student_genotype()
    super_graph = family.build(super_geno)

    store = load(sg_path)
    store.genotype = super_geno
    # importance-sorted channels so that prefix slices keep the strongest
    store = reorder_by_importance(store, super_graph)

    p_graph, p_store = percep_extractor()
    weights = cfg.stage_weights("train_supernet")
    iters = cfg.effective(cfg.supernet_iters)
    marks = cfg.milestones(cfg.supernet_milestones)
    opt = Adam(cfg.supernet_lr)
    data_rng = Rng(_seed(cfg.seed, 41))
    geno_rng = Rng(_seed(cfg.seed, 42))
    graph_cache: dict[Genotype, NetworkGraph] = {}
    log = _MetricsLog(cfg, "train_supernet")
    try:
        for i in range(iters):
            opt.lr = lr_at(i, cfg.supernet_lr, marks)
            lr_b, hr_b = _sample_batch(pairs, cfg, data_rng.split(i))
            g_rng = geno_rng.split(i)
            step_geno = Genotype(tuple(
                g_rng.choice(cfg.choices) for _ in range(GENE_COUNT)))
            if step_geno not in graph_cache:
                graph_cache[step_geno] = family.build(step_geno)
            sub_graph = graph_cache[step_geno]
            sub_store = slice_for_genotype(store, super_geno, step_geno,
                                           family.build)
            fwd = engine.forward(sub_graph, sub_store, lr_b)
            rec, d_rec = loss_recon_grad(fwd.output, hr_b)
            per, d_per = loss_percep_grad(fwd.output, hr_b, p_graph, p_store)
            parts = LossParts(recon=rec, percep=per)
            total = total_loss(parts, weights)
            _check_finite("train_supernet", i, total, parts)
            dsr = weights.recon * d_rec + weights.percep * d_per
            _, pg = engine.backward(sub_graph, sub_store, fwd, dsr)
            opt.step(store.arrays, pg)  # prefix-shaped grads, shared store
            psnr = _maybe_val(i, iters, cfg,
                              lambda: _val_psnr(super_graph, store, val_pairs,
                                                cfg, cfg.val_images))
            log.write(i, parts, total, opt.lr, psnr)
    finally:
        log.close()
    out = artifact_path(cfg, "supernet")
    save(store, out)
    write_manifest(cfg, out, "train_supernet")
    return {"artifacts": [out], "iters": iters}


def run_search(cfg: RunConfig, lut_path: str | None = None) -> Candidate:
    super_path = _require(cfg, "supernet", "train-supernet")
    lut_path = lut_path or artifact_path(cfg, "lut")
    if not os.path.exists(lut_path):
        raise PipelineError(
            f"missing latency table {lut_path}; run 'profile-latency' first")
    if cfg.latency_budget_us is None:
        raise ConfigError("latency_budget_us is required for search")
    if cfg.val_dir is None:
        raise ConfigError("val_dir is required for search")
    lut = latency.LatencyTable.load(lut_path)
    store = load(super_path)
    val_pairs = _load_pairs(cfg, "val")
    family = cfg.family()
    lr_hw = (cfg.patch_hr // cfg.scale, cfg.patch_hr // cfg.scale)
    scfg = SearchConfig(latency_budget_us=cfg.latency_budget_us,
                        population=cfg.search_population,
                        generations=cfg.search_generations,
                        mutation_rate=cfg.search_mutation_rate,
                        elite_k=cfg.search_elite_k,
                        seed=cfg.search_seed)
    evaluator = FitnessEvaluator(family, store, val_pairs)
    with threadpool_limits(limits=1):
        best, history = evolutionary_search(scfg, store, val_pairs, lut, lr_hw,
                                            family, evaluator)
    hist_path = os.path.join(cfg.run_dir, "logs", "search.jsonl")
    os.makedirs(os.path.dirname(hist_path), exist_ok=True)
    with open(hist_path, "w") as f:
        for rec in history:
            f.write(json.dumps(rec) + "\n")
    out = artifact_path(cfg, "genotype")
    with open(out, "w") as f:
        json.dump({"genes": list(best.genotype.genes),
                   "fitness_psnr_db": best.fitness,
                   "latency_us": best.latency_us,
                   "budget_us": cfg.latency_budget_us}, f, indent=2)
        f.write("\n")
    write_manifest(cfg, out, "search")
    return best


def stage_finetune(cfg: RunConfig) -> dict:
    super_path = _require(cfg, "supernet", "train-supernet")
    geno_path = _require(cfg, "genotype", "search")
    sd_path = _require(cfg, "student_d", "distill")
    pairs = _load_pairs(cfg, "train")
    val_pairs = _load_pairs(cfg, "val")
    family = cfg.family()

    with open(geno_path) as f:
        geno = Genotype(tuple(json.load(f)["genes"]))
    super_store = load(super_path)
    g_graph = family.build(geno)
    g_store = slice_for_genotype(super_store, super_store.genotype, geno,
                                 family.build)

    # anchors: the shared-store teacher for tap matching, and a frozen
    # copy of the distilled discriminator for its own tap matching
    t_graph = family.build(super_store.genotype)
    t_store = super_store
    d_graph = build_patchgan(cfg.student_d_base)
    d_store = load(sd_path)
    d_anchor = d_store.copy()

    g_adapters = DistillAdapters.build(tap_channels(t_graph),
                                       tap_channels(g_graph), _seed(cfg.seed, 51))
    p_graph, p_store = percep_extractor()
    weights = cfg.stage_weights("finetune")
    iters = cfg.effective(cfg.finetune_iters)
    marks = cfg.milestones(cfg.finetune_milestones)
    opt_g = Adam(cfg.finetune_lr)
    opt_d = Adam(cfg.finetune_lr)
    opt_ga = Adam(cfg.finetune_lr)
    data_rng = Rng(_seed(cfg.seed, 52))
    log = _MetricsLog(cfg, "finetune")
    try:
        for i in range(iters):
            opt_g.lr = opt_d.lr = opt_ga.lr = lr_at(i, cfg.finetune_lr, marks)
            lr_b, hr_b = _sample_batch(pairs, cfg, data_rng.split(i))
            fwd_g = engine.forward(g_graph, g_store, lr_b)
            sr = fwd_g.output

            # discriminator update, kept close to its distilled anchor
            anchor_real = engine.forward(d_graph, d_anchor, hr_b).taps
            anchor_fake = engine.forward(d_graph, d_anchor, sr).taps
            d_real = engine.forward(d_graph, d_store, hr_b)
            d_fake = engine.forward(d_graph, d_store, sr)
            d_adv, dreal, dfake = loss_disc_grad(d_real.output, d_fake.output)
            dd_r, taps_r, _ = feature_match_loss_grad(
                anchor_real, d_real.taps, DISC_TAPS, None, cfg.distill_norm)
            dd_f, taps_f, _ = feature_match_loss_grad(
                anchor_fake, d_fake.taps, DISC_TAPS, None, cfg.distill_norm)
            dd = 0.5 * (dd_r + dd_f)
            half = 0.5 * weights.distill_d
            _, pg_r = engine.backward(d_graph, d_store, d_real, dreal,
                                      {k: half * v for k, v in taps_r.items()})
            _, pg_f = engine.backward(d_graph, d_store, d_fake, dfake,
                                      {k: half * v for k, v in taps_f.items()})
            pg_d = {k: pg_r.get(k, 0) + pg_f.get(k, 0)
                    for k in set(pg_r) | set(pg_f)}
            opt_d.step(d_store.arrays, pg_d)

            t_fwd = engine.forward(t_graph, t_store, lr_b)
            fwd_d = engine.forward(d_graph, d_store, sr)
            adv, dlogit = loss_adv_g_grad(fwd_d.output)
            d_input_grad, _ = engine.backward(d_graph, d_store, fwd_d,
                                              weights.adv * dlogit)
            rec, d_rec = loss_recon_grad(sr, hr_b)
            per, d_per = loss_percep_grad(sr, hr_b, p_graph, p_store)
            dg, tap_grads, pg_ga = feature_match_loss_grad(
                t_fwd.taps, fwd_g.taps, GEN_TAPS, g_adapters, cfg.distill_norm)
            parts = LossParts(recon=rec, distill_g=dg, distill_d=dd,
                              percep=per, adv=adv)
            total = total_loss(parts, weights)
            _check_finite("finetune", i, total + d_adv, parts)
            dsr = weights.recon * d_rec + weights.percep * d_per + d_input_grad
            scaled = {k: weights.distill_g * v for k, v in tap_grads.items()}
            _, pg_g = engine.backward(g_graph, g_store, fwd_g, dsr, scaled)
            opt_g.step(g_store.arrays, pg_g)
            if g_adapters.params:
                opt_ga.step(g_adapters.params,
                            {k: weights.distill_g * v for k, v in pg_ga.items()})
            psnr = _maybe_val(i, iters, cfg,
                              lambda: _val_psnr(g_graph, g_store, val_pairs, cfg,
                                                cfg.val_images))
            log.write(i, parts, total, opt_g.lr, psnr)
    finally:
        log.close()
    out = artifact_path(cfg, "final_g")
    save(g_store, out)
    write_manifest(cfg, out, "finetune")
    return {"artifacts": [out], "iters": iters}


_STAGE_FNS = {"pretrain_l1": stage_pretrain,
              "train_gan_large": stage_train_gan,
              "distill_gd": stage_distill,
              "train_supernet": stage_train_supernet,
              "finetune": stage_finetune}


def run_stage(stage: str, cfg: RunConfig) -> dict:
    """Execute one training stage under the run lock, single-threaded."""
    if stage not in _STAGE_FNS:
        raise ConfigError(f"unknown stage {stage!r}; choose from {STAGES}")
    _prepare_dirs(cfg)
    with _run_lock(cfg), threadpool_limits(limits=1):
        return _STAGE_FNS[stage](cfg)


# ---------------------------------------------------------------------------
# evaluation / export

def evaluate(cfg: RunConfig, which: str = "val",
             weights_path: str | None = None):
    """Per-image PSNR-Y of the final (or given) generator vs bicubic.

    Returns a list of rows: {image, psnr_model, psnr_bicubic}.
    """
    path = weights_path or _require(cfg, "final_g", "finetune")
    store = load(path)
    if store.genotype is None:
        raise PipelineError(f"weights at {path} carry no genotype tag")
    graph = cfg.family().build(store.genotype)
    pairs = _load_pairs(cfg, which)
    if not pairs:
        raise PipelineError(f"no dataset for {which!r} evaluation")
    border = cfg.scale if cfg.val_border is None else cfg.val_border
    rows = []
    for i, (lr, hr) in enumerate(pairs):
        sr = quantize8(np.clip(engine.predict(graph, store, lr[None])[0], 0, 1))
        base = quantize8(upscale_bicubic(lr, cfg.scale))
        rows.append({"image": f"{i:04d}",
                     "psnr_model": psnr_y(sr, hr, border=border),
                     "psnr_bicubic": psnr_y(base, hr, border=border)})
    return rows


def export(cfg: RunConfig, out_dir: str) -> dict:
    """Copy the final weights and write the matching graph JSON."""
    path = _require(cfg, "final_g", "finetune")
    store = load(path)
    if store.genotype is None:
        raise PipelineError(f"weights at {path} carry no genotype tag")
    graph = cfg.family().build(store.genotype)
    os.makedirs(out_dir, exist_ok=True)
    wpath = os.path.join(out_dir, "generator.mfaw")
    gpath = os.path.join(out_dir, "generator.graph.json")
    save(store, wpath)
    with open(gpath, "w") as f:
        f.write(graph.to_json() + "\n")
    write_manifest(cfg, wpath, "export")
    return {"weights": wpath, "graph": gpath,
            "genotype": list(store.genotype.genes)}
