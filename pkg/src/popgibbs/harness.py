"""Experiment orchestration: corpus generation, training loops, evaluation
of every method under a shared budget, CSV metrics, and checkpoints.

Runs are deterministic given (config, seed): the sampling generator's state
is checkpointed, instance order is a pure function of (seed, epoch), and
resuming from a checkpoint reproduces the uninterrupted run bit for bit.
Two scale profiles exist: `paper` mirrors the published training settings;
`desk` is small enough for a workstation and is what the acceptance suite
exercises (absolute metric values are corpus-dependent, so comparisons
bind to orderings and trends).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import corpus as corpus_io
from . import dmm as dmm_mod
from . import gmm as gmm_mod
from .estimators import GradSink
from .smc import LatentState, apg_run, normalized_weights

METHODS = ("apg", "rws", "bpg", "hmc-rws", "gibbs")

TRAIN_HEADER = ["step", "model", "method", "K", "L", "seed", "logjoint",
                "ess_over_l", "kl_global", "kl_local", "wall_ms"]
EVAL_HEADER = ["model", "method", "instance", "seed", "K", "L", "lf", "sweep",
               "logjoint", "ess_over_l", "recon_mse", "logjoint_evals",
               "wall_ms"]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericAbort(RuntimeError):
    """Training hit non-finite numbers (CLI exit code 3)."""


@dataclass
class ExperimentConfig:
    model: str = "gmm"
    method: str = "apg"
    sweeps: int = 5
    particles: int = 10
    batch: int = 20
    lr: float = 2.5e-4
    steps: int = 200_000
    seed: int = 0
    corpus: str = ""
    test_corpus: str = ""
    out_dir: str = "runs/out"
    scale: str = "desk"
    n_clusters: int = 0          # 0 = model default (gmm 3, dmm 4)
    alpha0: float = 2.0
    beta0: float = 2.0
    blocks: str = "split"
    resample: str = "always"
    hmc_leapfrog: int = 5
    hmc_step_size: float = 0.05
    hmc_adapt: bool = True
    checkpoint_every: int = 5000
    eval_every: int = 500

    def validate(self) -> "ExperimentConfig":
        if self.model not in ("gmm", "dmm"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method == "gibbs" and self.model != "gmm":
            raise ConfigError("exact conditionals are only available for gmm")
        if self.sweeps < 1 or self.particles < 1 or self.batch < 1:
            raise ConfigError("sweeps, particles and batch must be >= 1")
        if self.steps < 0 or self.lr <= 0:
            raise ConfigError("need steps >= 0 and lr > 0")
        if self.blocks not in ("split", "joint"):
            raise ConfigError(f"unknown block strategy {self.blocks!r}")
        if self.resample not in ("always", "never", "ess"):
            raise ConfigError(f"unknown resample mode {self.resample!r}")
        if self.hmc_leapfrog < 1 or self.hmc_step_size <= 0:
            raise ConfigError("need hmc_leapfrog >= 1 and hmc_step_size > 0")
        return self

    @property
    def budget(self) -> int:
        """K * L sampling budget logged with every run."""
        return self.sweeps * self.particles


def load_config(path: str, overrides=()) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return make_config(raw, overrides)


def make_config(raw: dict, overrides=()) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        typ = fields[key].type
        if typ in ("int", int):
            cfg[key] = int(value)
        elif typ in ("float", float):
            cfg[key] = float(value)
        elif typ in ("bool", bool):
            cfg[key] = value.lower() in ("1", "true", "yes")
        else:
            cfg[key] = value
    try:
        out = ExperimentConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return out.validate()


def desk_profile(model: str) -> dict:
    """Reduced-scale settings that finish on one workstation core."""
    if model == "gmm":
        return {"model": "gmm", "scale": "desk", "steps": 20_000, "batch": 10,
                "sweeps": 5, "particles": 10, "lr": 2.5e-4,
                "eval_every": 500, "checkpoint_every": 5000}
    return {"model": "dmm", "scale": "desk", "steps": 10_000, "batch": 10,
            "sweeps": 4, "particles": 10, "lr": 1e-3,
            "eval_every": 500, "checkpoint_every": 5000}


def paper_profile(model: str) -> dict:
    """Published training settings (full scale)."""
    if model == "gmm":
        return {"model": "gmm", "scale": "paper", "steps": 200_000,
                "batch": 20, "sweeps": 5, "particles": 10, "lr": 2.5e-4}
    return {"model": "dmm", "scale": "paper", "steps": 300_000, "batch": 20,
            "sweeps": 8, "particles": 10, "lr": 1e-4, "n_clusters": 4}


# ---------------------------------------------------------------------------
# model bundles
# ---------------------------------------------------------------------------


@dataclass
class Bundle:
    """Everything needed to run one model: stores, model, encoder, kernels."""
    model: object
    encoder: object
    kernels: dict
    phi: ad.ParamStore
    theta: ad.ParamStore | None
    hyper: object


def cluster_count(cfg: ExperimentConfig) -> int:
    if cfg.n_clusters > 0:
        return cfg.n_clusters
    return 3 if cfg.model == "gmm" else 4


def build_bundle(cfg: ExperimentConfig, phi=None, theta=None) -> Bundle:
    if cfg.model == "gmm":
        hyper = gmm_mod.GmmHyper(n_clusters=cluster_count(cfg),
                                 alpha0=cfg.alpha0, beta0=cfg.beta0)
        phi = phi if phi is not None else ad.ParamStore(
            np.random.default_rng([cfg.seed, 101]))
        gmm_mod.init_network_params(phi, hyper)
        if cfg.blocks == "joint":
            model = gmm_mod.JointGmmModel(hyper)
            kernels = {"joint": gmm_mod.JointKernel(phi, hyper)}
        else:
            model = gmm_mod.GmmModel(hyper)
            kernels = {"globals": gmm_mod.NeuralGlobalKernel(phi, hyper),
                       "assign": gmm_mod.NeuralLocalKernel(phi, hyper)}
        encoder = gmm_mod.NeuralEncoder(phi, hyper)
        return Bundle(model, encoder, kernels, phi, None, hyper)
    hyper = dmm_mod.DmmHyper(n_clusters=cluster_count(cfg))
    phi = phi if phi is not None else ad.ParamStore(
        np.random.default_rng([cfg.seed, 101]))
    theta = theta if theta is not None else ad.ParamStore(
        np.random.default_rng([cfg.seed, 202]))
    dmm_mod.init_phi(phi, hyper)
    model = dmm_mod.DmmModel(hyper, theta)
    kernels = {"centers": dmm_mod.CentersKernel(phi, hyper),
               "locals": dmm_mod.LocalsKernel(phi, hyper)}
    encoder = dmm_mod.NeuralEncoder(phi, hyper)
    return Bundle(model, encoder, kernels, phi, theta, hyper)


def generate(model: str, n_instances: int, n_points: int, n_clusters: int,
             seed: int, out_base: str, alpha0: float = 2.0, beta0: float = 2.0):
    """Seeded corpus generation + the corpus file pair."""
    rng = np.random.default_rng(seed)
    if model == "gmm":
        hyper = gmm_mod.GmmHyper(n_clusters=n_clusters, alpha0=alpha0,
                                 beta0=beta0)
        x, truth = gmm_mod.generate_corpus(n_instances, n_clusters, n_points,
                                           hyper, rng)
        sidecar = {"model": "gmm", "seed": seed, "n_clusters": n_clusters,
                   "hyper": dataclasses.asdict(hyper),
                   "overlap_flagged": int(gmm_mod.overlap_flags(
                       truth["mu"], truth["tau"]).sum())}
    elif model == "dmm":
        hyper = dmm_mod.DmmHyper(n_clusters=n_clusters)
        x, truth = dmm_mod.generate_corpus(n_instances, n_clusters, n_points,
                                           hyper, rng)
        sidecar = {"model": "dmm", "seed": seed, "n_clusters": n_clusters,
                   "hyper": dataclasses.asdict(hyper),
                   "generator": "fixed ring decoder g*(h) = r (cos 2pi h, sin 2pi h)"}
    else:
        raise ConfigError(f"unknown model {model!r}")
    corpus_io.write_corpus(out_base, x, sidecar, truth)
    return x, truth


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(base: str, step: int, cfg: ExperimentConfig,
                    phi: ad.ParamStore, theta: ad.ParamStore | None,
                    rng: np.random.Generator) -> None:
    extra = {"step": step, "model": cfg.model,
             "config": dataclasses.asdict(cfg),
             "rng_state": json.loads(json.dumps(rng.bit_generator.state))}
    phi.save(base + ".phi", extra=extra)
    if theta is not None:
        theta.save(base + ".theta", extra={"step": step})


def load_checkpoint(base: str):
    phi, extra = ad.ParamStore.load(base + ".phi")
    theta = None
    if os.path.exists(base + ".theta.manifest.json"):
        theta, _ = ad.ParamStore.load(base + ".theta")
    return phi, theta, extra


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 777, epoch]).permutation(n)


def run_training(cfg: ExperimentConfig, resume: str | None = None,
                 log=print) -> str:
    """Train per the config; returns the final checkpoint base path.

    Writes `train.csv`, periodic checkpoints, a frozen resolved config, and
    on numeric failure an `abort.json` diagnostic dump.
    """
    cfg.validate()
    if cfg.model == "dmm" and cfg.blocks == "joint":
        raise ConfigError("joint-block mode is a gmm study")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=1, sort_keys=True)
    x, meta, truth = corpus_io.read_corpus(cfg.corpus)
    n_instances = x.shape[0]
    start_step = 0
    if resume is not None:
        phi, theta, extra = load_checkpoint(resume)
        bundle = build_bundle(cfg, phi=phi, theta=theta)
        rng = np.random.default_rng(cfg.seed)
        rng.bit_generator.state = extra["rng_state"]
        start_step = extra["step"]
    else:
        bundle = build_bundle(cfg)
        rng = np.random.default_rng([cfg.seed, 555])

    eval_slice = slice(0, min(64, n_instances))
    eval_state = None
    if cfg.model == "gmm" and truth is not None:
        eval_state = LatentState({
            "mu": truth["mu"][eval_slice][:, None],
            "tau": truth["tau"][eval_slice][:, None],
            "c": truth["c"][eval_slice][:, None]})

    csv_path = os.path.join(cfg.out_dir, "train.csv")
    mode = "a" if resume is not None and os.path.exists(csv_path) else "w"
    ckpt_base = os.path.join(cfg.out_dir, "ckpt")
    per_epoch = max(1, n_instances // cfg.batch)
    t0 = time.time()
    with open(csv_path, mode, newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(TRAIN_HEADER)
        if cfg.steps == 0 or start_step == 0:
            save_checkpoint(ckpt_base + "_init", 0, cfg, bundle.phi,
                            bundle.theta, rng)
        try:
            for step in range(start_step, cfg.steps):
                epoch, slot = divmod(step, per_epoch)
                order = _epoch_order(cfg.seed, epoch, n_instances)
                idx = order[slot * cfg.batch:(slot + 1) * cfg.batch]
                if idx.size == 0:
                    idx = order[:cfg.batch]
                sink = GradSink(bundle.phi, bundle.theta)
                _, metrics = apg_run(
                    x[idx], bundle.model, bundle.encoder, bundle.kernels,
                    cfg.sweeps, cfg.particles, rng, grad_sink=sink,
                    resample=cfg.resample)
                bundle.phi.adam_step(cfg.lr)
                if bundle.theta is not None:
                    bundle.theta.adam_step(cfg.lr)
                if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
                    last = metrics[-1]
                    kl_g = kl_l = ""
                    if eval_state is not None:
                        kg, kl = gmm_mod.kl_to_exact(x[eval_slice], eval_state,
                                                     bundle.phi, bundle.hyper)
                        kl_g, kl_l = f"{np.mean(kg):.6f}", f"{np.mean(kl):.6f}"
                    writer.writerow([
                        step + 1, cfg.model, cfg.method, cfg.sweeps,
                        cfg.particles, cfg.seed,
                        f"{last['log_joint'].mean():.4f}",
                        f"{(last['ess'].mean() / cfg.particles):.6f}",
                        kl_g, kl_l,
                        f"{(time.time() - t0) * 1000.0 / (step + 1 - start_step):.2f}"])
                    f.flush()
                    log(f"step {step + 1}/{cfg.steps} logjoint="
                        f"{last['log_joint'].mean():.1f} kl=({kl_g},{kl_l})")
                if (step + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(ckpt_base, step + 1, cfg, bundle.phi,
                                    bundle.theta, rng)
        except (ad.GradientError, FloatingPointError) as exc:
            dump = {"error": str(exc), "step": step,
                    "params": {n: float(np.abs(bundle.phi.get(n)).max())
                               for n in bundle.phi.names()}}
            with open(os.path.join(cfg.out_dir, "abort.json"), "w",
                      encoding="utf-8") as g:
                json.dump(dump, g, indent=1)
            raise NumericAbort(str(exc)) from exc
    save_checkpoint(ckpt_base, cfg.steps, cfg, bundle.phi, bundle.theta, rng)
    return ckpt_base


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def run_eval(cfg: ExperimentConfig, checkpoint: str | None, out_path: str,
             n_instances: int | None = None, chunk: int = 25,
             dump_latents: int = 0, log=print) -> str:
    """Evaluate one method on the test corpus; one CSV row per
    (instance, sweep); budget accounting included."""
    cfg.validate()
    x, meta, _ = corpus_io.read_corpus(cfg.test_corpus or cfg.corpus)
    if n_instances is not None:
        x = x[:n_instances]
    phi = theta = None
    if checkpoint is not None:
        phi, theta, extra = load_checkpoint(checkpoint)
        if extra.get("model", cfg.model) != cfg.model:
            raise ConfigError(
                f"checkpoint manifest is for model {extra.get('model')!r}, "
                f"config wants {cfg.model!r}")
    elif cfg.method in ("apg", "rws", "hmc-rws"):
        raise ConfigError(f"method {cfg.method!r} needs a trained checkpoint")
    bundle = build_bundle(cfg, phi=phi, theta=theta)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 999])
    dumps = []
    n_part_eff = cfg.budget if cfg.method == "rws" else cfg.particles
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(EVAL_HEADER)
        for lo in range(0, x.shape[0], chunk):
            xc = x[lo:lo + chunk]
            t0 = time.time()
            before = bundle.model.eval_rows
            system, metrics = _run_method(cfg, bundle, xc, rng,
                                          trained=checkpoint is not None)
            wall = (time.time() - t0) * 1000.0 / xc.shape[0]
            evals = (bundle.model.eval_rows - before) / xc.shape[0]
            for m in metrics:
                for i in range(xc.shape[0]):
                    writer.writerow([
                        cfg.model, cfg.method, lo + i, cfg.seed, cfg.sweeps,
                        n_part_eff,
                        cfg.hmc_leapfrog if cfg.method == "hmc-rws" else "",
                        m["sweep"], f"{m['log_joint'][i]:.4f}",
                        f"{m['ess'][i] / n_part_eff:.6f}",
                        f"{m['recon'][i]:.6f}" if "recon" in m else "",
                        f"{evals:.1f}", f"{wall:.2f}"])
            if dump_latents and lo == 0:
                dumps = _latent_dumps(cfg, system, min(dump_latents, xc.shape[0]),
                                      bundle.theta)
    if dumps:
        with open(out_path + ".latents.json", "w", encoding="utf-8") as f:
            json.dump(dumps, f)
    log(f"eval written to {out_path}")
    return out_path


def recon_metric(xc, theta_store):
    """Per-sweep weighted reconstruction error callback for dmm runs."""
    def compute(system):
        per_particle = dmm_mod.recon_mse(xc, system.state, theta_store)
        wbar = normalized_weights(system.log_weight)
        return {"recon": np.sum(wbar * per_particle, axis=-1)}
    return compute


def _latent_dumps(cfg, system, count, theta=None):
    wbar = normalized_weights(system.log_weight)
    best = np.argmax(wbar, axis=-1)
    ring = None
    if cfg.model == "dmm" and theta is not None:
        # decoded embedding curve for the scatter overlay
        grid = np.linspace(1e-3, 1 - 1e-3, 120)
        ring = np.asarray(dmm_mod.decoder_forward(theta, grid)).tolist()
    out = []
    for i in range(count):
        rec = {"model": cfg.model}
        for key, arr in system.state.values.items():
            rec[key] = np.asarray(arr[i, best[i]]).tolist()
        if ring is not None:
            rec["ring"] = ring
        out.append(rec)
    return out


def _run_method(cfg: ExperimentConfig, bundle: Bundle, xc, rng,
                trained: bool = True):
    extra = recon_metric(xc, bundle.theta) if cfg.model == "dmm" else None
    if cfg.method == "apg":
        return apg_run(xc, bundle.model, bundle.encoder, bundle.kernels,
                       cfg.sweeps, cfg.particles, rng, resample=cfg.resample,
                       extra_metric=extra)
    if cfg.method == "rws":
        # matched budget: K * L one-shot particles
        return apg_run(xc, bundle.model, bundle.encoder, {}, 1, cfg.budget,
                       rng, extra_metric=extra)
    if cfg.method == "bpg":
        if cfg.model == "gmm":
            encoder = gmm_mod.PriorEncoder(bundle.hyper)
            kernels = {"globals": gmm_mod.PriorGlobalKernel(bundle.hyper),
                       "assign": gmm_mod.PriorLocalKernel(bundle.hyper)}
        else:
            encoder = dmm_mod.PriorEncoder(bundle.hyper)
            kernels = {"centers": dmm_mod.PriorCentersKernel(bundle.hyper),
                       "locals": dmm_mod.PriorLocalsKernel(bundle.hyper)}
        return apg_run(xc, bundle.model, encoder, kernels, cfg.sweeps,
                       cfg.particles, rng, resample=cfg.resample,
                       extra_metric=extra)
    if cfg.method == "gibbs":
        kernels = {"globals": gmm_mod.GibbsGlobalKernel(bundle.hyper),
                   "assign": gmm_mod.GibbsLocalKernel(bundle.hyper)}
        encoder = bundle.encoder if trained else gmm_mod.PriorEncoder(bundle.hyper)
        return apg_run(xc, bundle.model, encoder, kernels, cfg.sweeps,
                       cfg.particles, rng, resample=cfg.resample)
    if cfg.method == "hmc-rws":
        if cfg.model == "gmm":
            system, metrics, _diag = gmm_mod.hmc_rws_baseline(
                xc, bundle.phi, bundle.hyper, cfg.sweeps, cfg.particles,
                cfg.hmc_leapfrog, rng, model=bundle.model,
                step_size=cfg.hmc_step_size, adapt=cfg.hmc_adapt)
        else:
            system, metrics, _diag = dmm_mod.hmc_rws_baseline(
                xc, bundle.phi, bundle.theta, bundle.hyper, cfg.sweeps,
                cfg.particles, cfg.hmc_leapfrog, rng, model=bundle.model,
                step_size=cfg.hmc_step_size, adapt=cfg.hmc_adapt)
        if extra is not None:
            metrics[-1].update(extra(system))
        return system, metrics
    raise ConfigError(f"unknown method {cfg.method!r}")
