"""Round-robin contrastive training over (hub, spoke) modality pairs.

One optimizer step trains one pair: encode both sides, take symmetric InfoNCE
(optionally mixed with an L2 regression term), backprop by hand, clip the
global gradient norm, and apply AdamW to the spoke encoder, the hub encoder
(unless frozen), and the log-temperature (when learnable).

Small pairs are balanced by sample replication: each pair draws its batches
from a fixed pre-generated pool sized so the pool cycles replication_factor
times per epoch. Batching is pure pool indexing driven by the global step
counter, so a run resumed from a checkpoint is step-identical to an
uninterrupted one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contrastive import TemperatureParam, l2_regression_loss, symmetric_info_nce
from .encoders import EncoderArch, EncoderParams, encode, encode_backward, init_encoder
from .world import WorldSpec, sample_training_batch, stream_rng

CHECKPOINT_FORMAT_VERSION = 1


class TrainerError(RuntimeError):
    """Raised on invalid training configs, divergence, or bad checkpoints."""


@dataclass
class PairConfig:
    """One (hub, spoke) training pair and its per-pair knobs."""

    spoke: str
    batch_size: int = 64
    temperature: TemperatureParam = field(
        default_factory=lambda: TemperatureParam(mode="learnable", value=0.07)
    )
    replication_factor: int = 1
    infonce_weight: float = 1.0
    l2_weight: float = 0.0
    aligned: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainerError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.replication_factor < 1:
            raise TrainerError(f"replication_factor must be >= 1, got {self.replication_factor}")
        if self.infonce_weight < 0 or self.l2_weight < 0:
            raise TrainerError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return {
            "spoke": self.spoke,
            "batch_size": self.batch_size,
            "temperature": self.temperature.to_dict(),
            "replication_factor": self.replication_factor,
            "infonce_weight": self.infonce_weight,
            "l2_weight": self.l2_weight,
            "aligned": self.aligned,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairConfig":
        d = dict(d)
        d["temperature"] = TemperatureParam.from_dict(d["temperature"])
        return cls(**d)


@dataclass
class TrainConfig:
    pairs: list[PairConfig]
    epochs: int = 1
    steps_per_epoch: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip_norm: float = 1.0
    hub_frozen: bool = False
    warmup_epochs: float = 1.0
    adam_eps: float = 1e-8
    shared_temperature: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.pairs:
            raise TrainerError("at least one training pair is required")
        spokes = [p.spoke for p in self.pairs]
        if len(set(spokes)) != len(spokes):
            raise TrainerError("pair spokes must be unique")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise TrainerError("epochs must be >= 0 and steps_per_epoch >= 1")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise TrainerError("weight_decay must be non-negative")
        if self.grad_clip_norm <= 0:
            raise TrainerError("grad_clip_norm must be positive")
        if self.warmup_epochs < 0:
            raise TrainerError("warmup_epochs must be non-negative")
        self.betas = (float(self.betas[0]), float(self.betas[1]))
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise TrainerError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "pairs": [p.to_dict() for p in self.pairs],
            "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "grad_clip_norm": self.grad_clip_norm,
            "hub_frozen": self.hub_frozen,
            "warmup_epochs": self.warmup_epochs,
            "adam_eps": self.adam_eps,
            "shared_temperature": self.shared_temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["pairs"] = [PairConfig.from_dict(p) for p in d["pairs"]]
        d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class AdamMoments:
    """First/second moment buffers for one encoder; t counts applied updates."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


@dataclass
class ScalarMoments:
    """AdamW state for a single scalar parameter (the log-temperature)."""

    m: float = 0.0
    v: float = 0.0
    t: int = 0


@dataclass
class LossRecord:
    step: int
    pair: str
    loss: float
    tau: float


@dataclass
class TrainState:
    """Everything mutable about a run: parameters, optimizer buffers, history."""

    encoders: dict[str, EncoderParams]
    moments: dict[str, AdamMoments]
    temperatures: dict[str, TemperatureParam]
    tau_moments: dict[str, ScalarMoments]
    step: int = 0
    loss_history: list[LossRecord] = field(default_factory=list)


_SHARED_TAU_KEY = "__shared__"


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    moments: AdamMoments,
    lr: float,
    betas: tuple[float, float],
    weight_decay: float,
    step: int,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamMoments]:
    """One AdamW update with bias correction and decoupled weight decay.

    `step` is the 1-based count of updates applied to these buffers, used for
    bias correction. Inputs are not mutated; non-finite gradients reject the
    whole step.
    """
    if lr <= 0:
        raise TrainerError(f"learning rate must be positive, got {lr}")
    if step < 1:
        raise TrainerError(f"step must be >= 1, got {step}")
    if not (len(params) == len(grads) == len(moments.m) == len(moments.v)):
        raise TrainerError("params, grads, and moment buffers must have equal length")
    b1, b2 = betas
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, moments.m, moments.v):
        if p.shape != g.shape:
            raise TrainerError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainerError("non-finite gradient; step rejected")
        m_next = b1 * m + (1.0 - b1) * g
        v_next = b2 * v + (1.0 - b2) * g * g
        m_hat = m_next / (1.0 - b1**step)
        v_hat = v_next / (1.0 - b2**step)
        p_next = p * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_params.append(p_next)
        new_m.append(m_next)
        new_v.append(v_next)
    return new_params, AdamMoments(m=new_m, v=new_v, t=step)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds it."""
    if max_norm <= 0:
        raise TrainerError(f"max_norm must be positive, got {max_norm}")
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        return [g * scale for g in grads]
    return list(grads)


def encoder_init_seed(seed: int, name: str) -> int:
    """Per-modality initialization seed derived from the run seed."""
    return int(stream_rng(seed, f"train/init/{name}").integers(0, 2**31 - 1))


def init_train_state(
    world: WorldSpec,
    archs: dict[str, EncoderArch],
    config: TrainConfig,
    hub_params: EncoderParams | None = None,
) -> TrainState:
    """Fresh encoders, zero optimizer buffers, per-pair (or shared) temperatures.

    `hub_params` substitutes an externally supplied hub encoder (used to
    measure a pretrained hub's representation quality against frozen weights).
    """
    hub_name = world.hub.name
    if hub_name not in archs:
        raise TrainerError(f"missing arch for hub modality {hub_name!r}")
    embed_dims = {a.embed_dim for a in archs.values()}
    if len(embed_dims) != 1:
        raise TrainerError(f"all encoders must share one embed_dim, got {sorted(embed_dims)}")
    for pc in config.pairs:
        if pc.spoke == hub_name:
            raise TrainerError("training pairs must pair the hub with a non-hub spoke")
        if pc.spoke not in archs:
            raise TrainerError(f"missing arch for spoke {pc.spoke!r}")
        world.observer(pc.spoke)

    encoders: dict[str, EncoderParams] = {}
    moments: dict[str, AdamMoments] = {}
    for name, arch in archs.items():
        obs_dim = world.observer(name).obs_dim
        if arch.input_dim != obs_dim:
            raise TrainerError(
                f"arch input_dim {arch.input_dim} does not match {name!r} obs dim {obs_dim}"
            )
        encoders[name] = init_encoder(arch, encoder_init_seed(config.seed, name))
    if hub_params is not None:
        if hub_params.arch.input_dim != world.observer(hub_name).obs_dim:
            raise TrainerError("supplied hub encoder does not match the world's hub obs dim")
        if hub_params.arch.embed_dim != next(iter(embed_dims)):
            raise TrainerError("supplied hub encoder embed_dim does not match the other encoders")
        encoders[hub_name] = hub_params.copy()
    encoders[hub_name].frozen = config.hub_frozen
    for name, enc in encoders.items():
        moments[name] = AdamMoments(
            m=[np.zeros_like(a) for a in enc.arrays()],
            v=[np.zeros_like(a) for a in enc.arrays()],
        )

    temperatures: dict[str, TemperatureParam] = {}
    tau_moments: dict[str, ScalarMoments] = {}
    if config.shared_temperature:
        shared = TemperatureParam.from_dict(config.pairs[0].temperature.to_dict())
        for pc in config.pairs:
            temperatures[pc.spoke] = shared
        tau_moments[_SHARED_TAU_KEY] = ScalarMoments()
    else:
        for pc in config.pairs:
            temperatures[pc.spoke] = TemperatureParam.from_dict(pc.temperature.to_dict())
            tau_moments[pc.spoke] = ScalarMoments()
    return TrainState(
        encoders=encoders, moments=moments, temperatures=temperatures, tau_moments=tau_moments
    )


def _build_pools(world: WorldSpec, config: TrainConfig) -> dict[str, object]:
    """Pre-generate each pair's sample pool (label-stripped)."""
    num_pairs = len(config.pairs)
    steps_per_pair = -(-config.steps_per_epoch // num_pairs)
    pools = {}
    for pc in config.pairs:
        per_epoch = steps_per_pair * pc.batch_size
        pool_n = max(1, -(-per_epoch // pc.replication_factor))
        rng = world.stream(f"train/{config.seed}/pool/{pc.spoke}")
        pools[pc.spoke] = sample_training_batch(world, pc.spoke, pool_n, rng, aligned=pc.aligned)
    return pools


def _write_back(enc: EncoderParams, arrays: list[np.ndarray]) -> None:
    for i in range(len(enc.weights)):
        enc.weights[i] = arrays[2 * i]
        enc.biases[i] = arrays[2 * i + 1]


def train_run(
    world: WorldSpec,
    archs: dict[str, EncoderArch],
    config: TrainConfig,
    state: TrainState | None = None,
    max_steps: int | None = None,
) -> tuple[TrainState, dict]:
    """Run (or resume) training; returns the final state and a loss summary.

    Passing a checkpointed `state` continues exactly where it left off;
    `max_steps` caps how many additional steps this call executes.
    """
    if state is None:
        state = init_train_state(world, archs, config)
    else:
        for name, arch in archs.items():
            if name not in state.encoders:
                raise TrainerError(f"checkpoint is missing encoder {name!r}")
            if state.encoders[name].arch != arch:
                raise TrainerError(f"checkpoint arch mismatch for encoder {name!r}")
    num_pairs = len(config.pairs)
    total_steps = config.epochs * config.steps_per_epoch
    target = total_steps if max_steps is None else min(total_steps, state.step + max_steps)
    pools = _build_pools(world, config)
    warmup_steps = int(round(config.warmup_epochs * config.steps_per_epoch))
    hub_name = world.hub.name

    while state.step < target:
        t = state.step
        pc = config.pairs[t % num_pairs]
        pool = pools[pc.spoke]
        pool_n = pool.hub_obs.shape[0]
        start = (t // num_pairs) * pc.batch_size
        idx = np.arange(start, start + pc.batch_size) % pool_n
        hub_enc = state.encoders[hub_name]
        spoke_enc = state.encoders[pc.spoke]
        q, q_cache = encode(hub_enc, pool.hub_obs[idx])
        k, k_cache = encode(spoke_enc, pool.spoke_obs[idx])

        temp = state.temperatures[pc.spoke]
        loss = 0.0
        grad_q = np.zeros_like(q)
        grad_k = np.zeros_like(k)
        grad_log_tau = 0.0
        if pc.infonce_weight != 0:
            out = symmetric_info_nce(q, k, temp)
            loss += pc.infonce_weight * out.loss
            grad_q += pc.infonce_weight * out.grad_q
            grad_k += pc.infonce_weight * out.grad_k
            grad_log_tau += pc.infonce_weight * out.grad_log_tau
        if pc.l2_weight != 0:
            reg = l2_regression_loss(q, k)
            loss += pc.l2_weight * reg.loss
            grad_q += pc.l2_weight * reg.grad_q
            grad_k += pc.l2_weight * reg.grad_k
        if not math.isfinite(loss):
            raise TrainerError(
                f"training diverged: non-finite loss at step {t} (pair {pc.spoke})"
            )

        hub_grads = encode_backward(hub_enc, q_cache, grad_q)
        spoke_grads = encode_backward(spoke_enc, k_cache, grad_k)
        tau_learnable = temp.learnable and pc.infonce_weight != 0
        clip_list = spoke_grads.arrays()
        if not hub_enc.frozen:
            clip_list = clip_list + hub_grads.arrays()
        if tau_learnable:
            clip_list = clip_list + [np.array([grad_log_tau])]
        clipped = clip_global_norm(clip_list, config.grad_clip_norm)

        scale = min(1.0, (t + 1) / warmup_steps) if warmup_steps > 0 else 1.0
        lr = config.learning_rate * scale

        n_spoke = len(spoke_grads.arrays())
        mom = state.moments[pc.spoke]
        new_arrays, state.moments[pc.spoke] = adamw_step(
            spoke_enc.arrays(), clipped[:n_spoke], mom, lr, config.betas,
            config.weight_decay, mom.t + 1, eps=config.adam_eps,
        )
        _write_back(spoke_enc, new_arrays)
        pos = n_spoke
        if not hub_enc.frozen:
            n_hub = len(hub_grads.arrays())
            mom = state.moments[hub_name]
            new_arrays, state.moments[hub_name] = adamw_step(
                hub_enc.arrays(), clipped[pos : pos + n_hub], mom, lr, config.betas,
                config.weight_decay, mom.t + 1, eps=config.adam_eps,
            )
            _write_back(hub_enc, new_arrays)
            pos += n_hub
        if tau_learnable:
            key = _SHARED_TAU_KEY if config.shared_temperature else pc.spoke
            sm = state.tau_moments[key]
            # weight decay never applies to the temperature
            vals, mom1 = adamw_step(
                [np.array([temp.log_tau])], [clipped[pos]],
                AdamMoments(m=[np.array([sm.m])], v=[np.array([sm.v])], t=sm.t),
                lr, config.betas, 0.0, sm.t + 1, eps=config.adam_eps,
            )
            temp.apply_update(float(vals[0][0]))
            state.tau_moments[key] = ScalarMoments(
                m=float(mom1.m[0][0]), v=float(mom1.v[0][0]), t=mom1.t
            )

        state.loss_history.append(
            LossRecord(step=t, pair=pc.spoke, loss=float(loss), tau=temp.tau)
        )
        state.step = t + 1

    return state, train_summary(state, config)


def train_summary(state: TrainState, config: TrainConfig) -> dict:
    """Per-pair loss digest: first/last step and first/last epoch means."""
    per_pair = {}
    steps_per_pair = max(1, config.steps_per_epoch // len(config.pairs))
    for pc in config.pairs:
        recs = [r for r in state.loss_history if r.pair == pc.spoke]
        if not recs:
            per_pair[pc.spoke] = {"steps": 0}
            continue
        per_pair[pc.spoke] = {
            "steps": len(recs),
            "first_loss": recs[0].loss,
            "last_loss": recs[-1].loss,
            "first_epoch_mean_loss": float(np.mean([r.loss for r in recs[:steps_per_pair]])),
            "last_epoch_mean_loss": float(np.mean([r.loss for r in recs[-steps_per_pair:]])),
            "final_tau": recs[-1].tau,
        }
    return {"steps": state.step, "pairs": per_pair}


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(state: TrainState, path: str | Path, extra: dict | None = None) -> None:
    """Write the full training state as JSON; floats round-trip bit-exactly."""
    doc = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "kind": "checkpoint",
        "step": state.step,
        "encoders": {name: p.to_dict() for name, p in state.encoders.items()},
        "moments": {
            name: {"t": mom.t, "m": [a.tolist() for a in mom.m], "v": [a.tolist() for a in mom.v]}
            for name, mom in state.moments.items()
        },
        "temperatures": {name: t.to_dict() for name, t in state.temperatures.items()},
        "tau_moments": {
            name: {"m": sm.m, "v": sm.v, "t": sm.t} for name, sm in state.tau_moments.items()
        },
        "loss_history": [[r.step, r.pair, r.loss, r.tau] for r in state.loss_history],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))


def _validate_encoder_shapes(name: str, enc: EncoderParams) -> None:
    plan = enc.arch.layer_plan()
    if len(enc.weights) != len(plan) or len(enc.biases) != len(plan):
        raise TrainerError(f"corrupt checkpoint: encoder {name!r} layer count mismatch")
    for (in_dim, out_dim, _), w, b in zip(plan, enc.weights, enc.biases):
        if w.shape != (out_dim, in_dim) or b.shape != (out_dim,):
            raise TrainerError(f"corrupt checkpoint: encoder {name!r} shape mismatch")


def load_checkpoint(path: str | Path) -> TrainState:
    """Read a checkpoint back; rejects unknown versions and malformed content."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TrainerError(f"corrupt checkpoint: {e}") from e
    if not isinstance(doc, dict) or doc.get("kind") != "checkpoint":
        raise TrainerError("corrupt checkpoint: not a checkpoint document")
    if doc.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise TrainerError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        encoders = {name: EncoderParams.from_dict(d) for name, d in doc["encoders"].items()}
        for name, enc in encoders.items():
            _validate_encoder_shapes(name, enc)
        moments = {
            name: AdamMoments(
                m=[np.asarray(a, dtype=np.float64) for a in d["m"]],
                v=[np.asarray(a, dtype=np.float64) for a in d["v"]],
                t=d["t"],
            )
            for name, d in doc["moments"].items()
        }
        temperatures = {
            name: TemperatureParam.from_dict(d) for name, d in doc["temperatures"].items()
        }
        tau_moments = {
            name: ScalarMoments(m=d["m"], v=d["v"], t=d["t"])
            for name, d in doc["tau_moments"].items()
        }
        history = [
            LossRecord(step=r[0], pair=r[1], loss=r[2], tau=r[3]) for r in doc["loss_history"]
        ]
        step = doc["step"]
    except (KeyError, TypeError, IndexError) as e:
        raise TrainerError(f"corrupt checkpoint: {e!r}") from e
    for name, mom in moments.items():
        if name not in encoders:
            raise TrainerError(f"corrupt checkpoint: moments for unknown encoder {name!r}")
        shapes = [a.shape for a in encoders[name].arrays()]
        if [a.shape for a in mom.m] != shapes or [a.shape for a in mom.v] != shapes:
            raise TrainerError(f"corrupt checkpoint: moment shapes mismatch for {name!r}")
    return TrainState(
        encoders=encoders,
        moments=moments,
        temperatures=temperatures,
        tau_moments=tau_moments,
        step=step,
        loss_history=history,
    )


def write_training_log(state: TrainState, path: str | Path, config_hash: str | None = None) -> None:
    """CSV log of every step: step, pair, loss, tau."""
    with open(path, "w", newline="") as f:
        if config_hash:
            f.write(f"# config_hash={config_hash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "pair", "loss", "tau"])
        for r in state.loss_history:
            w.writerow([r.step, r.pair, repr(r.loss), repr(r.tau)])
