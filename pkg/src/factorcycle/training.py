"""Adam optimization, lr schedule, and the two training-step procedures.

Uncooperative mode updates a translator only on the phase where its input
is real: cycle 1 (real v) steps the disentangler while the entangler acts
as a fixed but differentiable function, cycle 2 (real c, generated r) steps
the entangler with the disentangler frozen. Cooperative mode backpropagates
the summed cycle objective once and steps both. Adversaries update the same
way in both modes, from a history buffer of past fakes.

Three optimizers partition the parameters: disentangler, entangler,
adversaries. No parameter belongs to two.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tape, Tensor, add, backward
from .data import Dataset
from .evaluation import MetricsRecord, UndefinedMetricError, eval_disentanglement
from .losses import (
    CycleOutputs,
    HistoryBuffer,
    LossWeights,
    cycle1,
    cycle2,
    gan_disc_loss,
)
from .nets import (
    DiscriminatorSet,
    GeneratorSet,
    disentangle,
    discriminate,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

MODES = ("uncooperative", "cooperative")


class TrainingDiverged(RuntimeError):
    """A non-finite value appeared in a forward pass or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "uncooperative"
    total_steps: int = 60000
    batch: int = 128
    lr0: float = 2e-4
    decay_start: int | None = None  # None -> total_steps // 2
    eval_every: int = 500
    seed: int = 0
    buffer_enabled: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    hidden: int = 32
    shared_disentangler: bool = False
    sn_critics: bool = False
    plateau_decay: bool = False
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.decay_start is None:
            object.__setattr__(self, "decay_start", self.total_steps // 2)
        if not 0 <= self.decay_start <= self.total_steps:
            raise ValueError(
                f"decay_start must lie in [0, {self.total_steps}], got {self.decay_start}"
            )
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Constant lr0 before decay_start, then linear to 0 at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    return _linear_decay(step, cfg.lr0, cfg.decay_start, cfg.total_steps)


def _linear_decay(step, lr0, start, total):
    if step < start or total == start:
        return lr0
    return lr0 * (total - step) / (total - start)


class AdamState:
    """Adam moments for a fixed, ordered parameter list."""

    def __init__(self, params, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(state: AdamState, params, grads, lr: float) -> None:
    """In-place Adam update with bias correction.

    Must run after backward() has consumed the tape; parameter arrays are
    mutated directly.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise TrainingDiverged("non-finite gradient in adam_step")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class OptimizerTriple:
    """Disjoint optimizers: disentangler, entangler, both adversaries."""

    opt_d: AdamState
    opt_e: AdamState
    opt_a: AdamState


class Trainer:
    """One experiment's mutable state: networks, optimizers, buffers, rngs.

    Seed derivation spawns independent streams for initialization, batch
    sampling, and the two history buffers, so both modes consume randomness
    identically and a shared seed yields identical initialization and data
    order across modes.
    """

    def __init__(self, cfg: TrainConfig, dataset: Dataset,
                 gen: GeneratorSet | None = None,
                 disc: DiscriminatorSet | None = None):
        self.cfg = cfg
        self.dataset = dataset
        self.weights = cfg.weights
        ss_init, ss_batch, ss_buf_c, ss_buf_v = np.random.SeedSequence(
            cfg.seed
        ).spawn(4)
        if (gen is None) != (disc is None):
            raise ValueError("provide both gen and disc or neither")
        if gen is None:
            spec = dataset.spec
            gen, disc = init_params(
                spec.dim_c,
                spec.dim_r,
                np.random.default_rng(ss_init),
                hidden=cfg.hidden,
                shared_disentangler=cfg.shared_disentangler,
                spectral_norm=cfg.sn_critics,
            )
        self.gen = gen
        self.disc = disc
        self.optim = OptimizerTriple(
            opt_d=AdamState(gen.disentangler_tensors()),
            opt_e=AdamState(gen.entangler_tensors()),
            opt_a=AdamState(disc.all_tensors()),
        )
        self._rng_batch = np.random.default_rng(ss_batch)
        if cfg.buffer_enabled:
            self.buffer_c = HistoryBuffer(np.random.default_rng(ss_buf_c))
            self.buffer_v = HistoryBuffer(np.random.default_rng(ss_buf_v))
        else:
            self.buffer_c = self.buffer_v = None
        self.steps_done = 0
        # plateau detector state: trailing recon totals and the step where
        # decay was triggered (None until it trips)
        self._recon_window: list[float] = []
        self._plateau_start: int | None = None

    # -- schedule -------------------------------------------------------

    def current_lr(self) -> float:
        cfg = self.cfg
        if not cfg.plateau_decay:
            return lr_at(self.steps_done, cfg)
        if self._plateau_start is None:
            return cfg.lr0
        return _linear_decay(
            self.steps_done, cfg.lr0, self._plateau_start, cfg.total_steps
        )

    def _track_plateau(self, recon_total: float) -> None:
        """Trip decay once the trailing-1000 median improves by < 1%."""
        if not self.cfg.plateau_decay or self._plateau_start is not None:
            return
        w = self._recon_window
        w.append(recon_total)
        if len(w) < 2000 or self.steps_done % 1000 != 0:
            return
        prev = float(np.median(w[-2000:-1000]))
        cur = float(np.median(w[-1000:]))
        if prev - cur < 0.01 * abs(prev):
            self._plateau_start = self.steps_done
        del w[:-1000]

    # -- per-step phases --------------------------------------------------

    def sample_step_batches(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Draw (real v, real c, generated r) for one step.

        r comes from disentangling a third, independently drawn real v
        outside any tape, so it enters cycle 2 as a detached input.
        """
        cfg = self.cfg
        v = self.dataset.sample_batch("V", cfg.batch, self._rng_batch)
        c = self.dataset.sample_batch("C", cfg.batch, self._rng_batch)
        v_for_r = self.dataset.sample_batch("V", cfg.batch, self._rng_batch)
        _, r = disentangle(self.gen, Tensor(v_for_r))
        return v, c, r.data

    def phase_disentangler_update(self, v_batch: np.ndarray,
                                  lr: float) -> CycleOutputs:
        """Cycle 1 on real v; steps the disentangler only.

        Gradients flow through the entangler and content critic, but their
        parameters are left untouched.
        """
        with Tape() as tape:
            out = cycle1(self.gen, self.disc, self.weights, Tensor(v_batch))
            grads = backward(tape, out.total)
        params = self.gen.disentangler_tensors()
        adam_step(self.optim.opt_d, params, [grads.grad(p) for p in params], lr)
        return out

    def phase_entangler_update(self, c_batch: np.ndarray, r_batch: np.ndarray,
                               lr: float) -> CycleOutputs:
        """Cycle 2 on real c and detached r; steps the entangler only."""
        with Tape() as tape:
            out = cycle2(
                self.gen, self.disc, self.weights, Tensor(c_batch), Tensor(r_batch)
            )
            grads = backward(tape, out.total)
        params = self.gen.entangler_tensors()
        adam_step(self.optim.opt_e, params, [grads.grad(p) for p in params], lr)
        return out

    def joint_generator_update(self, v_batch, c_batch, r_batch,
                               lr: float) -> tuple[CycleOutputs, CycleOutputs]:
        """Cooperative step: one backward over cycle1 + cycle2, both updated."""
        with Tape() as tape:
            out1 = cycle1(self.gen, self.disc, self.weights, Tensor(v_batch))
            out2 = cycle2(
                self.gen, self.disc, self.weights, Tensor(c_batch), Tensor(r_batch)
            )
            grads = backward(tape, add(out1.total, out2.total))
        d_params = self.gen.disentangler_tensors()
        e_params = self.gen.entangler_tensors()
        adam_step(self.optim.opt_d, d_params, [grads.grad(p) for p in d_params], lr)
        adam_step(self.optim.opt_e, e_params, [grads.grad(p) for p in e_params], lr)
        return out1, out2

    def phase_adversary_update(self, c_real, v_real, c_fake, v_fake,
                               lr: float) -> tuple[float, float]:
        """Critic step on real batches vs (buffered) fakes; one Adam step.

        Fakes must be plain arrays already detached from any tape.
        """
        if self.buffer_c is not None:
            c_fake = self.buffer_c.draw(c_fake)
            v_fake = self.buffer_v.draw(v_fake)
        sn = self.disc.spectral_norm
        with Tape() as tape:
            loss_ac = gan_disc_loss(
                discriminate(self.disc.content_critic, Tensor(c_real), sn),
                discriminate(self.disc.content_critic, Tensor(c_fake), sn),
            )
            loss_av = gan_disc_loss(
                discriminate(self.disc.entangled_critic, Tensor(v_real), sn),
                discriminate(self.disc.entangled_critic, Tensor(v_fake), sn),
            )
            grads = backward(tape, add(loss_ac, loss_av))
        params = self.disc.all_tensors()
        adam_step(self.optim.opt_a, params, [grads.grad(p) for p in params], lr)
        return loss_ac.item(), loss_av.item()

    # -- full steps -------------------------------------------------------

    def step(self) -> MetricsRecord:
        if self.cfg.mode == "uncooperative":
            return self.step_uncooperative()
        return self.step_cooperative()

    def step_uncooperative(self) -> MetricsRecord:
        lr = self.current_lr()
        v_b, c_b, r_b = self.sample_step_batches()
        out1 = self.phase_disentangler_update(v_b, lr)
        out2 = self.phase_entangler_update(c_b, r_b, lr)
        return self._finish_step(v_b, c_b, out1, out2, lr)

    def step_cooperative(self) -> MetricsRecord:
        lr = self.current_lr()
        v_b, c_b, r_b = self.sample_step_batches()
        out1, out2 = self.joint_generator_update(v_b, c_b, r_b, lr)
        return self._finish_step(v_b, c_b, out1, out2, lr)

    def _finish_step(self, v_b, c_b, out1, out2, lr) -> MetricsRecord:
        loss_ac, loss_av = self.phase_adversary_update(
            c_b, v_b, out1.c_prime.data, out2.v_prime.data, lr
        )
        self.steps_done += 1
        rec = MetricsRecord(
            step=self.steps_done,
            loss_v=out1.ell_v.item(),
            loss_c=out2.ell_c.item(),
            loss_r=out2.ell_r.item(),
            gan_g1=out1.gan_term.item(),
            gan_g2=out2.gan_term.item(),
            loss_ac=loss_ac,
            loss_av=loss_av,
            lr=lr,
        )
        self._track_plateau(rec.recon_total(self.weights))
        return rec


# --- experiment loop ---------------------------------------------------------


class MetricsHistory:
    """Columnar per-step metric storage for a whole run."""

    FIELDS = ("loss_v", "loss_c", "loss_r", "gan_g1", "gan_g2",
              "loss_ac", "loss_av", "lr")

    def __init__(self):
        self.steps: list[int] = []
        self._cols: dict[str, list[float]] = {f: [] for f in self.FIELDS}
        self._rho: list[float | None] = []

    def append(self, rec: MetricsRecord) -> None:
        self.steps.append(rec.step)
        for f in self.FIELDS:
            self._cols[f].append(getattr(rec, f))
        self._rho.append(rec.rho)

    def __len__(self):
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self._cols[name])

    def recon_series(self, weights: LossWeights) -> np.ndarray:
        return (weights.recon_v * self.column("loss_v")
                + weights.recon_c * self.column("loss_c")
                + weights.recon_r * self.column("loss_r"))

    def rho_series(self) -> tuple[np.ndarray, np.ndarray]:
        """(steps, values) of the evaluated points only."""
        pts = [(s, r) for s, r in zip(self.steps, self._rho) if r is not None]
        if not pts:
            return np.empty(0, dtype=np.int64), np.empty(0)
        steps, vals = zip(*pts)
        return np.asarray(steps), np.asarray(vals)


@dataclass
class RunResult:
    cfg: TrainConfig
    gen: GeneratorSet
    disc: DiscriminatorSet
    trainer: "Trainer"
    history: MetricsHistory
    final_rho: float | None
    rho_error: str | None
    diverged: bool
    note: str | None
    steps_done: int
    wall_time: float


def run_experiment(cfg: TrainConfig, dataset: Dataset, on_record=None,
                   on_checkpoint=None) -> RunResult:
    """Train for cfg.total_steps, evaluating |rho| every eval_every steps.

    on_record(rec) fires after every step (rho already attached on eval
    steps); on_checkpoint(trainer, step) fires every checkpoint_every steps.
    Divergence stops the run and flags the partial result instead of
    raising.
    """
    trainer = Trainer(cfg, dataset)
    history = MetricsHistory()
    diverged = False
    note = None
    t0 = time.perf_counter()
    for _ in range(cfg.total_steps):
        try:
            rec = trainer.step()
        except (TrainingDiverged, NonFiniteError) as e:
            diverged = True
            note = f"diverged at step {trainer.steps_done + 1}: {e}"
            break
        if rec.step % cfg.eval_every == 0:
            try:
                rec.rho = eval_disentanglement(trainer.gen, dataset)
            except UndefinedMetricError:
                rec.rho = None  # degenerate output; final eval reports it
        history.append(rec)
        if on_record is not None:
            on_record(rec)
        if (cfg.checkpoint_every and on_checkpoint is not None
                and rec.step % cfg.checkpoint_every == 0):
            on_checkpoint(trainer, rec.step)
    final_rho = None
    rho_error = None
    if not diverged:
        try:
            final_rho = eval_disentanglement(trainer.gen, dataset)
        except UndefinedMetricError as e:
            rho_error = str(e)
    return RunResult(
        cfg=cfg,
        gen=trainer.gen,
        disc=trainer.disc,
        trainer=trainer,
        history=history,
        final_rho=final_rho,
        rho_error=rho_error,
        diverged=diverged,
        note=note,
        steps_done=trainer.steps_done,
        wall_time=time.perf_counter() - t0,
    )


# --- checkpoints with optimizer state ----------------------------------------


def _adam_to_obj(state: AdamState) -> dict:
    def arr(a):
        return {"shape": list(a.shape), "values": a.reshape(-1).tolist()}

    return {
        "t": state.t,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "m": [arr(a) for a in state.m],
        "v": [arr(a) for a in state.v],
    }


def _adam_from_obj(obj: dict, params) -> AdamState:
    state = AdamState(params, beta1=obj["beta1"], beta2=obj["beta2"],
                      eps=obj["eps"])
    state.t = obj["t"]

    def arr(o):
        return np.array(o["values"], dtype=np.float64).reshape(o["shape"])

    state.m = [arr(o) for o in obj["m"]]
    state.v = [arr(o) for o in obj["v"]]
    return state


def save_train_checkpoint(path, trainer: Trainer, meta: dict | None = None) -> None:
    """Networks plus optimizer moments and step count.

    Captures parameters, not the full run state (rng streams and buffer
    contents are omitted); reloading is for evaluation and probing, not for
    bit-exact resumption.
    """
    meta = dict(meta or {})
    meta["steps_done"] = trainer.steps_done
    meta["mode"] = trainer.cfg.mode
    extra = {
        "optim": {
            "d": _adam_to_obj(trainer.optim.opt_d),
            "e": _adam_to_obj(trainer.optim.opt_e),
            "a": _adam_to_obj(trainer.optim.opt_a),
        }
    }
    save_checkpoint(path, trainer.gen, trainer.disc, meta, extra)


def load_train_checkpoint(path):
    """Returns (gen, disc, meta, optim: OptimizerTriple | None)."""
    gen, disc, meta, extra = load_checkpoint(path)
    optim = None
    if extra and "optim" in extra:
        o = extra["optim"]
        optim = OptimizerTriple(
            opt_d=_adam_from_obj(o["d"], gen.disentangler_tensors()),
            opt_e=_adam_from_obj(o["e"], gen.entangler_tensors()),
            opt_a=_adam_from_obj(o["a"], disc.all_tensors()),
        )
    return gen, disc, meta, optim
