"""MAP-EM training loop.

Every step runs four phases in a fixed order on one minibatch: refresh
the per-datum scale posteriors, take a natural-gradient step on the
activation-rate posterior (from the previous batch's codes), run greedy
pursuit for fresh codes, then one ADAM step on the decoder (and topic
logits). The phase order is instrumented so tests can assert it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from bbsc import beta_process, checkpoint, datasets, likelihood, metrics, pursuit
from bbsc.nn import Activation, AdamState, DecoderNetwork, GradientBuffer, adam_step, init_network

PHASES = ("lambda", "pi", "z", "theta")


class TrainingError(RuntimeError):
    """A step produced a non-finite quantity; names the phase that failed."""

    def __init__(self, phase: str, message: str):
        self.phase = phase
        super().__init__(f"phase '{phase}': {message}")


@dataclass(frozen=True)
class TrainConfig:
    likelihood: str  # "gauss" | "poiss" | "bern"
    k: int
    seed: int
    hidden: tuple[int, ...] = (32,)
    epochs: int = 10
    batch_size: int = 100
    bp_alpha: float = 1.0
    bp_gamma: float = 0.0  # 0 -> K/5
    bp_t0: float = 1.0
    bp_kappa: float = 0.7
    sigma2: float = 0.1
    c: float = 1.0
    poiss_a: float = 1.0
    poiss_b: float = 1.0
    topics: int = 0
    rho: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 1
    workers: int = 1
    max_active: int = 0  # 0 -> K
    early_stop: bool = False
    record_timing: bool = True
    heldout_prior: bool = True
    checkpoint_path: str = ""
    metrics_path: str = ""

    def __post_init__(self):
        if self.likelihood not in ("gauss", "poiss", "bern"):
            raise ValueError(f"unknown likelihood '{self.likelihood}'")
        if self.k < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("k and batch_size must be >= 1, epochs >= 0")
        if self.likelihood == "poiss" and self.topics < 1:
            raise ValueError("the poisson variant needs topics >= 1")

    @property
    def gamma_mass(self) -> float:
        return self.bp_gamma if self.bp_gamma > 0.0 else self.k / 5.0

    @property
    def active_cap(self) -> int:
        return self.max_active if self.max_active > 0 else self.k


def config_fingerprint(config: TrainConfig) -> str:
    record = dataclasses.asdict(config)
    record.pop("checkpoint_path")
    record.pop("metrics_path")
    blob = json.dumps(record, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class StepMetrics:
    step: int
    epoch: int
    phase_ms: dict[str, float]
    mean_bound: float
    mean_active_bits: float
    evals_per_datum: float
    phases: tuple[str, ...]  # execution order, for the phase-fidelity assert


@dataclass
class TrainState:
    config: TrainConfig
    net: DecoderNetwork
    adam: AdamState
    bp_cfg: beta_process.BetaProcessConfig
    post: beta_process.BetaPosterior
    rng: np.random.Generator
    codes: np.ndarray  # (N, K) uint8, last code per training datum
    n: int
    epoch: int = 0
    step: int = 0
    last_batch_codes: np.ndarray | None = None
    # poisson-only state
    poiss_cfg: likelihood.PoissonLikelihoodConfig | None = None
    adam_beta: AdamState | None = None
    gamma_means: np.ndarray | None = None
    gamma_touched: np.ndarray | None = None
    lambda_computations: int = 0

    def gauss_cfg(self) -> likelihood.GaussianLikelihoodConfig:
        return likelihood.GaussianLikelihoodConfig(sigma2=self.config.sigma2, c=self.config.c)


def data_matrix(data) -> np.ndarray:
    """Accept DenseDataset, CountDataset, or a plain array."""
    if isinstance(data, datasets.DenseDataset):
        return data.data
    if isinstance(data, datasets.CountDataset):
        return data.counts.astype(np.float64)
    return np.asarray(data, dtype=np.float64)


def build_state(config: TrainConfig, data) -> TrainState:
    X = data_matrix(data)
    n, dim = X.shape
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(config.seed)
    if config.likelihood == "poiss":
        out_dim, final = config.topics, Activation.SOFTMAX
    else:
        out_dim, final = dim, Activation.SIGMOID
    net = init_network(config.k, config.hidden, out_dim, final, rng)
    adam = AdamState.for_params(net.params(), rho=config.rho, beta1=config.adam_beta1,
                                beta2=config.adam_beta2, eps=config.adam_eps)
    bp_cfg = beta_process.BetaProcessConfig(
        k=config.k, gamma_mass=config.gamma_mass, alpha=config.bp_alpha,
        schedule=beta_process.EtaSchedule(t0=config.bp_t0, kappa=config.bp_kappa))
    state = TrainState(
        config=config, net=net, adam=adam, bp_cfg=bp_cfg,
        post=beta_process.init_posterior(bp_cfg), rng=rng,
        codes=np.zeros((n, config.k), dtype=np.uint8), n=n)
    if config.likelihood == "poiss":
        logits = rng.normal(0.0, 0.01, size=(dim, config.topics))
        state.poiss_cfg = likelihood.PoissonLikelihoodConfig(
            logits, a=config.poiss_a, b=config.poiss_b)
        state.adam_beta = AdamState.for_params(
            [state.poiss_cfg.beta_logits], rho=config.rho, beta1=config.adam_beta1,
            beta2=config.adam_beta2, eps=config.adam_eps)
        state.gamma_means = np.zeros(n)
        state.gamma_touched = np.zeros(n, dtype=bool)
    return state


def _evaluator_factory(state: TrainState, prior, e_lams: np.ndarray | None = None):
    """Factory over (position, row) for batch_encode; closes over current parameters."""
    cfg = state.config
    if cfg.likelihood == "gauss":
        gcfg = state.gauss_cfg()

        def factory(i, x):
            return likelihood.GaussianEvaluator(x, state.net, gcfg, prior)
    elif cfg.likelihood == "bern":

        def factory(i, x):
            return likelihood.BernoulliEvaluator(x, state.net, prior)
    else:
        pcfg = state.poiss_cfg
        beta = pcfg.beta  # one softmax per batch, shared across evaluators

        def factory(i, x):
            if e_lams is not None:
                e = e_lams[i]
            else:
                e = likelihood.poiss_lambda_posterior(x.astype(np.int64), pcfg).mean
            return likelihood.PoissonEvaluator(x, state.net, pcfg, e, prior, beta=beta)

    return factory


def train_step(state: TrainState, batch: np.ndarray, idx: np.ndarray) -> StepMetrics:
    """One minibatch step through the four phases; mutates state."""
    cfg = state.config
    times: dict[str, float] = {}
    order: list[str] = []

    def tick():
        return time.perf_counter()

    # -- scale posteriors ---------------------------------------------------
    t0 = tick()
    means = variances = None
    e_lams = None
    if cfg.likelihood == "gauss":
        F_old = state.net.forward_many(state.codes[idx].astype(np.float64))
        means, variances = likelihood.gauss_lambda_posterior_many(batch, F_old, state.gauss_cfg())
    elif cfg.likelihood == "poiss":
        fresh = ~state.gamma_touched[idx]
        if fresh.any():
            rows = idx[fresh]
            totals = batch[fresh].sum(axis=1)
            state.gamma_means[rows] = (totals + cfg.poiss_a) / (cfg.poiss_b + 1.0)
            state.gamma_touched[rows] = True
            state.lambda_computations += int(fresh.sum())
        e_lams = state.gamma_means[idx]
    order.append("lambda")
    times["lambda"] = (tick() - t0) * 1e3

    # -- activation-rate posterior ------------------------------------------
    t0 = tick()
    if state.last_batch_codes is not None and len(state.last_batch_codes) > 0:
        eta = beta_process.eta_at(state.post.step_count, state.bp_cfg.schedule)
        state.post = beta_process.natural_grad_update(
            state.post, state.last_batch_codes, state.n, eta, state.bp_cfg)
    order.append("pi")
    times["pi"] = (tick() - t0) * 1e3

    # -- greedy pursuit -----------------------------------------------------
    t0 = tick()
    prior = beta_process.CodeLogPrior(state.post)
    factory = _evaluator_factory(state, prior, e_lams)
    results = pursuit.batch_encode(batch, factory, cfg.k, workers=cfg.workers,
                                   max_active=cfg.active_cap)
    new_codes = pursuit.codes_matrix(results)
    bounds = np.array([r.final_score for r in results])
    if not np.isfinite(bounds).all():
        raise TrainingError("z", "pursuit produced a non-finite bound")
    state.codes[idx] = new_codes.astype(np.uint8)
    state.last_batch_codes = new_codes.copy()
    order.append("z")
    times["z"] = (tick() - t0) * 1e3

    # -- decoder update -----------------------------------------------------
    t0 = tick()
    b = batch.shape[0]
    try:
        if cfg.likelihood == "gauss":
            bound, grad = likelihood.gauss_theta_batch(
                batch, new_codes, state.net, state.gauss_cfg(), means, variances)
            logit_grad = None
        elif cfg.likelihood == "bern":
            bound, grad = likelihood.bern_theta_batch(batch, new_codes, state.net)
            logit_grad = None
        else:
            bound, grad, logit_grad = likelihood.poiss_theta_batch(
                batch, new_codes, state.net, state.poiss_cfg, e_lams)
        if not np.isfinite(bound):
            raise FloatingPointError("objective is non-finite")
        grad.scale(1.0 / b)
        adam_step(state.net.params(), grad, state.adam)
        if logit_grad is not None:
            beta_buf = GradientBuffer([logit_grad / b], count=b)
            adam_step([state.poiss_cfg.beta_logits], beta_buf, state.adam_beta)
    except (ValueError, FloatingPointError) as exc:
        raise TrainingError("theta", str(exc)) from exc
    order.append("theta")
    times["theta"] = (tick() - t0) * 1e3

    state.step += 1
    return StepMetrics(
        step=state.step, epoch=state.epoch, phase_ms=times,
        mean_bound=float(bounds.mean()),
        mean_active_bits=float(np.mean([len(r.active_set) for r in results])),
        evals_per_datum=float(np.mean([r.evaluations for r in results])),
        phases=tuple(order),
    )


# ---------------------------------------------------------------------------
# evaluation

def encode_dataset(state: TrainState, data, include_prior: bool = True,
                   workers: int | None = None) -> list[pursuit.PursuitResult]:
    """Encode arbitrary data with the current parameters; no state mutation."""
    X = data_matrix(data)
    prior = beta_process.CodeLogPrior(state.post) if include_prior else None
    factory = _evaluator_factory(state, prior, e_lams=None)
    return pursuit.batch_encode(X, factory, state.config.k,
                                workers=workers or state.config.workers,
                                max_active=state.config.active_cap)


def evaluate(state: TrainState, heldout, include_prior: bool | None = None) -> metrics.EvalReport:
    """Encode held-out data and report MSE (gauss) or NLL (bern/poiss) plus sparsity."""
    X = data_matrix(heldout)
    if X.shape[0] == 0:
        raise ValueError("held-out dataset is empty")
    if include_prior is None:
        include_prior = state.config.heldout_prior
    results = encode_dataset(state, X, include_prior=include_prior)
    Z = pursuit.codes_matrix(results)
    cfg = state.config
    if cfg.likelihood == "gauss":
        F = state.net.forward_many(Z)
        means, _ = likelihood.gauss_lambda_posterior_many(X, F, state.gauss_cfg())
        value, name = metrics.mse(X, Z, state.net, means), "mse"
    elif cfg.likelihood == "bern":
        value, name = metrics.nll(X, Z, state.net), "nll"
    else:
        e = (X.sum(axis=1) + cfg.poiss_a) / (cfg.poiss_b + 1.0)
        value, name = metrics.poisson_nll(X, Z, state.net, state.poiss_cfg, e), "nll"
    return metrics.EvalReport(
        metric=name, value=float(value), n=X.shape[0],
        activation_probabilities=beta_process.activation_probabilities(Z),
        sparsity=metrics.sparsity(Z),
        config_fingerprint=config_fingerprint(cfg),
    )


# ---------------------------------------------------------------------------
# metrics CSV

CSV_COLUMNS = ("step,epoch,phase_ms_lambda,phase_ms_pi,phase_ms_z,phase_ms_theta,"
               "mean_bound,mean_active_bits,evals_per_datum,heldout_metric,sparsity")


class MetricsWriter:
    """Per-step CSV log with the full config echoed in header comments."""

    def __init__(self, path: str, config: TrainConfig, echo: dict | None = None):
        self.fh = open(path, "w", encoding="utf-8")
        self.timing = config.record_timing
        record = dataclasses.asdict(config)
        # output paths are run plumbing, not experiment config; leaving them
        # out keeps same-seed runs byte-identical (the fingerprint skips them too)
        record.pop("checkpoint_path")
        record.pop("metrics_path")
        self.fh.write("# bbsc metrics v1\n")
        self.fh.write(f"# config fingerprint={config_fingerprint(config)}\n")
        for key in sorted(record):
            self.fh.write(f"# config {key}={record[key]}\n")
        for key in sorted(echo or {}):
            self.fh.write(f"# file {key}={echo[key]}\n")
        self.fh.write(CSV_COLUMNS + "\n")

    def write(self, sm: StepMetrics, heldout_metric: float | None, sparsity: float | None):
        ms = {k: (v if self.timing else 0.0) for k, v in sm.phase_ms.items()}
        held = f"{heldout_metric:.10g}" if heldout_metric is not None else ""
        spars = f"{sparsity:.10g}" if sparsity is not None else ""
        self.fh.write(
            f"{sm.step},{sm.epoch},{ms['lambda']:.3f},{ms['pi']:.3f},{ms['z']:.3f},"
            f"{ms['theta']:.3f},{sm.mean_bound:.10g},{sm.mean_active_bits:.6g},"
            f"{sm.evals_per_datum:.6g},{held},{spars}\n")

    def close(self):
        self.fh.close()


def train(config: TrainConfig, data, heldout=None, state: TrainState | None = None,
          config_echo: dict | None = None) -> tuple[TrainState, list[StepMetrics]]:
    """Run (or resume) the full loop: epochs of seeded-shuffle minibatch steps.

    Writes a metrics row per step and a checkpoint per epoch when paths are
    configured; config_echo lines (e.g. the CLI's raw file config) go into
    the CSV header so the run stays self-describing. Deterministic for a
    fixed seed at worker count 1.
    """
    X = data_matrix(data)
    if state is None:
        state = build_state(config, X)
    writer = (MetricsWriter(config.metrics_path, config, config_echo)
              if config.metrics_path else None)
    all_metrics: list[StepMetrics] = []
    epoch_bounds: list[float] = []
    try:
        while state.epoch < config.epochs:
            perm = state.rng.permutation(state.n)
            n_steps = int(np.ceil(state.n / config.batch_size))
            step_bounds = []
            for s in range(n_steps):
                idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
                sm = train_step(state, X[idx], idx)
                step_bounds.append(sm.mean_bound)
                all_metrics.append(sm)
                last_of_epoch = s == n_steps - 1
                held_val = spars_val = None
                if (last_of_epoch and heldout is not None
                        and (state.epoch + 1) % config.eval_every == 0):
                    report = evaluate(state, heldout)
                    held_val, spars_val = report.value, report.sparsity
                if writer:
                    writer.write(sm, held_val, spars_val)
            state.epoch += 1
            epoch_bounds.append(float(np.mean(step_bounds)))
            if config.checkpoint_path:
                save_state(config.checkpoint_path, state)
            if config.early_stop and len(epoch_bounds) >= 4:
                prev, cur = epoch_bounds[-4], epoch_bounds[-1]
                if abs(cur - prev) / max(abs(prev), 1e-12) < 1e-5:
                    break
        if config.checkpoint_path:
            save_state(config.checkpoint_path, state)
    finally:
        if writer:
            writer.close()
    return state, all_metrics


# ---------------------------------------------------------------------------
# state serialization

def _adam_bytes(adam: AdamState) -> bytes:
    parts = [struct.pack("<Q", adam.t),
             struct.pack("<dddd", adam.rho, adam.beta1, adam.beta2, adam.eps)]
    for group in (adam.m, adam.v):
        for arr in group:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def _adam_from_bytes(raw: bytes, shapes: list[tuple]) -> AdamState:
    (t,) = struct.unpack_from("<Q", raw, 0)
    rho, beta1, beta2, eps = struct.unpack_from("<dddd", raw, 8)
    off = 40
    groups = []
    for _ in range(2):
        arrs = []
        for shape in shapes:
            count = int(np.prod(shape))
            arrs.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                        .reshape(shape).copy())
            off += 8 * count
        groups.append(arrs)
    return AdamState(m=groups[0], v=groups[1], t=t, rho=rho, beta1=beta1, beta2=beta2, eps=eps)


def save_state(path: str, state: TrainState) -> None:
    cfg = state.config
    manifest = {
        "kind": "bbsc-train-state",
        "config": dataclasses.asdict(cfg),
        "epoch": state.epoch,
        "step": state.step,
        "n": state.n,
        "k": cfg.k,
        "post_step_count": state.post.step_count,
        "lambda_computations": state.lambda_computations,
        "rng_state": state.rng.bit_generator.state,
        "last_batch_count": 0 if state.last_batch_codes is None else len(state.last_batch_codes),
        "fingerprint": config_fingerprint(cfg),
    }
    sections = [
        ("net_adam", checkpoint.network_bytes(state.net, state.adam)),
        ("beta_a", np.ascontiguousarray(state.post.a, dtype="<f8").tobytes()),
        ("beta_b", np.ascontiguousarray(state.post.b, dtype="<f8").tobytes()),
        ("codes", state.codes.tobytes()),
    ]
    if state.last_batch_codes is not None:
        sections.append(("last_batch_codes",
                         state.last_batch_codes.astype(np.uint8).tobytes()))
    if cfg.likelihood == "poiss":
        sections.append(("beta_logits",
                         np.ascontiguousarray(state.poiss_cfg.beta_logits, dtype="<f8").tobytes()))
        sections.append(("adam_beta", _adam_bytes(state.adam_beta)))
        sections.append(("gamma_means", np.ascontiguousarray(state.gamma_means, dtype="<f8").tobytes()))
        sections.append(("gamma_touched", state.gamma_touched.astype(np.uint8).tobytes()))
    checkpoint.write_manifest_file(path, manifest, sections)


def load_state(path: str) -> TrainState:
    manifest, sections = checkpoint.read_manifest_file(path)
    if manifest.get("kind") != "bbsc-train-state":
        raise ValueError(f"{path} is not a training checkpoint")
    raw_cfg = manifest["config"]
    raw_cfg["hidden"] = tuple(raw_cfg["hidden"])
    config = TrainConfig(**raw_cfg)
    net, adam = checkpoint.network_from_bytes(sections["net_adam"])
    n, k = manifest["n"], manifest["k"]
    post = beta_process.BetaPosterior(
        a=np.frombuffer(sections["beta_a"], dtype="<f8").copy(),
        b=np.frombuffer(sections["beta_b"], dtype="<f8").copy(),
        step_count=manifest["post_step_count"],
    )
    bp_cfg = beta_process.BetaProcessConfig(
        k=config.k, gamma_mass=config.gamma_mass, alpha=config.bp_alpha,
        schedule=beta_process.EtaSchedule(t0=config.bp_t0, kappa=config.bp_kappa))
    rng = np.random.default_rng(config.seed)
    rng.bit_generator.state = manifest["rng_state"]
    state = TrainState(
        config=config, net=net, adam=adam, bp_cfg=bp_cfg, post=post, rng=rng,
        codes=np.frombuffer(sections["codes"], dtype=np.uint8).reshape(n, k).copy(),
        n=n, epoch=manifest["epoch"], step=manifest["step"],
        lambda_computations=manifest["lambda_computations"],
    )
    if manifest["last_batch_count"] > 0:
        state.last_batch_codes = (np.frombuffer(sections["last_batch_codes"], dtype=np.uint8)
                                  .reshape(manifest["last_batch_count"], k)
                                  .astype(np.float64))
    if config.likelihood == "poiss":
        logits = np.frombuffer(sections["beta_logits"], dtype="<f8").reshape(
            len(sections["beta_logits"]) // (8 * config.topics), config.topics).copy()
        state.poiss_cfg = likelihood.PoissonLikelihoodConfig(
            logits, a=config.poiss_a, b=config.poiss_b)
        state.adam_beta = _adam_from_bytes(sections["adam_beta"], [logits.shape])
        state.gamma_means = np.frombuffer(sections["gamma_means"], dtype="<f8").copy()
        state.gamma_touched = np.frombuffer(sections["gamma_touched"], dtype=np.uint8).astype(bool)
    return state


def replace_config(state: TrainState, config: TrainConfig) -> TrainState:
    """Attach a new run config to a loaded state (e.g. a larger epoch budget).

    Fields that shape the trajectory itself must match the stored run.
    """
    for field_name in ("likelihood", "k", "hidden", "batch_size", "seed",
                       "bp_alpha", "bp_gamma", "bp_t0", "bp_kappa",
                       "sigma2", "c", "poiss_a", "poiss_b", "topics",
                       "rho", "adam_beta1", "adam_beta2", "adam_eps"):
        old = getattr(state.config, field_name)
        new = getattr(config, field_name)
        if old != new:
            raise ValueError(f"resume config changes {field_name}: {old!r} -> {new!r}")
    state.config = config
    return state


def state_digest(state: TrainState) -> str:
    """Hash of everything that determines the remaining trajectory."""
    h = hashlib.sha256()
    for p in state.net.params():
        h.update(p.tobytes())
    for group in (state.adam.m, state.adam.v):
        for a in group:
            h.update(a.tobytes())
    h.update(struct.pack("<Q", state.adam.t))
    h.update(state.post.a.tobytes())
    h.update(state.post.b.tobytes())
    h.update(struct.pack("<qqq", state.post.step_count, state.epoch, state.step))
    h.update(state.codes.tobytes())
    if state.last_batch_codes is not None:
        h.update(state.last_batch_codes.astype(np.uint8).tobytes())
    if state.poiss_cfg is not None:
        h.update(state.poiss_cfg.beta_logits.tobytes())
        h.update(state.gamma_means.tobytes())
        h.update(struct.pack("<q", state.lambda_computations))
    h.update(json.dumps(state.rng.bit_generator.state, sort_keys=True).encode())
    return h.hexdigest()
