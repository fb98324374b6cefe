"""Desk-scale split federated learning loop.

Clients hold an embedding table; a two-layer classifier head stands in for
the server-side stack.  Per training batch the embeddings are mapped onto
complex symbols by a mean-removing orthonormal rotation (an isometry, so
embedding-domain and symbol-domain errors coincide), transported over the
simulated uplink, corrupted per the active scenario, and the loss/gradients
are computed on the corrupted embeddings.  FedAvg aggregates client models
after each global round.

RNG streams are derived from (seed, round, epoch, batch) so channel draws
are identical across scenarios under the same seed, isolating the scenario
effect.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import adversary, phy
from .bounds import (SmoothnessProfile, clip_gradient, estimate_smoothness,
                     loss_divergence_bound, outage_rates)
from .channel import ChannelSet, realize_channels, sample_doas
from .config import ScenarioConfig, linear_to_db
from .optimizer import surrogate_covariance, optimize

SCENARIOS = ("baseline", "gaussian", "no_protection", "protection",
             "barrage", "single_client")


@dataclass
class ToyModel:
    """Client embedding table plus the two-layer server head."""

    embedding_table: np.ndarray  # (V, E)
    W1: np.ndarray               # (E, H)
    b1: np.ndarray               # (H,)
    W2: np.ndarray               # (H, C)
    b2: np.ndarray               # (C,)

    @property
    def n_classes(self) -> int:
        return self.W2.shape[1]

    def params(self) -> dict:
        return {"embedding_table": self.embedding_table, "W1": self.W1,
                "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "ToyModel":
        return ToyModel(**{k: v.copy() for k, v in self.params().items()})


@dataclass
class RoundMetrics:
    """Aggregated and per-client metrics of one global round."""

    round: int
    scenario: str
    per_client_mse_db: np.ndarray
    accuracy: float
    loss: float
    divergence_bound: float
    empirical_divergence: float
    sum_rate: float
    per_client_loss: np.ndarray
    per_client_bound: np.ndarray
    per_client_empirical: np.ndarray
    per_client_r_out_1: np.ndarray
    per_client_r_out_2: np.ndarray


def init_model(config: ScenarioConfig, rng: np.random.Generator) -> ToyModel:
    """Fresh model; embedding coordinates start at variance 1/2 so packed
    complex symbols start near unit power."""
    v, e = config.vocab_size, config.embed_dim
    hid, cls = config.hidden_dim, config.n_classes
    return ToyModel(
        embedding_table=rng.standard_normal((v, e)) * math.sqrt(0.5),
        W1=rng.standard_normal((e, hid)) / math.sqrt(e),
        b1=np.zeros(hid),
        W2=rng.standard_normal((hid, cls)) / math.sqrt(hid),
        b2=np.zeros(cls),
    )


@dataclass
class TaskData:
    """IID token-classification shards; label = token class group."""

    client_tokens: list
    client_labels: list
    eval_tokens: np.ndarray
    eval_labels: np.ndarray


def make_task(config: ScenarioConfig, rng: np.random.Generator,
              n_eval: int = 256) -> TaskData:
    """Synthetic task: vocabulary tokens carry their class id modulo the
    class count; every client draws an equal IID shard."""
    def draw(n):
        tokens = rng.integers(0, config.vocab_size, size=n)
        return tokens, tokens % config.n_classes

    client_tokens, client_labels = [], []
    for _ in range(config.Q):
        tok, lab = draw(config.samples_per_client)
        client_tokens.append(tok)
        client_labels.append(lab)
    eval_tokens, eval_labels = draw(n_eval)
    return TaskData(client_tokens, client_labels, eval_tokens, eval_labels)


def head_forward(model: ToyModel, emb: np.ndarray):
    hidden = np.tanh(emb @ model.W1 + model.b1)
    logits = hidden @ model.W2 + model.b2
    return hidden, logits


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(len(labels)), labels]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    return loss, probs


def loss_and_grads(model: ToyModel, emb: np.ndarray, labels: np.ndarray):
    """Loss, embedding gradient and head gradients for one batch."""
    batch = emb.shape[0]
    hidden, logits = head_forward(model, emb)
    loss, probs = cross_entropy(logits, labels)
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    grads = {
        "W2": hidden.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    dhidden = dlogits @ model.W2.T
    dpre = dhidden * (1.0 - hidden ** 2)
    grads["W1"] = emb.T @ dpre
    grads["b1"] = dpre.sum(axis=0)
    grad_emb = dpre @ model.W1.T
    return loss, grad_emb, grads


def embedding_loss_fn(model: ToyModel, labels: np.ndarray, shape):
    """Loss and gradient closures over the flattened embedding vector."""
    def loss_fn(flat):
        _, logits = head_forward(model, flat.reshape(shape))
        return cross_entropy(logits, labels)[0]

    def grad_fn(flat):
        _, grad_emb, _ = loss_and_grads(model, flat.reshape(shape), labels)
        return grad_emb.reshape(-1)

    return loss_fn, grad_fn


def fedavg(models: list) -> ToyModel:
    """Parameter-wise arithmetic mean across client models."""
    first = models[0].params()
    for model in models[1:]:
        for name, value in model.params().items():
            if value.shape != first[name].shape:
                raise ValueError(f"parameter shape mismatch for {name}")
    return ToyModel(**{
        name: np.mean([m.params()[name] for m in models], axis=0)
        for name in first
    })


# ---------------------------------------------------------------------------
# embedding <-> symbol mapping

@dataclass(frozen=True)
class EmbeddingMap:
    """Mean-removing orthonormal rotation plus complex packing.

    The map is an isometry: symbol-domain and embedding-domain squared
    errors are identical, which is what ties the link MSE to the model
    input error.
    """

    mean: np.ndarray   # (E,)
    basis: np.ndarray  # (E, E), orthonormal columns
    batch_shape: tuple

    def to_symbols(self, emb: np.ndarray) -> np.ndarray:
        z = ((emb - self.mean) @ self.basis).reshape(-1)
        return z[0::2] + 1j * z[1::2]

    def to_embeddings(self, symbols: np.ndarray) -> np.ndarray:
        z = np.empty(2 * symbols.size)
        z[0::2] = symbols.real
        z[1::2] = symbols.imag
        return z.reshape(self.batch_shape) @ self.basis.T + self.mean


def embed_and_map(tokens: np.ndarray, model: ToyModel):
    """Look up embeddings and map them onto a complex symbol stream.

    Returns ``(emb, symbols, mapping)``.  The rotation decorrelates the
    batch coordinates; a zero-variance batch gets diagonal loading before
    the eigendecomposition and is flagged.
    """
    emb = model.embedding_table[tokens]
    mean = emb.mean(axis=0)
    centered = emb - mean
    cov = centered.T @ centered / max(emb.shape[0], 1)
    if np.trace(cov) < 1e-12:
        warnings.warn("zero-variance embedding batch; loading the whitener")
        cov = cov + 1e-8 * np.eye(cov.shape[0])
    _, basis = np.linalg.eigh(cov)
    mapping = EmbeddingMap(mean=mean, basis=basis, batch_shape=emb.shape)
    return emb, mapping.to_symbols(emb), mapping


# ---------------------------------------------------------------------------
# transport

@dataclass
class TransportContext:
    """Everything the harness needs to corrupt one batch's embeddings."""

    channels: ChannelSet
    alloc: phy.Allocation
    strategy: phy.JammingStrategy
    link: phy.LinkReport
    slots: list          # per user, (r_q, 2) scheduled (n, k) indices
    sigma2: float

    def slot_mse(self, q: int, n_symbols: int) -> np.ndarray:
        """Analytic per-symbol error for a stream cycled over user q's slots."""
        idx = self.slots[q]
        mu = self.link.mse_per_re[q][idx[:, 0], idx[:, 1]]
        return mu[np.arange(n_symbols) % len(mu)]


def build_transport(config: ScenarioConfig, scenario: str,
                    rng: np.random.Generator) -> TransportContext | None:
    """Fresh channel + jammer draw and the scenario's allocation.

    protection designs against the DoA surrogate; every other wireless
    scenario designs jamming-unaware (sigma2*I).  Worst-case scenarios let
    the jammer read the final allocation; single_client targets client 0.
    """
    if scenario == "baseline":
        return None
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")

    doas = sample_doas(config, rng)
    channels = realize_channels(config, doas, rng)

    if scenario == "protection":
        design = surrogate_covariance(doas[1], config.eta, config.sigma2,
                                      config.N_R)
    else:
        design = surrogate_covariance(np.array([]), 0.0, config.sigma2,
                                      config.N_R)
    alloc, _ = optimize(channels, config, design)

    if scenario == "gaussian":
        strategy = adversary.no_jamming(config)
    elif scenario == "barrage":
        strategy = adversary.barrage(config)
    elif scenario == "single_client":
        strategy, _ = adversary.worst_case(channels, alloc, config.P_J,
                                           target_user=0)
    else:  # no_protection, protection
        strategy, _ = adversary.worst_case(channels, alloc, config.P_J)

    cov_true = phy.composite_noise_grid(channels, strategy, config.sigma2)
    link = phy.link_report(alloc, channels, cov_true)
    slots = [np.argwhere(alloc.alpha[q] > 0) for q in range(config.Q)]
    return TransportContext(channels=channels, alloc=alloc, strategy=strategy,
                            link=link, slots=slots, sigma2=config.sigma2)


def corrupt_embeddings(emb: np.ndarray, mapping: EmbeddingMap, q: int,
                       transport: TransportContext | None, mode: str,
                       rng: np.random.Generator,
                       multiplier: float = 1.0) -> np.ndarray:
    """Apply the post-transport corruption to one client's embeddings.

    ``analytic`` adds Gaussian noise with total variance equal to the
    stream's analytic MSE (isotropic across embedding coordinates);
    ``per_re`` distributes the per-element errors across coordinates in
    transmission order; ``simulated`` routes the symbols through the
    transmit/receive chain.  ``multiplier`` scales the corruption amplitude
    (noise-sensitivity knob).
    """
    if transport is None:
        return emb.copy()
    symbols = mapping.to_symbols(emb)
    n_sym = symbols.size

    if mode == "analytic":
        total = float(transport.slot_mse(q, n_sym).sum())
        noise = rng.standard_normal(emb.shape) * math.sqrt(
            total / emb.size)
        return emb + multiplier * noise
    if mode == "per_re":
        mu = transport.slot_mse(q, n_sym)
        delta = (rng.standard_normal(n_sym) + 1j * rng.standard_normal(n_sym))
        delta *= np.sqrt(mu / 2.0)
        corrupted = symbols + multiplier * delta
        return mapping.to_embeddings(corrupted)
    if mode == "simulated":
        received = simulate_streams(
            [symbols if qq == q else None for qq in range(len(transport.slots))],
            transport, rng)[q]
        return mapping.to_embeddings(symbols + multiplier * (received - symbols))
    raise ValueError(f"unknown corruption mode {mode!r}")


def simulate_streams(streams: list, transport: TransportContext,
                     rng: np.random.Generator) -> list:
    """Route per-user symbol streams through the uplink simulation.

    ``streams`` holds one complex vector per user (None entries get dummy
    unit-power traffic so the interference statistics stay faithful).
    Streams longer than a user's scheduled block count reuse the slot grid
    over multiple passes.  Returns the received streams (None where the
    input was None).
    """
    q_count = len(transport.slots)
    n, k = transport.alloc.alpha.shape[1:]
    r_q = np.array([len(s) for s in transport.slots])
    lengths = np.array([0 if s is None else len(s) for s in streams])
    n_pass = max(1, int(np.ceil((lengths / np.maximum(r_q, 1)).max())))

    received = [None if s is None else np.empty(len(s), dtype=complex)
                for s in streams]
    for ipass in range(n_pass):
        grid = np.zeros((q_count, n, k), dtype=complex)
        for q in range(q_count):
            idx = transport.slots[q]
            chunk = np.empty(len(idx), dtype=complex)
            fill = (rng.standard_normal(len(idx))
                    + 1j * rng.standard_normal(len(idx))) / math.sqrt(2.0)
            chunk[:] = fill
            if streams[q] is not None:
                lo = ipass * len(idx)
                hi = min(lo + len(idx), len(streams[q]))
                if hi > lo:
                    chunk[: hi - lo] = streams[q][lo:hi]
            grid[q, idx[:, 0], idx[:, 1]] = chunk
        est = phy.transmit_receive(transport.alloc, transport.channels,
                                   transport.strategy, grid,
                                   transport.sigma2, rng)
        for q in range(q_count):
            if streams[q] is None:
                continue
            idx = transport.slots[q]
            lo = ipass * len(idx)
            hi = min(lo + len(idx), len(streams[q]))
            if hi > lo:
                received[q][lo:hi] = est[q, idx[: hi - lo, 0], idx[: hi - lo, 1]]
    return received


# ---------------------------------------------------------------------------
# training loop

def _rng_for(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _sgd_step(model: ToyModel, grads: dict, grad_table: np.ndarray,
              lr: float, tau: float) -> None:
    model.embedding_table -= lr * grad_table
    for name in ("W1", "b1", "W2", "b2"):
        g = grads[name]
        norm = np.linalg.norm(g)
        if norm > tau:
            g = g * (tau / norm)
        setattr(model, name, getattr(model, name) - lr * g)


def evaluate(model: ToyModel, tokens: np.ndarray, labels: np.ndarray) -> float:
    _, logits = head_forward(model, model.embedding_table[tokens])
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def run_scenario(config: ScenarioConfig, scenario: str, seed: int,
                 corruption_mode: str = "analytic",
                 profile_pairs: int = 96) -> list:
    """Execute one (scenario, seed) training run and collect round metrics.

    Channel and jammer statistics are redrawn per batch; the smoothness
    profile backing the divergence bounds is re-estimated per client at the
    start of every round.
    """
    scenario_id = SCENARIOS.index(scenario)
    task = make_task(config, _rng_for(seed, 0xDA7A))
    global_model = init_model(config, _rng_for(seed, 0x0DE1))
    n_batches = max(1, config.samples_per_client // config.batch_size)

    history = []
    for rnd in range(config.n_rounds):
        clients = [global_model.copy() for _ in range(config.Q)]
        loss_acc = np.zeros(config.Q)
        mse_acc = np.zeros(config.Q)
        rate_acc = 0.0
        bound_acc = np.zeros(config.Q)
        emp_acc = np.zeros(config.Q)
        n_transports = 0
        profiles: list[SmoothnessProfile | None] = [None] * config.Q
        last_r_q = np.zeros(config.Q, dtype=int)

        for epoch in range(config.n_epochs):
            orders = [
                _rng_for(seed, rnd, epoch, 0xBA7C, q).permutation(
                    len(task.client_tokens[q]))
                for q in range(config.Q)
            ]
            for batch in range(n_batches):
                transport = build_transport(
                    config, scenario, _rng_for(seed, rnd, epoch, batch))
                if transport is not None:
                    rate_acc += transport.link.sum_rate
                    mse_acc += transport.link.mse_per_user
                    last_r_q = transport.link.r_q
                    n_transports += 1
                for q in range(config.Q):
                    sel = orders[q][batch * config.batch_size:
                                    (batch + 1) * config.batch_size]
                    tokens = task.client_tokens[q][sel]
                    labels = task.client_labels[q][sel]
                    model = clients[q]
                    emb, _, mapping = embed_and_map(tokens, model)
                    rng_c = _rng_for(seed, rnd, epoch, batch, q, scenario_id)
                    emb_hat = corrupt_embeddings(
                        emb, mapping, q, transport, corruption_mode, rng_c,
                        config.noise_multiplier)

                    if profiles[q] is None:
                        loss_fn, grad_fn = embedding_loss_fn(
                            model, labels, emb.shape)
                        flat = emb.reshape(-1)
                        rng_p = _rng_for(seed, rnd, q, 0xF17)
                        anchor_scale = 0.05 * np.linalg.norm(flat) / math.sqrt(flat.size)
                        anchors = flat[None, :] + anchor_scale * rng_p.standard_normal(
                            (profile_pairs, flat.size))
                        profiles[q] = estimate_smoothness(
                            grad_fn, anchors, rng_p,
                            radius=0.25 * np.linalg.norm(flat))

                    loss_fn, _ = embedding_loss_fn(model, labels, emb.shape)
                    clean_loss = loss_fn(emb.reshape(-1))
                    loss, grad_emb, grads = loss_and_grads(model, emb_hat, labels)
                    grad_flat = clip_gradient(grad_emb.reshape(-1),
                                              config.clip_tau)
                    report = loss_divergence_bound(
                        emb.reshape(-1), emb_hat.reshape(-1), grad_flat,
                        profiles[q], tau=config.clip_tau,
                        loss_x=clean_loss, loss_y=loss)
                    bound_acc[q] += report.divergence_bound
                    emp_acc[q] += report.empirical_divergence

                    grad_table = np.zeros_like(model.embedding_table)
                    np.add.at(grad_table, tokens,
                              grad_flat.reshape(emb.shape))
                    loss_acc[q] += loss
                    _sgd_step(model, grads, grad_table, config.learning_rate,
                              config.clip_tau)

        global_model = fedavg(clients)
        accuracy = evaluate(global_model, task.eval_tokens, task.eval_labels)

        steps = config.n_epochs * n_batches
        if n_transports:
            mse_db = np.array([linear_to_db(m / n_transports) for m in mse_acc])
            mean_rate = rate_acc / n_transports
        else:
            mse_db = np.full(config.Q, -np.inf)
            mean_rate = math.nan

        r1 = np.full(config.Q, math.nan)
        r2 = np.full(config.Q, math.nan)
        if n_transports:
            for q in range(config.Q):
                prof = profiles[q]
                delta_q = float(np.linalg.norm(
                    prof.L0 + config.clip_tau * prof.L1))
                eps_q = max(emp_acc[q] / steps, 1e-12)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rep = outage_rates(prof, int(max(last_r_q[q], 1)),
                                       config.clip_tau, delta_q, eps_q)
                r1[q], r2[q] = rep.R_out_1, rep.R_out_2

        history.append(RoundMetrics(
            round=rnd, scenario=scenario, per_client_mse_db=mse_db,
            accuracy=accuracy, loss=float(loss_acc.mean() / steps),
            divergence_bound=float(bound_acc.mean() / steps),
            empirical_divergence=float(emp_acc.mean() / steps),
            sum_rate=mean_rate,
            per_client_loss=loss_acc / steps,
            per_client_bound=bound_acc / steps,
            per_client_empirical=emp_acc / steps,
            per_client_r_out_1=r1, per_client_r_out_2=r2))
    return history
