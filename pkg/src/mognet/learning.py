"""Training: intent partitioning, the two loss terms, and the optimizer.

The expert loss sums cross entropy over each expert's intent slice (a
multi-intent sample sits in every matching slice). The chair loss sums
cross entropy of the coordinated mixture over all samples. The combined
objective is lambda * expert + (1 - lambda) * chair; lambda = 0 removes
the local term entirely (global-only scheme) and lambda = 1 never builds
the chair graph.

Batches are padded to the longest source/target present; padded positions
are masked out of attention (additive -1e30 scores) and out of every loss
term. The pooled coordination features use masked prefix/suffix sums, so
at every real step they equal the per-sample definitions exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, Tape
from .errors import NumericsError
from .chair import MixtureFlags

SHUFFLE_SEED_SALT = 202
ATTN_MASK_PENALTY = 1e30


@dataclass(frozen=True)
class LossConfig:
    """One row of the variant table: which coordination channels exist and
    how the two loss terms blend."""

    lambda_: float = 0.5
    use_retro: bool = True
    use_prosp: bool = True
    mu_mode: str = "uniform"   # uniform | balanced

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lambda_}")
        if self.mu_mode not in ("uniform", "balanced"):
            raise ValueError(f"unknown mu mode {self.mu_mode!r}")

    @property
    def flags(self):
        return MixtureFlags(use_retro=self.use_retro, use_prosp=self.use_prosp)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    l2: float = 1e-5
    batch_size: int = 64


class IntentPartition:
    """Maps intent labels to expert indices and samples to slices."""

    def __init__(self, intents):
        intents = list(intents)
        if not intents:
            raise ValueError("partition needs at least one intent")
        if len(set(intents)) != len(intents):
            raise ValueError("duplicate intent labels")
        self.intents = intents
        self._index = {name: i for i, name in enumerate(intents)}

    @property
    def k(self):
        return len(self.intents)

    def index(self, intent):
        try:
            return self._index[intent]
        except KeyError:
            raise ValueError(f"unknown intent label {intent!r}, not in {self.intents}") from None

    def sample_experts(self, sample):
        ids = sorted({self.index(i) for i in sample.intents})
        if not ids:
            raise ValueError("sample carries no intent labels")
        return ids

    def slices(self, samples):
        out = [[] for _ in range(self.k)]
        for s in samples:
            for l in self.sample_experts(s):
                out[l].append(s)
        return out

    def membership(self, samples):
        memb = np.zeros((self.k, len(samples)))
        for b, s in enumerate(samples):
            for l in self.sample_experts(s):
                memb[l, b] = 1.0
        return memb

    def mu_weights(self, samples, mode):
        """Per-expert loss weights. balanced: |D| / (k * |S_l|)."""
        if mode == "uniform":
            return np.ones(self.k)
        counts = np.array([len(sl) for sl in self.slices(samples)], dtype=np.float64)
        if np.any(counts == 0):
            empty = [self.intents[i] for i in np.where(counts == 0)[0]]
            raise ValueError(f"balanced mu undefined, empty expert slices: {empty}")
        return len(samples) / (self.k * counts)


# -- batched graph ------------------------------------------------------------


@dataclass
class Batch:
    samples: list
    src: np.ndarray          # (B, m) ids
    src_mask: np.ndarray     # (B, m) 0/1
    inp: np.ndarray          # (B, n) decoder inputs: BOS then gold shifted
    tgt: np.ndarray          # (B, n) gold including EOS
    tgt_mask: np.ndarray     # (B, n)
    belief: np.ndarray       # (B, n_belief)
    db: np.ndarray           # (B, n_db)
    memb: np.ndarray         # (k, B)
    lengths: np.ndarray      # (B,) target lengths

    @property
    def size(self):
        return len(self.samples)

    @property
    def n_steps(self):
        return self.tgt.shape[1]


def build_batch(samples, cfg, partition):
    if not samples:
        raise ValueError("empty batch")
    B = len(samples)
    m = max(len(s.utterance_ids) for s in samples)
    n = max(len(s.target_ids) for s in samples)
    if m == 0 or n == 0:
        raise ValueError("samples must have non-empty utterance and target")
    src = np.full((B, m), cfg.pad_id, dtype=np.int64)
    src_mask = np.zeros((B, m))
    inp = np.full((B, n), cfg.pad_id, dtype=np.int64)
    tgt = np.full((B, n), 0, dtype=np.int64)
    tgt_mask = np.zeros((B, n))
    belief = np.zeros((B, len(samples[0].belief)))
    db = np.zeros((B, len(samples[0].db)))
    lengths = np.zeros(B, dtype=np.int64)
    for b, s in enumerate(samples):
        u, t = list(s.utterance_ids), list(s.target_ids)
        src[b, :len(u)] = u
        src_mask[b, :len(u)] = 1.0
        inp[b, 0] = cfg.bos_id
        inp[b, 1:len(t)] = t[:-1]
        tgt[b, :len(t)] = t
        tgt_mask[b, :len(t)] = 1.0
        belief[b] = s.belief
        db[b] = s.db
        lengths[b] = len(t)
    memb = partition.membership(samples)
    return Batch(samples=samples, src=src, src_mask=src_mask, inp=inp, tgt=tgt,
                 tgt_mask=tgt_mask, belief=belief, db=db, memb=memb, lengths=lengths)


def _encode_batch(model, batch):
    """Batched encoder pass. Returns (Hflat (B*m, d), fused context (B, d))."""
    cfg = model.cfg
    B, m = batch.src.shape
    table = model.params["embedding"]
    h = Tensor(np.zeros((B, cfg.hidden_size)))
    states = []
    for i in range(m):
        x = T.embedding(table, batch.src[:, i])
        h_new = model.encoder.cell.step(x, h)
        keep = batch.src_mask[:, i:i + 1]
        if keep.min() == 1.0:
            h = h_new
        else:
            h = T.add(T.mul(Tensor(keep), h_new), T.mul(Tensor(1.0 - keep), h))
        states.append(h)
    Hflat = T.reshape(T.concat(states, axis=1), (B * m, cfg.hidden_size))
    p = model.params
    fused = T.tanh(h @ p["encoder.fuse.Wu"]
                   + Tensor(batch.belief) @ p["encoder.fuse.Wb"]
                   + Tensor(batch.db) @ p["encoder.fuse.Wd"]
                   + p["encoder.fuse.b"])
    return Hflat, fused


class _BatchAttention:
    """Attention head bound to one decoder and one encoded batch; the encoder
    side projection is computed once and reused by every step."""

    def __init__(self, decoder, Hflat, src_mask):
        self.dec = decoder
        self.Hflat = Hflat
        Wh, Ws = decoder.attn_weights()
        self.HW = Hflat @ Wh
        self.Ws = Ws
        self.b = decoder.params[f"{decoder.prefix}.attn.b"]
        self.v = decoder.params[f"{decoder.prefix}.attn.v"]
        self.B, self.m = src_mask.shape
        penalty = (src_mask - 1.0) * ATTN_MASK_PENALTY
        self.penalty = None if penalty.max() == penalty.min() == 0.0 else Tensor(penalty)

    def context(self, state):
        q = state @ self.Ws + self.b
        scores = T.tanh(T.add(self.HW, T.repeat_rows(q, self.m))) @ self.v
        scores = T.reshape(scores, (self.B, self.m))
        if self.penalty is not None:
            scores = T.add(scores, self.penalty)
        alpha = T.softmax_rows(scores)
        ctx = T.sum_groups(T.mul(T.reshape(alpha, (self.B * self.m, 1)), self.Hflat), self.m)
        return ctx


def _decoder_forced(model, decoder, Hflat, fused, batch):
    """Teacher-forced step distributions for one decoder: list of (B, V)."""
    attn = _BatchAttention(decoder, Hflat, batch.src_mask)
    table = model.params["embedding"]
    U = decoder.params[f"{decoder.prefix}.out.U"]
    ob = decoder.params[f"{decoder.prefix}.out.b"]
    s = fused
    dists = []
    for j in range(batch.n_steps):
        ctx = attn.context(s)
        y = T.embedding(table, batch.inp[:, j])
        s = decoder.cell.step(T.concat([y, ctx], axis=1), s)
        dists.append(T.softmax_rows(s @ U + ob))
    return dists


def _mixture_forced(model, batch, chair_dists, expert_dists, flags):
    """Per-step mixture distributions (B, V) with pooled coordination features."""
    cfg = model.cfg
    k, v = cfg.n_experts, cfg.vocab_size
    B, n = batch.tgt.shape
    p = model.params
    zero_bv = Tensor(np.zeros((B, v)))
    mask = model.chair.beta_mask(flags)
    mask_t = Tensor(mask) if np.any(np.isneginf(mask)) else None

    prosp_suffix = None
    if flags.use_prosp:
        # masked suffix sums; padded steps contribute nothing
        prosp_suffix = [[None] * n for _ in range(k)]
        for l in range(k):
            acc = zero_bv
            for j in range(n - 1, -1, -1):
                step_mask = batch.tgt_mask[:, j:j + 1]
                acc = T.add(acc, T.mul(Tensor(step_mask), expert_dists[l][j]))
                prosp_suffix[l][j] = acc
        # 1 / (remaining real steps), floored at 1 for padded rows
        inv_remaining = [1.0 / np.maximum(1, batch.lengths - j)[:, None] for j in range(n)]

    retro_acc = [zero_bv] * k
    mixes = []
    for j in range(n):
        feats = [chair_dists[j]]
        if flags.use_retro:
            if j == 0:
                feats.extend([zero_bv] * k)
            else:
                scale = 1.0 / j
                for l in range(k):
                    retro_acc[l] = T.add(retro_acc[l], expert_dists[l][j - 1])
                    feats.append(T.mul(retro_acc[l], scale))
        else:
            feats.extend([zero_bv] * k)
        if flags.use_prosp:
            for l in range(k):
                feats.append(T.mul(prosp_suffix[l][j], Tensor(inv_remaining[j])))
        else:
            feats.extend([zero_bv] * k)

        hidden = T.tanh(T.concat(feats, axis=1) @ p["chair.coord.W1"] + p["chair.coord.b1"])
        logits = hidden @ p["chair.coord.W2"] + p["chair.coord.b2"]
        if mask_t is not None:
            logits = T.add(logits, mask_t)
        beta = T.softmax_rows(logits)

        mix = T.mul(beta[:, 0:1], chair_dists[j])
        for l in range(k):
            w = T.add(beta[:, 1 + l:2 + l], beta[:, 1 + k + l:2 + k + l])
            mix = T.add(mix, T.mul(w, expert_dists[l][j]))
        mixes.append(mix)
    return mixes


def _masked_nll_sum(dists, targets, weights):
    """Sum of -log p(gold) over steps, each step weighted per sample."""
    total = None
    for j, dist in enumerate(dists):
        w = weights[:, j]
        if not w.any():
            continue
        step = T.tsum(T.mul(T.nll(dist, targets[:, j]), Tensor(w)))
        total = step if total is None else T.add(total, step)
    return total if total is not None else Tensor(0.0)


@dataclass
class LossBreakdown:
    total: Tensor
    expert_sum: float = 0.0
    chair_sum: float = 0.0
    expert_tokens: int = 0
    chair_tokens: int = 0


def expert_loss(model, samples, partition, loss_cfg=LossConfig(), mu=None):
    """Summed expert cross entropy over the samples' intent slices."""
    batch = build_batch(samples, model.cfg, partition)
    Hflat, fused = _encode_batch(model, batch)
    dists = [_decoder_forced(model, ex, Hflat, fused, batch) for ex in model.experts]
    return _expert_term(model, batch, dists, partition, loss_cfg, mu).total


def _expert_term(model, batch, expert_dists, partition, loss_cfg, mu=None):
    if mu is None:
        mu = partition.mu_weights(batch.samples, loss_cfg.mu_mode)
    total = None
    tokens = 0
    for l in range(model.cfg.n_experts):
        w = batch.tgt_mask * batch.memb[l][:, None] * mu[l]
        tokens += int((batch.tgt_mask * batch.memb[l][:, None]).sum())
        term = _masked_nll_sum(expert_dists[l], batch.tgt, w)
        total = term if total is None else T.add(total, term)
    return LossBreakdown(total=total, expert_sum=float(total.data), expert_tokens=tokens)


def chair_loss(model, samples, partition, loss_cfg=LossConfig()):
    """Summed mixture cross entropy over all samples."""
    batch = build_batch(samples, model.cfg, partition)
    Hflat, fused = _encode_batch(model, batch)
    expert_dists = [_decoder_forced(model, ex, Hflat, fused, batch) for ex in model.experts]
    chair_dists = _decoder_forced(model, model.chair, Hflat, fused, batch)
    mixes = _mixture_forced(model, batch, chair_dists, expert_dists, loss_cfg.flags)
    return _masked_nll_sum(mixes, batch.tgt, batch.tgt_mask)


def combined_loss(model, samples, partition, loss_cfg, mu=None):
    """lambda * expert term + (1 - lambda) * chair term, sharing one forward
    pass. A zero-weighted term is skipped outright (exact, saves the tape)."""
    lam = loss_cfg.lambda_
    batch = build_batch(samples, model.cfg, partition)
    Hflat, fused = _encode_batch(model, batch)
    expert_dists = [_decoder_forced(model, ex, Hflat, fused, batch) for ex in model.experts]

    out = LossBreakdown(total=None)
    le = None
    if lam > 0.0:
        eterm = _expert_term(model, batch, expert_dists, partition, loss_cfg, mu)
        le = eterm.total
        out.expert_sum, out.expert_tokens = eterm.expert_sum, eterm.expert_tokens
    lc = None
    if lam < 1.0:
        chair_dists = _decoder_forced(model, model.chair, Hflat, fused, batch)
        mixes = _mixture_forced(model, batch, chair_dists, expert_dists, loss_cfg.flags)
        lc = _masked_nll_sum(mixes, batch.tgt, batch.tgt_mask)
        out.chair_sum = float(lc.data)
        out.chair_tokens = int(batch.tgt_mask.sum())

    if le is not None and lc is not None:
        out.total = T.add(T.mul(le, lam), T.mul(lc, 1.0 - lam))
    elif le is not None:
        out.total = le if lam == 1.0 else T.mul(le, lam)
    else:
        out.total = lc if lam == 0.0 else T.mul(lc, 1.0 - lam)
    return out


# -- optimizer -----------------------------------------------------------------


class Adam:
    """Adam with per-coordinate gradient clipping applied before the moments."""

    def __init__(self, params, opt_cfg: OptimizerConfig):
        self.params = params
        self.cfg = opt_cfg
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = np.clip(g, -c.clip, c.clip)
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p.data = p.data - c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)

    def state_dict(self):
        out = {"adam.t": np.asarray(float(self.t))}
        for n in self.m:
            out[f"adam.m.{n}"] = self.m[n].copy()
            out[f"adam.v.{n}"] = self.v[n].copy()
        return out

    def load_state(self, state):
        self.t = int(np.asarray(state["adam.t"]).item())
        for n in self.m:
            self.m[n] = np.asarray(state[f"adam.m.{n}"], dtype=np.float64).copy()
            self.v[n] = np.asarray(state[f"adam.v.{n}"], dtype=np.float64).copy()


# -- training loop ---------------------------------------------------------------


LOG_HEADER = {
    "loss_normalization": "epoch losses are per-token means; the optimized "
                          "objective is lambda*Le_sum/B + (1-lambda)*Lc_sum/B "
                          "plus l2 * sum of squared weights",
}


@dataclass
class TrainResult:
    log: list
    best_epoch: int
    best_score: float
    best_state: dict
    final_state: dict
    adam_state: dict
    epochs_run: int
    header: dict = field(default_factory=lambda: dict(LOG_HEADER))


def _l2_penalty(model, weight):
    total = None
    for _, p in model.params.items():
        term = T.tsum(T.mul(p, p))
        total = term if total is None else T.add(total, term)
    return T.mul(total, weight)


def train(splits, model, partition, loss_cfg, opt_cfg, epochs, seed,
          flags=None, score_fn=None, start_epoch=0, adam=None,
          validate_every=1, log_fn=None):
    """Optimize the combined objective with per-epoch validation scoring.

    splits: object with .train and .valid sample lists.
    score_fn: callable(model, samples, flags) -> float validation Score,
    used for model selection; when absent the last epoch wins.
    Returns a TrainResult whose best_state holds the selected parameters.
    """
    if epochs < start_epoch:
        raise ValueError("epochs must be >= the resume epoch")
    if flags is None:
        flags = loss_cfg.flags
    train_samples = list(splits.train)
    if not train_samples:
        raise ValueError("empty training split")
    mu = partition.mu_weights(train_samples, loss_cfg.mu_mode)
    if adam is None:
        adam = Adam(model.params, opt_cfg)

    log = []
    best_score, best_epoch, best_state = -np.inf, -1, None
    for epoch in range(start_epoch, epochs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, SHUFFLE_SEED_SALT, epoch]))
        order = rng.permutation(len(train_samples))
        t0 = time.perf_counter()
        esum = csum = 0.0
        etok = ctok = 0
        for lo in range(0, len(order), opt_cfg.batch_size):
            chunk = [train_samples[i] for i in order[lo:lo + opt_cfg.batch_size]]
            with Tape() as tape:
                parts = combined_loss(model, chunk, partition, loss_cfg, mu=mu)
                loss = T.mul(parts.total, 1.0 / len(chunk))
                if opt_cfg.l2 > 0.0:
                    loss = T.add(loss, _l2_penalty(model, opt_cfg.l2))
                if not np.isfinite(loss.data):
                    where = T.first_nonfinite(tape)
                    raise NumericsError(f"non-finite training loss at epoch {epoch}; "
                                        f"first bad tensor: {where}")
                model.zero_grad()
                T.backward(loss)
            for name, p in model.params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericsError(f"non-finite gradient in {name} at epoch {epoch}")
            adam.step()
            esum += parts.expert_sum
            csum += parts.chair_sum
            etok += parts.expert_tokens
            ctok += parts.chair_tokens

        lam = loss_cfg.lambda_
        e_tokmean = esum / etok if etok else 0.0
        c_tokmean = csum / ctok if ctok else 0.0
        row = {
            "epoch": epoch,
            "train_loss": lam * e_tokmean + (1.0 - lam) * c_tokmean,
            "train_expert_loss": e_tokmean,
            "train_chair_loss": c_tokmean,
        }

        valid_samples = list(splits.valid)
        is_score_epoch = (epoch + 1) % validate_every == 0 or epoch == epochs - 1
        if valid_samples:
            vparts = combined_loss(model, valid_samples, partition, loss_cfg, mu=mu)
            ve = vparts.expert_sum / vparts.expert_tokens if vparts.expert_tokens else 0.0
            vc = vparts.chair_sum / vparts.chair_tokens if vparts.chair_tokens else 0.0
            row["valid_loss"] = lam * ve + (1.0 - lam) * vc
            if score_fn is not None and is_score_epoch:
                row["valid_score"] = float(score_fn(model, valid_samples, flags))
                if row["valid_score"] > best_score:
                    best_score = row["valid_score"]
                    best_epoch = epoch
                    best_state = model.params.state_dict()
        log.append(row)
        if log_fn is not None:
            log_fn(f"epoch {epoch}: loss {row['train_loss']:.4f}"
                   + (f" valid {row.get('valid_loss'):.4f}" if "valid_loss" in row else "")
                   + (f" score {row['valid_score']:.2f}" if "valid_score" in row else "")
                   + f" ({time.perf_counter() - t0:.1f}s)")

    final_state = model.params.state_dict()
    if best_state is None:
        best_state, best_epoch, best_score = final_state, epochs - 1, float("nan")
    return TrainResult(log=log, best_epoch=best_epoch, best_score=best_score,
                       best_state=best_state, final_state=final_state,
                       adam_state=adam.state_dict(), epochs_run=epochs)
