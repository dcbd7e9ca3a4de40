"""Dual-encoder story generator with cross-attention feature fusion.

A context encoder and an event encoder (no shared stack weights, one shared
token embedding) feed a fusion block: event positions attend over context
positions head by head, the concatenated head outputs are projected, scaled
by a residual factor, and added back onto the event features. The decoder
attends over the concatenation of context features and fused event features
while predicting story tokens. During training the decoder also emits one
hidden state per sentence separator; a bilinear head turns those into a
predicted inter-sentence similarity matrix that is pulled toward the
embedding-derived ground truth by an auxiliary loss with a constant floor.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .bpe import BpeVocab
from .corpus import StoryRecord, insert_sep_tokens
from .events import EventSequence, serialize_events


class ModelError(ValueError):
    pass


class LengthError(ModelError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    model_dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    max_positions: int = 256
    max_sentences: int = 10
    beta: float = 0.1        # residual scale on the fused attention output
    delta: float = 0.1       # floor of the sentence-similarity loss
    lam: float = 0.1         # weight of the sentence-similarity loss
    dropout: float = 0.1
    seed: int = 42
    batch_size: int = 64
    learning_rate: float = 8e-5
    epochs: int = 5
    infer_batch_size: int = 15
    nucleus_p: float = 0.9
    use_cm: bool = True
    use_sen: bool = True
    use_leading: bool = True
    use_events: bool = True

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ModelError(f"model_dim {self.model_dim} not divisible by "
                             f"{self.heads} heads")
        if min(self.beta, self.delta, self.lam) < 0:
            raise ModelError("beta, delta, and lambda must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.model_dim // self.heads

    def shape_hash(self) -> str:
        shape_fields = ("vocab_size", "model_dim", "layers", "heads", "ffn_dim",
                        "max_positions", "max_sentences")
        payload = json.dumps({k: getattr(self, k) for k in shape_fields},
                             sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class FusionTrace:
    f_c: Optional[T.Tensor] = None
    f_e: Optional[T.Tensor] = None
    head_weights: list[np.ndarray] = field(default_factory=list)
    head_outputs: list[T.Tensor] = field(default_factory=list)
    f_ca: Optional[T.Tensor] = None
    f_he: Optional[T.Tensor] = None
    f_h: Optional[T.Tensor] = None


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _stack_param_shapes(prefix: str, cfg: ModelConfig, cross: bool) -> dict:
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes = {f"{prefix}.pos": (cfg.max_positions, d),
              f"{prefix}.emb_ln.g": (d,), f"{prefix}.emb_ln.b": (d,)}
    blocks = ["self"] + (["cross"] if cross else [])
    for layer in range(cfg.layers):
        base = f"{prefix}.l{layer}"
        for block in blocks:
            for w in ("wq", "wk", "wv", "wo"):
                shapes[f"{base}.{block}.{w}"] = (d, d)
            for b in ("bq", "bk", "bv", "bo"):
                shapes[f"{base}.{block}.{b}"] = (d,)
        shapes[f"{base}.ffn.w1"] = (d, f)
        shapes[f"{base}.ffn.b1"] = (f,)
        shapes[f"{base}.ffn.w2"] = (f, d)
        shapes[f"{base}.ffn.b2"] = (d,)
        n_ln = 3 if cross else 2
        for i in range(1, n_ln + 1):
            shapes[f"{base}.ln{i}.g"] = (d,)
            shapes[f"{base}.ln{i}.b"] = (d,)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.model_dim
    shapes = {"embed.tok": (cfg.vocab_size, d),
              "out.w": (d, cfg.vocab_size),
              "sim.wsep": (d, d),
              "fuse.wm": (d, d)}
    for h in range(cfg.heads):
        for w in ("wq", "wk", "wv"):
            shapes[f"fuse.h{h}.{w}"] = (d, cfg.d_k)
    shapes.update(_stack_param_shapes("enc_c", cfg, cross=False))
    shapes.update(_stack_param_shapes("enc_e", cfg, cross=False))
    shapes.update(_stack_param_shapes("dec", cfg, cross=True))
    return shapes


class ModelState:
    """Named parameters plus training metadata; owned by one loop at a time."""

    def __init__(self, config: ModelConfig, params: dict[str, T.Tensor],
                 lineage: str = "scratch", trained: bool = False):
        self.config = config
        self.params = params
        self.lineage = lineage
        self.trained = trained

    def param_items(self) -> list[tuple[str, T.Tensor]]:
        return sorted(self.params.items())

    def param_list(self) -> list[T.Tensor]:
        return [p for _, p in self.param_items()]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, arr in snapshot.items():
            self.params[name].data[...] = arr


def init_model(config: ModelConfig) -> ModelState:
    """Seeded Gaussian initialization; layer norms start at identity."""
    rng = T.seeded_rng(config.seed, stream=0)
    shapes = param_shapes(config)
    params: dict[str, T.Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith("ln.g") or ".ln" in name and name.endswith(".g"):
            params[name] = T.ones(shape)
        elif name.endswith(".b") or name.endswith("b1") or name.endswith("b2") \
                or name.endswith(("bq", "bk", "bv", "bo")):
            params[name] = T.zeros(shape)
        else:
            params[name] = T.gaussian(rng, shape, std=0.02)
    return ModelState(config, params)


# ---------------------------------------------------------------------------
# forward blocks
# ---------------------------------------------------------------------------


def _maybe_dropout(x, cfg, training, rng):
    if training and cfg.dropout > 0.0:
        return T.dropout(x, cfg.dropout, rng)
    return x


def _multi_head_attention(params, base, query, memory, heads,
                          causal=False, attn_sink=None):
    tq, d = query.shape
    tk = memory.shape[0]
    dk = d // heads
    q = T.add(T.matmul(query, params[f"{base}.wq"]), params[f"{base}.bq"])
    k = T.add(T.matmul(memory, params[f"{base}.wk"]), params[f"{base}.bk"])
    v = T.add(T.matmul(memory, params[f"{base}.wv"]), params[f"{base}.bv"])
    qh = T.transpose(T.reshape(q, (tq, heads, dk)), (1, 0, 2))
    kh = T.transpose(T.reshape(k, (tk, heads, dk)), (1, 0, 2))
    vh = T.transpose(T.reshape(v, (tk, heads, dk)), (1, 0, 2))
    scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dk))
    if causal:
        future = np.triu(np.ones((tq, tk), dtype=bool), k=1)
        scores = T.mask_fill(scores, future, -1e9)
    weights = T.softmax_lastdim(scores)
    if attn_sink is not None:
        attn_sink.append(weights.data)
    ctx = T.reshape(T.transpose(T.matmul(weights, vh), (1, 0, 2)), (tq, d))
    return T.add(T.matmul(ctx, params[f"{base}.wo"]), params[f"{base}.bo"])


def _embed_positions(state, prefix, ids, training, rng):
    cfg = state.config
    if len(ids) == 0:
        raise LengthError(f"{prefix}: empty input sequence")
    if len(ids) > cfg.max_positions:
        raise LengthError(f"{prefix}: sequence of {len(ids)} tokens exceeds "
                          f"max positions {cfg.max_positions}")
    x = T.embedding_lookup(state.params["embed.tok"], ids)
    pos = T.slice_axis(state.params[f"{prefix}.pos"], 0, 0, len(ids))
    x = T.layer_norm(T.add(x, pos), state.params[f"{prefix}.emb_ln.g"],
                     state.params[f"{prefix}.emb_ln.b"])
    return _maybe_dropout(x, cfg, training, rng)


def _encoder_stack(state, prefix, ids, training=False, rng=None, attn_sink=None):
    cfg = state.config
    x = _embed_positions(state, prefix, ids, training, rng)
    for layer in range(cfg.layers):
        base = f"{prefix}.l{layer}"
        attn = _multi_head_attention(state.params, f"{base}.self", x, x,
                                     cfg.heads, attn_sink=attn_sink)
        x = T.layer_norm(T.add(x, _maybe_dropout(attn, cfg, training, rng)),
                         state.params[f"{base}.ln1.g"], state.params[f"{base}.ln1.b"])
        ffn = T.add(T.matmul(T.gelu(T.add(T.matmul(x, state.params[f"{base}.ffn.w1"]),
                                          state.params[f"{base}.ffn.b1"])),
                             state.params[f"{base}.ffn.w2"]),
                    state.params[f"{base}.ffn.b2"])
        x = T.layer_norm(T.add(x, _maybe_dropout(ffn, cfg, training, rng)),
                         state.params[f"{base}.ln2.g"], state.params[f"{base}.ln2.b"])
    return x


def encode(state: ModelState, c_ids, e_ids, training=False, rng=None,
           attn_sink=None) -> tuple[T.Tensor, T.Tensor]:
    """Run both encoder stacks; they share only the token embedding table."""
    f_c = _encoder_stack(state, "enc_c", c_ids, training, rng, attn_sink)
    f_e = _encoder_stack(state, "enc_e", e_ids, training, rng, attn_sink)
    return f_c, f_e


def cross_attention_fuse(state: ModelState, f_c: T.Tensor, f_e: T.Tensor,
                         trace: Optional[FusionTrace] = None) -> T.Tensor:
    """Event positions attend over context positions, one projection per head.

    Output has the event features' shape: one fused vector per event position.
    """
    cfg = state.config
    heads = []
    for h in range(cfg.heads):
        q = T.matmul(f_e, state.params[f"fuse.h{h}.wq"])
        k = T.matmul(f_c, state.params[f"fuse.h{h}.wk"])
        v = T.matmul(f_c, state.params[f"fuse.h{h}.wv"])
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(cfg.d_k))
        weights = T.softmax_lastdim(scores)
        head = T.matmul(weights, v)
        heads.append(head)
        if trace is not None:
            trace.head_weights.append(weights.data)
            trace.head_outputs.append(head)
    f_ca = T.matmul(T.concat(heads, axis=-1), state.params["fuse.wm"])
    if trace is not None:
        trace.f_c, trace.f_e, trace.f_ca = f_c, f_e, f_ca
    return f_ca


def contextualize(config: ModelConfig, f_c: T.Tensor, f_e: T.Tensor,
                  f_ca: Optional[T.Tensor],
                  trace: Optional[FusionTrace] = None) -> T.Tensor:
    """Residual-map fused context onto the event features, then concatenate.

    With the fusion module disabled, or a zero residual scale, the event
    features pass through bit-identically.
    """
    if config.use_cm and f_ca is not None and config.beta != 0.0:
        f_he = T.add(f_e, T.scale(f_ca, config.beta))
    else:
        f_he = f_e
    f_h = T.concat([f_c, f_he], axis=0)
    if trace is not None:
        trace.f_he, trace.f_h = f_he, f_h
    return f_h


def _decoder_stack(state, y_ids, f_h, training=False, rng=None, attn_sink=None):
    cfg = state.config
    x = _embed_positions(state, "dec", y_ids, training, rng)
    for layer in range(cfg.layers):
        base = f"dec.l{layer}"
        self_attn = _multi_head_attention(state.params, f"{base}.self", x, x,
                                          cfg.heads, causal=True, attn_sink=attn_sink)
        x = T.layer_norm(T.add(x, _maybe_dropout(self_attn, cfg, training, rng)),
                         state.params[f"{base}.ln1.g"], state.params[f"{base}.ln1.b"])
        cross = _multi_head_attention(state.params, f"{base}.cross", x, f_h,
                                      cfg.heads, attn_sink=attn_sink)
        x = T.layer_norm(T.add(x, _maybe_dropout(cross, cfg, training, rng)),
                         state.params[f"{base}.ln2.g"], state.params[f"{base}.ln2.b"])
        ffn = T.add(T.matmul(T.gelu(T.add(T.matmul(x, state.params[f"{base}.ffn.w1"]),
                                          state.params[f"{base}.ffn.b1"])),
                             state.params[f"{base}.ffn.w2"]),
                    state.params[f"{base}.ffn.b2"])
        x = T.layer_norm(T.add(x, _maybe_dropout(ffn, cfg, training, rng)),
                         state.params[f"{base}.ln3.g"], state.params[f"{base}.ln3.b"])
    logits = T.matmul(x, state.params["out.w"])
    return x, logits


def decode_step(y_prefix, f_h: T.Tensor, state: ModelState) -> tuple[T.Tensor, T.Tensor]:
    """Hidden state and vocabulary logits for the next-token position."""
    if len(y_prefix) < 1:
        raise LengthError("decoder prefix must contain at least the start token")
    hidden, logits = _decoder_stack(state, list(y_prefix), f_h)
    last = hidden.shape[0] - 1
    return (T.reshape(T.slice_axis(logits, 0, last, last + 1), (logits.shape[1],)),
            T.reshape(T.slice_axis(hidden, 0, last, last + 1), (hidden.shape[1],)))


def predict_sentence_similarity(sep_states: T.Tensor, state: ModelState) -> T.Tensor:
    """Symmetric predicted similarity: sigmoid of the bilinear form both ways."""
    if sep_states.ndim != 2 or sep_states.shape[0] < 2:
        raise ModelError("similarity prediction needs at least 2 separator states")
    u = T.matmul(T.matmul(sep_states, state.params["sim.wsep"]),
                 T.transpose(sep_states))
    return T.sigmoid(T.add(u, T.transpose(u)))


def sentence_similarity_loss(sim_true: np.ndarray, sim_pred: T.Tensor,
                             delta: float, hinge: bool = False) -> T.Tensor:
    """Mean over all entry pairs of the floored absolute similarity gap.

    The printed objective keeps a constant floor delta inside the margin; the
    hinge variant (max(|gap| - delta, 0)) is available behind a flag.
    """
    gap = T.abs_(T.sub(T.Tensor(sim_true), sim_pred))
    if hinge:
        return T.mean_(T.maximum(T.sub(gap, T.Tensor(float(delta))), 0.0))
    return T.mean_(T.maximum(gap, float(delta)))


# ---------------------------------------------------------------------------
# record-level forward and loss
# ---------------------------------------------------------------------------


@dataclass
class RecordOutput:
    ce_sum: T.Tensor
    token_count: int
    sim_pred: Optional[T.Tensor] = None
    sim_true: Optional[np.ndarray] = None
    trace: Optional[FusionTrace] = None
    logits: Optional[T.Tensor] = None


def build_model_inputs(record: StoryRecord, vocab: BpeVocab,
                       config: ModelConfig) -> tuple[list[int], list[int]]:
    """Encoder inputs for one record, honoring the input ablation flags."""
    if config.use_leading:
        c_ids = [vocab.bos_id] + list(record.leading_ids) + [vocab.eos_id]
    else:
        c_ids = [vocab.bos_id, vocab.eos_id]
    if config.use_events:
        e_ids = list(record.event_ids)
    else:
        e_ids = vocab.encode(serialize_events(EventSequence([])))
    return c_ids, e_ids


def forward_record(state: ModelState, record: StoryRecord, vocab: BpeVocab,
                   training=False, rng=None, collect_trace=False) -> RecordOutput:
    cfg = state.config
    c_ids, e_ids = build_model_inputs(record, vocab, cfg)
    trace = FusionTrace() if collect_trace else None
    attn_sink = [] if collect_trace else None
    f_c, f_e = encode(state, c_ids, e_ids, training, rng, attn_sink)
    f_ca = cross_attention_fuse(state, f_c, f_e, trace) if cfg.use_cm else None
    f_h = contextualize(cfg, f_c, f_e, f_ca, trace)

    target = insert_sep_tokens(record.sentence_ids, vocab)
    y_in = [vocab.bos_id] + target[:-1]
    hidden, logits = _decoder_stack(state, y_in, f_h, training, rng, attn_sink)
    ce_sum = T.cross_entropy_with_logits(logits, target, ignore_id=vocab.pad_id,
                                         reduction="sum")
    out = RecordOutput(ce_sum=ce_sum, token_count=len(target),
                       trace=trace, logits=logits)

    if cfg.use_sen and record.sim is not None and record.m >= 2:
        sep_ids = {vocab.sep_id(i) for i in range(1, record.m + 1)}
        positions = [t for t, tok in enumerate(y_in) if tok in sep_ids]
        if len(positions) != record.m:
            raise ModelError(f"{record.story_id}: found {len(positions)} separator "
                             f"positions for {record.m} sentences")
        sep_states = T.take_rows(hidden, positions)
        out.sim_pred = predict_sentence_similarity(sep_states, state)
        out.sim_true = record.sim
    return out


@dataclass
class LossTerms:
    l_lm: T.Tensor
    l_sent: Optional[T.Tensor]
    l_overall: T.Tensor

    def as_floats(self) -> tuple[float, float, float]:
        return (self.l_lm.item(),
                self.l_sent.item() if self.l_sent is not None else 0.0,
                self.l_overall.item())


def compute_loss(outputs: list[RecordOutput], config: ModelConfig) -> LossTerms:
    """Token-weighted language-model loss plus the similarity auxiliary.

    With the auxiliary disabled or weighted to zero, the overall loss IS the
    language-model loss (the same node, not a copy).
    """
    if not outputs:
        raise ModelError("loss over an empty batch")
    total_ce = outputs[0].ce_sum
    for out in outputs[1:]:
        total_ce = T.add(total_ce, out.ce_sum)
    total_tokens = sum(out.token_count for out in outputs)
    l_lm = T.scale(total_ce, 1.0 / total_tokens)

    sent_terms = [sentence_similarity_loss(out.sim_true, out.sim_pred, config.delta)
                  for out in outputs
                  if out.sim_pred is not None]
    l_sent = None
    if config.use_sen and sent_terms:
        acc = sent_terms[0]
        for term in sent_terms[1:]:
            acc = T.add(acc, term)
        l_sent = T.scale(acc, 1.0 / len(sent_terms))
    if l_sent is None or config.lam == 0.0:
        return LossTerms(l_lm=l_lm, l_sent=l_sent, l_overall=l_lm)
    return LossTerms(l_lm=l_lm, l_sent=l_sent,
                     l_overall=T.add(l_lm, T.scale(l_sent, config.lam)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    state: ModelState
    curve: list[dict]
    best_val: Optional[float] = None


def evaluate_loss(state: ModelState, records: list[StoryRecord],
                  vocab: BpeVocab) -> LossTerms:
    with T.no_grad():
        outputs = [forward_record(state, r, vocab) for r in records]
        return compute_loss(outputs, state.config)


def train(records: list[StoryRecord], config: ModelConfig, vocab: BpeVocab,
          epochs: Optional[int] = None, max_steps: Optional[int] = None,
          val_records: Optional[list[StoryRecord]] = None,
          state: Optional[ModelState] = None, lineage: Optional[str] = None,
          log_path=None) -> TrainResult:
    """Teacher-forced training; keeps the lowest-validation-loss parameters."""
    if not records:
        raise ModelError("cannot train on an empty dataset")
    if state is None:
        state = init_model(config)
    else:
        config = state.config
    epochs = config.epochs if epochs is None else epochs
    shuffle_rng = T.seeded_rng(config.seed, stream=1)
    dropout_rng = T.seeded_rng(config.seed, stream=2)
    optimizer = T.AdamState(state.param_list(), lr=config.learning_rate)

    curve: list[dict] = []
    best_val = None
    best_snapshot = None
    step = 0
    start = time.perf_counter()
    done = False
    for _ in range(epochs):
        if done:
            break
        order = shuffle_rng.permutation(len(records))
        for lo in range(0, len(records), config.batch_size):
            batch = [records[i] for i in order[lo:lo + config.batch_size]]
            outputs = [forward_record(state, r, vocab, training=True,
                                      rng=dropout_rng) for r in batch]
            losses = compute_loss(outputs, config)
            T.backward(losses.l_overall)
            T.adam_step(state.param_list(), optimizer)
            step += 1
            l_lm, l_sent, l_all = losses.as_floats()
            curve.append({"step": step, "l_lm": l_lm, "l_sent": l_sent,
                          "l_overall": l_all,
                          "wall": time.perf_counter() - start})
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if val_records:
            val = evaluate_loss(state, val_records, vocab).l_overall.item()
            if best_val is None or val < best_val:
                best_val = val
                best_snapshot = state.snapshot()
    if best_snapshot is not None:
        state.restore(best_snapshot)
    if step > 0:
        state.trained = True
        if lineage is not None:
            state.lineage = lineage
    if log_path is not None:
        write_training_log(log_path, curve)
    return TrainResult(state=state, curve=curve, best_val=best_val)


def posttrain(state: ModelState, book_records: list[StoryRecord],
              vocab: BpeVocab, epochs: int,
              log_path=None) -> TrainResult:
    """Continued training on reconstructed long-text records, tagged 'ke'."""
    if epochs == 0:
        return TrainResult(state=state, curve=[])
    return train(book_records, state.config, vocab, epochs=epochs, state=state,
                 lineage="ke", log_path=log_path)


def write_training_log(path, curve: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,l_lm,l_sent,l_overall,wall\n")
        for row in curve:
            fh.write(f"{row['step']},{row['l_lm']:.6f},{row['l_sent']:.6f},"
                     f"{row['l_overall']:.6f},{row['wall']:.3f}\n")


def transfer_encoder_weights(donor: ModelState, target: ModelState) -> ModelState:
    """Copy the donor's context-encoder stack onto the target's event encoder."""
    donor_names = [n for n in donor.params if n.startswith("enc_c.")]
    for name in donor_names:
        dest = "enc_e." + name[len("enc_c."):]
        if dest not in target.params:
            raise ModelError(f"target has no parameter {dest}")
        if target.params[dest].shape != donor.params[name].shape:
            raise ModelError(f"shape mismatch for {dest}: donor "
                             f"{donor.params[name].shape} vs target "
                             f"{target.params[dest].shape}")
    for name in donor_names:
        dest = "enc_e." + name[len("enc_c."):]
        target.params[dest].data[...] = donor.params[name].data
    return target


# ---------------------------------------------------------------------------
# sampling and generation
# ---------------------------------------------------------------------------


def sample_token(probs: np.ndarray, strategy: str = "greedy",
                 rng: Optional[np.random.Generator] = None,
                 p: float = 1.0) -> int:
    """Greedy argmax (lowest id on ties) or nucleus sampling at mass p."""
    probs = np.asarray(probs, dtype=np.float64)
    if strategy == "greedy":
        return int(np.argmax(probs))
    if strategy != "nucleus":
        raise ModelError(f"unknown sampling strategy {strategy!r}")
    if not 0.0 < p <= 1.0:
        raise ModelError(f"nucleus p must be in (0, 1], got {p}")
    if rng is None:
        raise ModelError("nucleus sampling needs a random generator")
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cutoff = int(np.searchsorted(cum, p)) + 1
    support = order[:cutoff]
    mass = probs[support]
    return int(rng.choice(support, p=mass / mass.sum()))


@dataclass
class GenerationResult:
    text: str
    token_ids: list[int]
    warnings: list[str] = field(default_factory=list)


def _detokenize(ids: list[int], vocab: BpeVocab) -> str:
    """Decode generated ids, dropping structural tokens; separators become
    sentence boundaries."""
    sep_ids = {vocab.sep_id(i) for i in range(1, vocab.max_sentences + 1)}
    structural = {vocab.pad_id, vocab.bos_id, vocab.eos_id} | {
        vocab.token_to_id[t] for t in ("<e_s>", "<e_sep>", "<e_e>", "<e_none>")}
    segments: list[list[int]] = [[]]
    for tok in ids:
        if tok in sep_ids:
            segments.append([])
        elif tok not in structural:
            segments[-1].append(tok)
    texts = [" ".join(vocab.decode(seg).split()) for seg in segments]
    return " ".join(t for t in texts if t)


def generate(state: ModelState, vocab: BpeVocab, leading_text: str,
             events, strategy: str = "nucleus", p: float = 0.9,
             rng: Optional[np.random.Generator] = None,
             max_new_tokens: int = 150) -> GenerationResult:
    """Autoregressive story generation from a leading sentence and events.

    `events` may be an EventSequence or an already-serialized event string.
    Ablation flags on the model config control which inputs are fed.
    """
    cfg = state.config
    warnings = [] if state.trained else ["untrained-state"]
    if isinstance(events, EventSequence):
        event_text = serialize_events(events)
    else:
        event_text = str(events)
    if strategy == "nucleus" and rng is None:
        rng = T.seeded_rng(cfg.seed, stream=5)

    record_like = StoryRecord(
        story_id="", leading_text=leading_text, sentence_texts=[],
        leading_ids=vocab.encode(leading_text), sentence_ids=[],
        event_text=event_text, event_ids=vocab.encode(event_text))
    c_ids, e_ids = build_model_inputs(record_like, vocab, cfg)

    with T.no_grad():
        f_c, f_e = encode(state, c_ids, e_ids)
        f_ca = cross_attention_fuse(state, f_c, f_e) if cfg.use_cm else None
        f_h = contextualize(cfg, f_c, f_e, f_ca)
        y = [vocab.bos_id]
        generated: list[int] = []
        for _ in range(max_new_tokens):
            _, logits = _decoder_stack(state, y, f_h)
            probs = T.softmax_lastdim(
                T.slice_axis(logits, 0, logits.shape[0] - 1, logits.shape[0]))
            token = sample_token(probs.data[0], strategy, rng, p)
            if token == vocab.eos_id:
                break
            generated.append(token)
            y.append(token)
            if len(y) >= cfg.max_positions:
                break
    return GenerationResult(text=_detokenize(generated, vocab),
                            token_ids=generated, warnings=warnings)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_model(directory, state: ModelState, extra: Optional[dict] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T.save_params(directory / "checkpoint.sfck", state.params)
    sidecar = {"config": asdict(state.config), "lineage": state.lineage,
               "trained": state.trained, "config_hash": state.config.shape_hash()}
    if extra:
        sidecar.update(extra)
    with open(directory / "checkpoint.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_model(directory, overrides: Optional[dict] = None) -> ModelState:
    """Rebuild a ModelState from checkpoint plus sidecar.

    `overrides` may adjust non-shape fields (ablations, sampling); shape
    fields must match the stored hash.
    """
    directory = Path(directory)
    with open(directory / "checkpoint.json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    config_dict = dict(sidecar["config"])
    if overrides:
        config_dict.update(overrides)
    config = ModelConfig(**config_dict)
    if config.shape_hash() != sidecar["config_hash"]:
        raise T.CheckpointError("configuration hash mismatch: the requested "
                                "model shape differs from the checkpoint")
    loaded = T.load_params(directory / "checkpoint.sfck")
    T.validate_params(loaded, param_shapes(config))
    params = {name: T.Tensor(arr, requires_grad=True)
              for name, arr in loaded.items()}
    return ModelState(config, params, lineage=sidecar.get("lineage", "scratch"),
                      trained=sidecar.get("trained", False))
