"""The three-network translation model.

1. A character-level LSTM embeds out-of-vocabulary source tokens into the
   word-embedding space (final hidden state, linearly projected).
2. A bidirectional token-level LSTM turns the embedded source into one
   annotation per token (forward state ++ backward state).
3. An attentional LSTM decoder emits characters, words or BPE pieces.

Decoder step (teacher forcing or search)::

    e    = embed(y_prev)
    h, c = LSTM([e ; ctx_prev], h, c)
    ctx  = attend(h, annotations)
    r    = tanh(Ws h + We e + Wc ctx + b)    # context gate: (1-z)(Ws h + We e) + z(Wc ctx)
    p    = softmax(Wo r + bo)

The initial decoder state is ``tanh(Winit h_bw[0] + binit)``, a projection of
the backward encoder's final state. Backward-direction models are trained on
reversed target sequences; :meth:`HNMTModel.render` restores surface order.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ContractError, ParameterError
from .layers import (
    AttentionModule,
    ContextGate,
    EmbeddingTable,
    Linear,
    LstmCell,
    Module,
    context_gate_apply,
    sample_mask,
)
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

INIT_CONVENTION = "glorot-uniform matrices, zero biases, forget bias +1, embeddings N(0, 0.1)"


@dataclass
class ModelConfig:
    word_embed_dim: int = 256
    char_embed_dim: int = 64
    encoder_state_dim: int = 512
    decoder_state_dim: int = 1024
    attention_dim: int = 256
    char_state_dim: int = None
    decoder_level: str = "bpe"
    direction: str = "forward"
    layernorm: bool = False
    keep_prob: float = 1.0
    context_gates: bool = False

    def __post_init__(self):
        if self.char_state_dim is None:
            self.char_state_dim = self.word_embed_dim
        dims = ("word_embed_dim", "char_embed_dim", "encoder_state_dim",
                "decoder_state_dim", "attention_dim", "char_state_dim")
        for name in dims:
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.decoder_level not in ("char", "word", "bpe"):
            raise ParameterError(f"unknown decoder level {self.decoder_level!r}")
        if self.direction not in ("forward", "backward"):
            raise ParameterError(f"unknown direction {self.direction!r}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ParameterError("keep_prob must be in (0, 1]")

    @property
    def target_embed_dim(self):
        return self.char_embed_dim if self.decoder_level == "char" else self.word_embed_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class EncodedSource:
    """Annotations for a batch of source sentences, plus what attention needs."""

    annotations: T.Tensor      # (B, S, 2 * encoder_state_dim)
    projected: T.Tensor        # (B, S, attention_dim)
    mask: np.ndarray           # (B, S) bool, False on padding
    final_backward: T.Tensor   # (B, encoder_state_dim)
    lengths: list

    def __len__(self):
        return self.annotations.shape[1]

    def vectors(self, b=0):
        """Annotation matrix (L, 2H) of sentence ``b`` without padding."""
        return self.annotations.data[b, : self.lengths[b]]


def _pad(seqs, pad=PAD_ID):
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


class HybridEncoder(Module):
    def __init__(self, config, src_vocab, src_chars, rng):
        super().__init__("encoder")
        c = config
        self.src_vocab = src_vocab
        self.src_chars = src_chars
        self.word_emb = self._adopt(EmbeddingTable("encoder.word_emb", len(src_vocab), c.word_embed_dim, rng))
        self.char_emb = self._adopt(EmbeddingTable("encoder.char_emb", len(src_chars), c.char_embed_dim, rng))
        self.char_lstm = self._adopt(LstmCell("encoder.char_lstm", c.char_embed_dim, c.char_state_dim, rng, c.layernorm))
        self.char_proj = self._adopt(Linear("encoder.char_proj", c.char_state_dim, c.word_embed_dim, rng))
        self.fw = self._adopt(LstmCell("encoder.fw", c.word_embed_dim, c.encoder_state_dim, rng, c.layernorm))
        self.bw = self._adopt(LstmCell("encoder.bw", c.word_embed_dim, c.encoder_state_dim, rng, c.layernorm))
        self.char_encoder = self.encode_chars
        self.char_calls = 0

    def is_oov(self, token):
        return token not in self.src_vocab

    def encode_chars(self, words, masks=None):
        """Embed words (list of str) character by character -> (n, word_embed_dim)."""
        ids, mask = _pad([self.src_chars.encode(list(w)) or [PAD_ID] for w in words])
        x = self.char_emb.lookup(ids.T)                     # (L, n, E_c)
        xw = self.char_lstm.project_inputs(x)
        n, hdim = len(words), self.char_lstm.hidden_dim
        dt = self.char_emb.E.data.dtype
        h = T.Tensor(np.zeros((n, hdim), dtype=dt))
        c = T.Tensor(np.zeros((n, hdim), dtype=dt))
        drop = None if masks is None else masks.get("char")
        if drop is not None and drop.values.shape[0] != n:
            drop = sample_mask(drop.keep_prob, (n, hdim), masks["rng"])
        for t in range(ids.shape[1]):
            h2, c2 = self.char_lstm.step_projected(T.index(xw, t), h, c, drop)
            keep = mask[:, t]
            if keep.all():
                h, c = h2, c2
            else:
                h, c = T.where(keep[:, None], h2, h), T.where(keep[:, None], c2, c)
        return self.char_proj(h)

    def embed(self, batch, masks=None):
        """Time-major token embeddings (S, B, E) for a batch of token lists."""
        ids, mask = _pad([self.src_vocab.encode(toks) for toks in batch])
        emb = self.word_emb.lookup(ids.T)
        oov = {}
        for toks in batch:
            for tok in toks:
                if self.is_oov(tok) and tok not in oov:
                    oov[tok] = len(oov)
        if not oov:
            return emb, mask
        self.char_calls += len(oov)
        words = list(oov)
        if self.char_encoder is self.encode_chars:
            vecs = self.encode_chars(words, masks)
        else:
            vecs = T.as_tensor(self.char_encoder(words))
        oov_idx = np.zeros(ids.T.shape, dtype=np.int64)
        oov_mask = np.zeros(ids.T.shape, dtype=bool)
        for b, toks in enumerate(batch):
            for s, tok in enumerate(toks):
                if tok in oov:
                    oov_idx[s, b] = oov[tok]
                    oov_mask[s, b] = True
        return T.where(oov_mask[:, :, None], T.take(vecs, oov_idx), emb), mask

    def __call__(self, batch, masks=None):
        if not batch or any(len(toks) == 0 for toks in batch):
            raise ContractError("cannot encode an empty source sentence")
        emb, mask = self.embed(batch, masks)
        S, B = emb.shape[0], emb.shape[1]
        hdim = self.fw.hidden_dim
        dt = emb.data.dtype
        zero = np.zeros((B, hdim), dtype=dt)
        outs = {}
        for cell, order, key in ((self.fw, range(S), "fw"), (self.bw, range(S - 1, -1, -1), "bw")):
            xw = cell.project_inputs(emb)
            h, c = T.Tensor(zero), T.Tensor(zero)
            drop = None if masks is None else masks.get(key)
            states = [None] * S
            for t in order:
                h2, c2 = cell.step_projected(T.index(xw, t), h, c, drop)
                keep = mask[:, t]
                if keep.all():
                    h, c = h2, c2
                else:
                    h, c = T.where(keep[:, None], h2, h), T.where(keep[:, None], c2, c)
                states[t] = h
            outs[key] = (states, h)
        fw = T.stack(outs["fw"][0], axis=1)
        bw = T.stack(outs["bw"][0], axis=1)
        return T.concat([fw, bw], axis=-1), mask, outs["bw"][1]


class Decoder(Module):
    def __init__(self, config, trg_vocab, rng):
        super().__init__("decoder")
        c = config
        ann = 2 * c.encoder_state_dim
        e = c.target_embed_dim
        self.config = c
        self.emb = self._adopt(EmbeddingTable("decoder.emb", len(trg_vocab), e, rng))
        self.init = self._adopt(Linear("decoder.init", c.encoder_state_dim, c.decoder_state_dim, rng))
        self.lstm = self._adopt(LstmCell("decoder.lstm", e + ann, c.decoder_state_dim, rng, c.layernorm))
        self.attention = self._adopt(AttentionModule("decoder.attention", ann, c.decoder_state_dim, c.attention_dim, rng))
        self.read_s = self._adopt(Linear("decoder.read_s", c.decoder_state_dim, e, rng, bias=False))
        self.read_e = self._adopt(Linear("decoder.read_e", e, e, rng, bias=False))
        self.read_c = self._adopt(Linear("decoder.read_c", ann, e, rng, bias=False))
        self.read_b = self._add("read_b", np.zeros(e, dtype=np.float32))
        self.gate = None
        if c.context_gates:
            self.gate = self._adopt(ContextGate("decoder.gate", e, c.decoder_state_dim, ann, e, rng))
        self.out = self._adopt(Linear("decoder.out", e, len(trg_vocab), rng))

    def initial_state(self, enc):
        h = T.tanh(self.init(enc.final_backward))
        B = h.shape[0]
        dt = h.data.dtype
        c = T.Tensor(np.zeros((B, self.lstm.hidden_dim), dtype=dt))
        ctx = T.Tensor(np.zeros((B, enc.annotations.shape[2]), dtype=dt))
        return h, c, ctx

    def readout(self, h, e, ctx):
        target = T.add(self.read_s(h), self.read_e(e))
        source = self.read_c(ctx)
        if self.gate is not None:
            source, target = context_gate_apply(
                self.gate, source, target, state=h, prev_embedding=e, context=ctx
            )
        return T.tanh(T.bias_add(T.add(target, source), self.read_b))

    def step(self, enc, state, prev_ids, mask=None):
        """One decoder step; returns ``(readout, new_state, attention_weights)``."""
        h, c, ctx = state
        e = self.emb.lookup(prev_ids)
        x = T.concat([e, ctx], axis=-1)
        h, c = self.lstm.step_projected(self.lstm.project_inputs(x), h, c, mask)
        ctx, w = self.attention(h, enc.annotations, enc.projected, enc.mask)
        return self.readout(h, e, ctx), (h, c, ctx), w

    def logits(self, r):
        return self.out(r)


class HNMTModel:
    def __init__(self, config, src_vocab, src_chars, trg_vocab, seed=0):
        if trg_vocab.level != config.decoder_level:
            raise ParameterError(
                f"target vocabulary level {trg_vocab.level!r} != decoder level {config.decoder_level!r}"
            )
        self.config = config
        self.src_vocab = src_vocab
        self.src_chars = src_chars
        self.trg_vocab = trg_vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = HybridEncoder(config, src_vocab, src_chars, rng)
        self.decoder = Decoder(config, trg_vocab, rng)
        self.params = {**self.encoder.params, **self.decoder.params}

    # -- parameters -------------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, values):
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise CheckpointError(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in self.params.items():
            v = np.asarray(values[name])
            if v.shape != p.shape:
                raise CheckpointError(f"parameter {name!r}: shape {v.shape} != model shape {p.shape}")
        for name, p in self.params.items():
            p.data = np.array(values[name], dtype=np.float32)
            p.grad = np.zeros_like(p.data)

    # -- target-side conventions -----------------------------------------

    def target_ids(self, symbols):
        ids = self.trg_vocab.encode(symbols)
        return ids[::-1] if self.config.direction == "backward" else ids

    def render_symbols(self, ids):
        symbols = self.trg_vocab.decode(ids)
        return symbols[::-1] if self.config.direction == "backward" else symbols

    def render(self, ids):
        """Surface string for generated ids (surface order, BPE rejoined)."""
        return self.trg_vocab.surface(self.render_symbols(ids))

    # -- forward passes ---------------------------------------------------

    def sample_masks(self, batch_size, rng):
        c = self.config
        if c.keep_prob >= 1.0 or rng is None:
            return None
        return {
            "rng": rng,
            "fw": sample_mask(c.keep_prob, (batch_size, c.encoder_state_dim), rng),
            "bw": sample_mask(c.keep_prob, (batch_size, c.encoder_state_dim), rng),
            "dec": sample_mask(c.keep_prob, (batch_size, c.decoder_state_dim), rng),
            "char": sample_mask(c.keep_prob, (1, c.char_state_dim), rng),
        }

    def encode(self, sources, masks=None):
        annotations, mask, final_bw = self.encoder(sources, masks)
        return EncodedSource(
            annotations=annotations,
            projected=self.decoder.attention.precompute(annotations),
            mask=mask,
            final_backward=final_bw,
            lengths=[len(s) for s in sources],
        )

    def _teacher_forced(self, pairs, masks=None):
        sources = [s for s, _ in pairs]
        enc = self.encode(sources, masks)
        targets = [self.target_ids(t) + [EOS_ID] for _, t in pairs]
        tgt, tmask = _pad(targets)
        inputs = np.concatenate([np.full((len(pairs), 1), BOS_ID), tgt[:, :-1]], axis=1)
        state = self.decoder.initial_state(enc)
        drop = None if masks is None else masks.get("dec")
        reads = []
        for t in range(tgt.shape[1]):
            r, state, _ = self.decoder.step(enc, state, inputs[:, t], drop)
            reads.append(r)
        R = T.stack(reads, axis=0)                              # (T, B, E)
        logits = self.decoder.logits(T.reshape(R, (-1, R.shape[2])))
        return logits, tgt.T.reshape(-1), tmask.T.reshape(-1)

    def compute_loss(self, pairs, rng=None):
        """Mean per-token negative log-likelihood (nats, EOS included)."""
        if not pairs:
            raise ContractError("empty batch")
        masks = self.sample_masks(len(pairs), rng)
        logits, tgt, tmask = self._teacher_forced(pairs, masks)
        return T.cross_entropy(logits, tgt, tmask)

    def token_logprobs(self, pairs):
        """Per-pair arrays of log p(reference symbol), EOS included (float64)."""
        logits, tgt, tmask = self._teacher_forced(pairs)
        lp = T.log_softmax(logits).data.astype(np.float64)
        picked = lp[np.arange(len(tgt)), tgt].reshape(-1, len(pairs))    # (T, B)
        return [picked[: len(self.target_ids(t)) + 1, b] for b, (_, t) in enumerate(pairs)]

    def score(self, source, target_symbols):
        """Log-probability of a target symbol sequence given a source."""
        return float(self.token_logprobs([(source, target_symbols)])[0].sum())

    def step_distribution(self, enc, state, prev_ids):
        r, state, w = self.decoder.step(enc, state, prev_ids)
        probs = T.softmax(self.decoder.logits(r)).data
        return probs, state, w.data

    def greedy(self, sources, max_len=None):
        """Batched greedy decoding; returns generated id lists (EOS stripped)."""
        enc = self.encode(sources)
        B = len(sources)
        if max_len is None:
            max_len = 2 * max(len(s) for s in sources) + 10
        state = self.decoder.initial_state(enc)
        prev = np.full(B, BOS_ID, dtype=np.int64)
        out = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        for t in range(max_len + 1):
            probs, state, _ = self.step_distribution(enc, state, prev)
            probs = probs.copy()
            probs[:, PAD_ID] = -1.0
            probs[:, BOS_ID] = -1.0
            if t == max_len:
                break
            prev = probs.argmax(axis=1)
            for b in range(B):
                if not done[b]:
                    if prev[b] == EOS_ID:
                        done[b] = True
                    else:
                        out[b].append(int(prev[b]))
            if done.all():
                break
        return out

    # -- construction helpers -------------------------------------------

    def vocabularies(self):
        return {"src": self.src_vocab, "src_chars": self.src_chars, "trg": self.trg_vocab}

    @classmethod
    def from_vocabularies(cls, config, vocabs, seed=0):
        return cls(config, vocabs["src"], vocabs["src_chars"], vocabs["trg"], seed)


def build_vocabularies(pairs, config, src_vocab_size=None, trg_vocab_size=None):
    """Vocabularies for a training corpus of (source tokens, target symbols) pairs."""
    src = Vocabulary.build((s for s, _ in pairs), "word", max_size=src_vocab_size)
    chars = Vocabulary.build((list("".join(s)) for s, _ in pairs), "char")
    trg = Vocabulary.build((t for _, t in pairs), config.decoder_level, max_size=trg_vocab_size)
    return {"src": src, "src_chars": chars, "trg": trg}


def encode_source(model, tokens):
    """Encode one tokenized source sentence."""
    if not tokens:
        raise ContractError("cannot encode an empty source sentence")
    return model.encode([list(tokens)])


def compute_loss(model, batch, rng=None):
    return model.compute_loss(batch, rng)
