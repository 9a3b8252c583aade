import math

import numpy as np
import pytest

from hnmt.errors import ContractError, ParameterError
from hnmt.model import ModelConfig, compute_loss, encode_source
from hnmt.tensor import grad_check
from hnmt.vocab import BOS_ID, EOS_ID

from helpers import TINY, tiny_model


def test_in_vocab_sentence_never_calls_char_encoder():
    m = tiny_model()
    m.encoder.char_calls = 0
    encode_source(m, ["a", "b", "c", "a"])
    assert m.encoder.char_calls == 0


def test_oov_tokens_use_char_path():
    m = tiny_model()
    m.encoder.char_calls = 0
    encode_source(m, ["a", "zebra", "zebra", "b"])
    assert m.encoder.char_calls == 1    # distinct OOV types


@pytest.mark.parametrize("tokens", [["a"], ["b", "c"], ["c", "qq", "a", "b", "r", "a", "a"]])
def test_one_annotation_per_token(tokens):
    m = tiny_model()
    enc = encode_source(m, tokens)
    assert enc.vectors().shape == (len(tokens), 2 * TINY["encoder_state_dim"])
    assert len(enc) == len(tokens)


def test_empty_source_is_contract_error():
    with pytest.raises(ContractError):
        encode_source(tiny_model(), [])


def test_stub_char_encoder_output_is_the_encoder_input():
    m = tiny_model()
    known = np.arange(TINY["word_embed_dim"], dtype=np.float32) / 10
    seen = []

    def stub(words):
        seen.append(list(words))
        return np.tile(known, (len(words), 1))

    m.encoder.char_encoder = stub
    emb, _ = m.encoder.embed([["a", "oovword"]])
    assert seen == [["oovword"]]
    np.testing.assert_array_equal(emb.data[1, 0], known)
    np.testing.assert_array_equal(emb.data[0, 0], m.encoder.word_emb.E.data[m.src_vocab.index("a")])


def test_char_path_vector_has_word_embedding_width():
    m = tiny_model()
    v = m.encoder.encode_chars(["xyz", "q"])
    assert v.shape == (2, TINY["word_embed_dim"])


def test_padding_does_not_change_annotations():
    m = tiny_model(seed=3)
    alone = m.encode([["a", "b"]]).vectors(0)
    batched = m.encode([["c", "a", "b", "a"], ["a", "b"]]).vectors(1)
    np.testing.assert_allclose(alone, batched, atol=1e-6)


def test_uniform_output_layer_gives_log_vocab():
    m = tiny_model()
    m.decoder.out.W.data[...] = 0
    m.decoder.out.b.data[...] = 0
    loss = compute_loss(m, [(["a", "b"], ["x", "y"]), (["c"], ["z"])])
    assert abs(loss.item() - math.log(len(m.trg_vocab))) <= 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_untrained_loss_is_near_log_vocab(seed):
    m = tiny_model(seed=seed)
    loss = compute_loss(m, [(["a", "b", "c"], ["x", "y", "z"]), (["b"], ["y"])]).item()
    assert abs(loss - math.log(len(m.trg_vocab))) <= 0.05 * math.log(len(m.trg_vocab))


def test_confident_model_has_near_zero_loss():
    m = tiny_model()
    m.decoder.out.W.data[...] = 0
    m.decoder.out.b.data[...] = 0
    m.decoder.out.b.data[EOS_ID] = 40.0
    assert compute_loss(m, [(["a"], [])]).item() < 1e-6


def test_two_step_hand_computed_loss():
    m = tiny_model()
    V = len(m.trg_vocab)
    bias = np.zeros(V)
    x = m.trg_vocab.index("x")
    bias[x], bias[EOS_ID] = 2.0, 1.0
    m.decoder.out.W.data[...] = 0
    m.decoder.out.b.data[...] = bias
    p = np.exp(bias) / np.exp(bias).sum()
    expected = -(math.log(p[x]) + math.log(p[EOS_ID])) / 2
    assert abs(compute_loss(m, [(["a"], ["x"])]).item() - expected) <= 1e-5


def test_loss_ignores_padding_positions():
    m = tiny_model(seed=1)
    pairs = [(["a", "b", "c"], ["x", "y", "z"]), (["c"], ["z"])]
    per = m.token_logprobs(pairs)
    assert [len(p) for p in per] == [4, 2]
    mean = -np.concatenate(per).mean()
    assert abs(compute_loss(m, pairs).item() - mean) <= 1e-5


def test_score_matches_sum_of_step_distribution():
    m = tiny_model(seed=2)
    src, trg = ["a", "b"], ["y", "x"]
    enc = m.encode([src])
    state = m.decoder.initial_state(enc)
    prev = np.array([BOS_ID])
    total = 0.0
    for sym in trg + [None]:
        probs, state, _ = m.step_distribution(enc, state, prev)
        i = EOS_ID if sym is None else m.trg_vocab.index(sym)
        total += math.log(probs[0, i])
        prev = np.array([i])
    assert abs(m.score(src, trg) - total) <= 1e-4


def test_backward_direction_reverses_targets():
    fw = tiny_model(direction="forward")
    bw = tiny_model(direction="backward")
    ids = fw.trg_vocab.encode(["x", "y", "z"])
    assert bw.target_ids(["x", "y", "z"]) == ids[::-1]
    assert bw.render_symbols(ids[::-1]) == ["x", "y", "z"]
    assert bw.render(ids[::-1]) == fw.render(ids) == "x y z"


def test_greedy_respects_max_len_and_types():
    m = tiny_model(seed=4)
    out = m.greedy([["a", "b"], ["c"]], max_len=3)
    assert len(out) == 2 and all(len(o) <= 3 for o in out)
    assert all(isinstance(i, int) for o in out for i in o)


def test_config_validation():
    with pytest.raises(ParameterError):
        ModelConfig(word_embed_dim=0)
    with pytest.raises(ParameterError):
        ModelConfig(direction="sideways")
    with pytest.raises(ParameterError):
        ModelConfig(keep_prob=0.0)
    c = ModelConfig()
    assert (c.word_embed_dim, c.char_embed_dim, c.encoder_state_dim, c.decoder_state_dim, c.attention_dim) == (
        256, 64, 512, 1024, 256)
    assert ModelConfig.from_dict(c.to_dict()) == c


def test_same_seed_same_parameters():
    a, b = tiny_model(seed=9), tiny_model(seed=9)
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(v, b.state_dict()[k])


def test_dropout_changes_training_loss_only_with_rng():
    m = tiny_model(keep_prob=0.5)
    pairs = [(["a", "b"], ["x", "y"])]
    assert compute_loss(m, pairs).item() == compute_loss(m, pairs).item()
    noisy = {compute_loss(m, pairs, np.random.default_rng(s)).item() for s in range(4)}
    assert len(noisy) > 1


@pytest.mark.parametrize("opts", [{}, {"layernorm": True, "context_gates": True}])
def test_model_loss_gradients(opts):
    m = tiny_model(seed=5, **opts)
    pairs = [(["a", "qz"], ["x", "y"]), (["c"], ["z"])]
    names = [n for n in m.params if n.startswith(("encoder.char_lstm", "encoder.char_proj", "decoder.lstm", "decoder.gate", "decoder.read_c"))]
    report = grad_check(lambda: compute_loss(m, pairs), [m.params[n] for n in names])
    assert report.ok(1e-3), report
