import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnmt.errors import IngestionError, ParameterError, ParseError
from hnmt.segmentation import (
    BpeModel,
    bpe_apply,
    bpe_join,
    bpe_learn,
    detokenize,
    detruecase,
    expand_contractions,
    hyphen_retokenize,
    hyphen_variants,
    normalize,
    retokenize_hyphens,
    tokenize,
    truecase_apply,
    truecase_train,
)
from hnmt.segmentation.bpe import END

DATA = Path(__file__).parent / "data"
WORDS = ("talo kissa hiiri the cat sat on mat helsinki olympic games äiti öljy kaasu "
         "new lower newest widest café naïve 2017 3.5 a@b x&y @@ tom's").split()


EASY = [w for w in WORDS if w.isalnum() or w.replace(".", "").isdigit()]


def random_lines(n=1000, seed=0, punct=True, vocab=WORDS):
    rng = random.Random(seed)
    lines = []
    for _ in range(n):
        words = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
        if rng.random() < 0.5:
            words[0] = words[0].capitalize()
        line = " ".join(words)
        if punct:
            line += rng.choice([".", "!", "?", "", ","])
        lines.append(line)
    return lines


# -- normalize -----------------------------------------------------------------


def test_normalize_golden_file():
    for line in (DATA / "normalize_golden.jsonl").read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        assert normalize(row["input"]) == row["expected"], row


def test_ascii_is_unchanged():
    s = "Plain ASCII, with punctuation (and digits 42)."
    assert normalize(s) == s


def test_invalid_utf8_reports_offset():
    with pytest.raises(IngestionError, match="offset 3"):
        normalize(b"abc\xff")
    assert normalize("ok".encode()) == "ok"


def test_normalize_idempotent_on_corpus():
    for line in random_lines(1000, seed=1) + ["“x” —…"]:
        once = normalize(line)
        assert normalize(once) == once


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=40))
def test_normalize_idempotent_property(text):
    once = normalize(text)
    assert normalize(once) == once


# -- tokenize ------------------------------------------------------------------


def test_tokenize_examples():
    assert tokenize("Hello, world.") == ["Hello", ",", "world", "."]
    assert tokenize("") == []
    assert tokenize("I wouldn't go") == ["I", "would", "n't", "go"]
    assert tokenize("pi is 3.14, ok") == ["pi", "is", "3.14", ",", "ok"]


def test_hyphen_is_freed():
    toks = tokenize("Kempinski-hotelli")
    assert toks == ["Kempinski", "-", "hotelli"]
    assert detokenize(toks) == "Kempinski - hotelli"


def test_detokenize_round_trip_on_hyphen_free_corpus():
    for line in random_lines(1000, seed=2, vocab=EASY):
        assert detokenize(tokenize(line)) == line, line


def test_detokenize_brackets_and_quotes():
    s = 'He said "yes" (twice) and left.'
    assert detokenize(tokenize(s)) == s


# -- truecasing ----------------------------------------------------------------


def test_majority_casing_lowercases_initial_word():
    m = truecase_train([["the", "dog"], ["The", "cat"], ["see", "the", "cat"], ["on", "the", "mat"]])
    assert truecase_apply(m, ["The", "cat"]) == ["the", "cat"]


def test_proper_noun_keeps_capital():
    m = truecase_train([["in", "Helsinki"], ["Helsinki", "is", "cold"], ["to", "Helsinki"]])
    assert truecase_apply(m, ["Helsinki", "is"]) == ["Helsinki", "is"]


def test_unknown_token_unchanged():
    m = truecase_train([["a", "b"]])
    assert truecase_apply(m, ["Zzz", "b"]) == ["Zzz", "b"]


def test_truecase_round_trip_on_constructed_corpus():
    # every sentence starts with a common word capitalised; interior uses are lowercase
    lines = [tokenize(l) for l in random_lines(1000, seed=3, punct=False)]
    corpus = [[t.lower() for t in toks] for toks in lines]
    for toks in corpus:
        i = next((i for i, t in enumerate(toks) if t.isalpha()), None)
        if i is not None:
            toks[i] = toks[i].capitalize()
    corpus.append(["See"] + [w.lower() for w in WORDS])
    m = truecase_train(corpus)
    for toks in corpus:
        assert detruecase(truecase_apply(m, toks)) == toks


def test_truecase_never_invents_casings():
    corpus = [tokenize(l) for l in random_lines(300, seed=4)]
    m = truecase_train(corpus)
    seen = {t for toks in corpus for t in toks}
    for toks in corpus:
        assert truecase_apply(m, toks)[0] in seen


def test_truecase_model_file_round_trip(tmp_path):
    m = truecase_train([["The", "cat"], ["the", "The", "dog"]])
    m.save(tmp_path / "tc")
    assert type(m).load(tmp_path / "tc").counts == m.counts
    (tmp_path / "bad").write_text("only two\n", encoding="utf-8")
    with pytest.raises(ParseError, match=":1:"):
        type(m).load(tmp_path / "bad")


# -- contractions --------------------------------------------------------------


@pytest.mark.parametrize("text,expected", [
    ("I wouldn't go", "I would not go"),
    ("we can't stop", "we can not stop"),
    ("They're here", "They are here"),
    ("you'll see", "you will see"),
    ("WON'T", "WILL NOT"),
    ("Can't", "Can not"),
    ("I'm done", "I am done"),
])
def test_contraction_expansion(text, expected):
    assert expand_contractions(tokenize(text)) == expected.split()


def test_no_contractions_unchanged():
    toks = ["the", "cat", "'s", "hat"]
    assert expand_contractions(toks) == toks


def test_untokenized_contraction_is_split_then_expanded():
    assert expand_contractions(["wouldn't"]) == ["would", "not"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["I", "would", "n't", "ca", "'re", "we", "'ll", "can't", "x", "'s"]), max_size=10))
def test_expand_contractions_idempotent(tokens):
    once = expand_contractions(tokens)
    assert expand_contractions(once) == once


# -- BPE -----------------------------------------------------------------------


def test_single_character_words_learn_nothing():
    assert bpe_learn([["a", "b", "c"], ["a", "b"]] * 5, num_merges=10).merges == []


def test_first_merge_on_repeated_word():
    assert bpe_learn([["aaab"]] * 5, num_merges=1).merges == [("a", "a")]


def test_zero_merges_gives_characters():
    m = bpe_learn([["hello", "world"]], num_merges=0)
    assert bpe_apply(m, ["hello"]) == ["h@@", "e@@", "l@@", "l@@", "o"]


def test_hand_traced_lower():
    # pair counts: (l,o)=2, (w,e)=2 -> lexicographic tie-break picks (l,o); then (w,e);
    # then all remaining pairs count 1 and (e, we) is smallest
    m = bpe_learn([["low", "lower", "newest"]], num_merges=3, min_frequency=1)
    assert m.merges == [("l", "o"), ("w", "e"), ("e", "we")]
    assert bpe_apply(m, ["lower"]) == ["lo@@", "we@@", "r"]


def test_word_covered_by_one_symbol():
    m = bpe_learn([["low"]] * 3, num_merges=10)
    assert m.merges[-1] == ("lo", "w" + END)
    assert bpe_apply(m, ["low"]) == ["low"]


def test_unseen_characters_pass_through():
    m = bpe_learn([["low"]] * 3, num_merges=10)
    assert bpe_apply(m, ["zq"]) == ["z@@", "q"]


def test_empty_corpus_and_negative_merges():
    with pytest.raises(ParameterError):
        bpe_learn([], num_merges=3)
    with pytest.raises(ParameterError):
        bpe_learn([["a"]], num_merges=-1)


def test_vocab_size_limit():
    corpus = [tokenize(l) for l in random_lines(200, seed=5)]
    alphabet = bpe_learn(corpus, num_merges=0).alphabet_size
    m = bpe_learn(corpus, vocab_size=alphabet + 15)
    assert len(m.merges) == 15 and m.symbol_vocabulary_size == alphabet + 15


def test_bpe_round_trip_on_corpus():
    corpus = [tokenize(l) for l in random_lines(1000, seed=6)]
    m = bpe_learn(corpus[:500], num_merges=80)
    for toks in corpus:
        assert bpe_join(bpe_apply(m, toks)) == toks


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(st.characters(blacklist_categories=("Zs", "Cc")), min_size=1, max_size=8), max_size=6))
def test_bpe_round_trip_property(tokens):
    m = bpe_learn([["a@b", "x&y", "low", "lower"]] * 3, num_merges=20)
    assert bpe_join(bpe_apply(m, tokens)) == tokens


def test_merge_count_bound_and_monotone_vocabulary():
    corpus = [tokenize(l) for l in random_lines(300, seed=7)]
    sizes = []
    for k in (0, 5, 20, 50, 100):
        m = bpe_learn(corpus, num_merges=k)
        assert len(m.merges) <= k
        assert len(set(m.merges)) == len(m.merges)
        sizes.append(m.symbol_vocabulary_size)
    assert sizes == sorted(sizes)


def test_bpe_file_round_trip(tmp_path):
    m = bpe_learn([tokenize(l) for l in random_lines(100, seed=8)], num_merges=30)
    m.save(tmp_path / "bpe")
    text = (tmp_path / "bpe").read_text(encoding="utf-8").splitlines()
    assert text[0] == "#version: hnmt-bpe 1" and len(text) == 31
    assert BpeModel.load(tmp_path / "bpe").merges == m.merges
    (tmp_path / "bad").write_text("#version: other\n", encoding="utf-8")
    with pytest.raises(ParseError):
        BpeModel.load(tmp_path / "bad")


# -- hyphens -------------------------------------------------------------------


def test_four_variants():
    assert set(hyphen_variants("x - y")) == {"x - y", "x- y", "x -y", "x-y"}
    assert len(hyphen_variants("x - y")) == 4


def test_suspended_hyphen_is_a_variant():
    assert "öljy- ja kaasutoiminnot" in hyphen_variants("öljy - ja kaasutoiminnot")


def test_hyphen_free_is_singleton():
    assert hyphen_variants("no dashes here") == ["no dashes here"]


@pytest.mark.parametrize("h", range(0, 5))
def test_variant_count_is_power_of_four(h):
    s = " ".join(f"w{i} -" for i in range(h)) + " end"
    assert len(set(hyphen_variants(s))) == 4 ** h


def test_cap_enforced():
    s = " - ".join("abcdefgh")
    with pytest.raises(ParameterError):
        hyphen_variants(s)


GOLD = [
    "Draamaa Riossa - suomalaisnostaja pyörtyi...",
    "Kempinski-hotelli",
    "kissa ja hiiri -leikkiä",
    "öljy- ja kaasutoiminnot",
]


@pytest.mark.parametrize("gold", GOLD)
def test_oracle_scorer_recovers_gold(gold):
    detok = detokenize(tokenize(gold))
    assert "-" in detok and (detok == gold) == (gold == GOLD[0])
    oracle = lambda s: 1.0 if s == gold else 0.0
    assert hyphen_retokenize(hyphen_variants(detok), oracle) == gold
    assert retokenize_hyphens(detok, oracle) == gold


def test_constant_scorer_takes_first_variant():
    vs = hyphen_variants("a - b")
    assert hyphen_retokenize(vs, lambda s: 0.0) == vs[0] == "a - b"
    assert hyphen_retokenize(["only"], lambda s: -5.0) == "only"


def test_all_failing_scorer_passes_original_through(caplog):
    def boom(s):
        raise RuntimeError("no model")

    assert hyphen_retokenize(hyphen_variants("a - b"), boom, original="a - b") == "a - b"
    assert "failed on all" in caplog.text


def test_many_hyphens_decided_one_by_one():
    gold = "a-b c -d e- f g-h i-j k -l m-n o-p"
    detok = detokenize(tokenize(gold))
    # oracle: count of hyphen spacings that agree with gold, position by position
    from hnmt.segmentation.hyphen import hyphen_units

    want = [gold[s:e] for s, e in hyphen_units(gold)]

    def score(s):
        got = [s[a:b] for a, b in hyphen_units(s)]
        return sum(x == y for x, y in zip(got, want))

    assert retokenize_hyphens(detok, score) == gold
