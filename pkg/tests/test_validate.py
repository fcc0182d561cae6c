import json
import random

import pytest

from factories import random_name
from newsinsight.config import bundled
from newsinsight.extract import CompanyMention, ExtractionDraft, MalformedResponse
from newsinsight.providers import MockProvider, ScriptedProvider
from newsinsight.refdata import ReferenceStore, TickerRecord, load, load_overrides
from newsinsight.validate import (
    DiscardLog,
    VerifiedMention,
    Verifier,
    as_draft,
    build_verification_prompt,
    validate_mentions,
    verify_pair,
)

PAPER_STORE = [
    TickerRecord("ABBV", "ABBVIE INC.", cik="0001551152"),
    TickerRecord("PFI", "Invesco Dorsey Wright Financial Momentum ETF"),
    TickerRecord("PFE", "PFIZER INC.", cik="0000078003"),
]


def m(name, ticker=None, sentiment="neutral", reasoning="Some reasoning."):
    return CompanyMention(name, ticker, sentiment, reasoning)


def draft(*mentions):
    return ExtractionDraft("art1", "Title", "Summary.", ("k",), tuple(mentions))


@pytest.fixture
def store():
    return ReferenceStore(PAPER_STORE)


@pytest.mark.parametrize(
    "a, b, verdict",
    [
        ("AbbVie", "ABBVIE INC.", True),
        ("Pfizer", "Invesco Dorsey Wright Financial Momentum ETF", False),
        ("Invesco Dorsey Wright Financial Momentum ETF", "Invesco Dorsey Wright Financial Momentum ETF", True),
        ("Pfizer", "PFIZER INC.", True),
        ("Google", "Alphabet Inc. Class C", False),
    ],
)
def test_mock_verdicts(a, b, verdict):
    assert verify_pair(MockProvider(), a, b) is verdict


def test_identical_names_always_match():
    mock = MockProvider()
    rng = random.Random(5)
    for _ in range(100):
        name = random_name(rng)
        assert mock.verdict(name, name)


def test_pinned_verdict():
    mock = MockProvider(verdicts={("Pfizer", "PFIZER INC."): False})
    assert not verify_pair(mock, "Pfizer", "PFIZER INC.")


def test_verification_prompt_lists_pairs():
    prompt, prefill = build_verification_prompt([("AbbVie", "ABBVIE INC."), ("Pfizer", "Invesco ETF")])
    assert prefill == "{"
    assert prompt.count("<pairs>") == 1
    body = prompt.split("<pairs>")[1].split("</pairs>")[0]
    assert [p["article_name"] for p in json.loads(body)] == ["AbbVie", "Pfizer"]


def test_fig2_example(store):
    provider = MockProvider()
    out = validate_mentions(draft(m("AbbVie", "ABBV", "positive"), m("Pfizer", "PFI", "negative")), store, {}, provider)
    assert out == [
        VerifiedMention("AbbVie", "ABBV", "positive", "Some reasoning.", "direct"),
        VerifiedMention("Pfizer", "PFE", "negative", "Some reasoning.", "recovered"),
    ]
    # one batched call for the proposed tickers, one for the recovery re-check
    assert provider.calls == 2


def test_discard_path(store, tmp_path):
    log = DiscardLog(tmp_path / "discards.jsonl")
    out = validate_mentions(draft(m("Acme Robotics Inc.", "ACME")), store, {}, MockProvider(), log)
    assert out == []
    assert store.misses.ranked()[0].company_name == "acme robotics"
    (entry,) = [json.loads(l) for l in (tmp_path / "discards.jsonl").read_text().splitlines()]
    assert entry["company_name"] == "Acme Robotics Inc." and entry["proposed_ticker"] == "ACME"
    assert entry["best"]["ticker"] in {"ABBV", "PFI", "PFE"}
    assert len(entry["runners_up"]) == 2


def test_google_override():
    ref = load(bundled("reference.csv"))
    overrides = load_overrides(bundled("overrides.csv"))
    provider = MockProvider()
    out = validate_mentions(draft(m("Google", "GOOGL", "positive")), ref, overrides, provider)
    assert [(v.ticker, v.resolution) for v in out] == [("GOOG", "override")]
    # only the failed direct check was sent; the override hit itself is not re-verified
    assert provider.calls == 1


def test_mention_without_ticker_recovers(store):
    out = validate_mentions(draft(m("Pfizer")), store, {}, MockProvider())
    assert [(v.ticker, v.resolution) for v in out] == [("PFE", "recovered")]


def test_override_to_unknown_ticker_is_discarded(store):
    out = validate_mentions(draft(m("Pfizer", None)), store, {"pfizer": "NOPE"}, MockProvider())
    assert out == []


def test_order_preserved(store):
    ms = [m("Pfizer", "PFI"), m("AbbVie", "ABBV"), m("Nobody Ltd"), m("PFIZER INC.", "PFE")]
    out = validate_mentions(draft(*ms), store, {}, MockProvider())
    assert [v.company_name for v in out] == ["Pfizer", "AbbVie", "PFIZER INC."]


def test_malformed_batch_falls_back_per_pair(store):
    good = '"verdicts": [{"index": 0, "match": true}]}'
    provider = ScriptedProvider(["garbage", good, good])
    verifier = Verifier(provider)
    assert verifier.verify_pairs([("AbbVie", "ABBVIE INC."), ("Pfizer", "PFIZER INC.")]) == [True, True]
    assert len(provider.calls) == 3


@pytest.mark.parametrize(
    "raw",
    ['"verdicts": [{"index": 0, "match": "yes"}]}', '"verdicts": []}', '"verdicts": [{"index": 3, "match": true}]}', '"x": 1}'],
)
def test_single_pair_bad_answer(raw):
    with pytest.raises(MalformedResponse):
        Verifier(ScriptedProvider([raw])).verify_pair("a", "b")


def test_idempotent_on_own_output():
    ref = load(bundled("reference.csv"))
    overrides = load_overrides(bundled("overrides.csv"))
    d = draft(m("AbbVie", "ABBV", "positive"), m("Pfizer", "PFI", "negative"), m("Google", "GOOGL"), m("Alphabet", "GOOGL"), m("Acme Robotics Inc."))
    first = validate_mentions(d, ref, overrides, MockProvider())
    second = validate_mentions(as_draft(d.article_id, first, d), ref, overrides, MockProvider())
    binding = lambda vs: [(v.company_name, v.ticker, v.sentiment, v.sentiment_reasoning) for v in vs]
    assert binding(second) == binding(first)
    # a recovered binding is proposed directly the second time around
    assert [v.resolution for v in first] == ["direct", "recovered", "override", "direct"]
    assert [v.resolution for v in second] == ["direct", "direct", "override", "direct"]


@pytest.mark.parametrize("seed", range(30))
def test_outputs_always_in_store(seed):
    rng = random.Random(seed)
    ref = load(bundled("reference.csv"))
    names = [r.name for r in ref]
    tickers = [r.ticker for r in ref] + ["ZZZ", "PFI", None]
    mentions = []
    for _ in range(rng.randint(0, 6)):
        name = rng.choice(names) if rng.random() < 0.5 else random_name(rng)
        mentions.append(m(name, rng.choice(tickers), rng.choice(["positive", "negative", "neutral"]), f"r{rng.random()}"))
    d = draft(*mentions)
    out = validate_mentions(d, ref, {}, MockProvider())
    for v in out:
        assert v.ticker in ref
    # sentiment passes through untouched
    originals = {(x.company_name, x.sentiment, x.sentiment_reasoning) for x in mentions}
    assert all((v.company_name, v.sentiment, v.sentiment_reasoning) in originals for v in out)
