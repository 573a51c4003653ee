import pytest

from ehrtext.errors import ConfigurationError
from ehrtext.linearize import CorpusRecord
from ehrtext.lingua.align import align_corpus, align_event_text, language_stats
from ehrtext.lingua.langid import (
    LANGS,
    UNDETECTED,
    NgramLanguageClassifier,
    TokenSpan,
    bundled_cascade,
    with_translation,
)
from ehrtext.lingua.lexicons import BilingualDictionary, Lexicon, bundled_dictionaries
from ehrtext.lingua.translate import (
    REJECTED,
    HttpTranslationClient,
    MockTranslationClient,
    TranslationCache,
    translate_token_dict,
    translate_token_service,
)


@pytest.fixture(scope="module")
def cascade():
    return bundled_cascade()


@pytest.fixture(scope="module")
def dictionaries():
    return bundled_dictionaries()


class TestTokenSpan:
    def test_undetected_carries_no_translation(self):
        with pytest.raises(ValueError):
            TokenSpan("po", UNDETECTED, 1.0, translation="oral")

    def test_with_translation(self):
        span = TokenSpan("natrium", "nl", 1.0)
        assert with_translation(span, "sodium").translation == "sodium"


class TestCascade:
    def test_unique_lexicon_hit_confidence_one(self, cascade):
        span = cascade.identify_token("bloeddruk")
        assert (span.language, span.confidence) == ("nl", 1.0)
        span = cascade.identify_token("the")
        assert (span.language, span.confidence) == ("en", 1.0)

    def test_multi_lexicon_word_resolves(self, cascade):
        # "natrium" sits in both the nl and de lexicons; stage 2 must pick one
        span = cascade.identify_token("natrium")
        assert span.language in ("nl", "de")
        assert 0 < span.confidence <= 1.0

    def test_abbreviation_undetected_without_service(self, cascade):
        assert cascade.identify_token("po").language == UNDETECTED

    def test_protected_and_numeric_undetected(self, cascade):
        for token in ("|", "NEG", "9@1", "140", "mmol/l2"):
            assert cascade.identify_token(token).language == UNDETECTED

    def test_case_insensitive(self, cascade):
        assert cascade.identify_token("Bloeddruk").language == "nl"

    def test_identify_text(self, cascade):
        spans = cascade.identify_text("lab | item natrium | value 1@2 4@1 0@0")
        assert len(spans) == 9
        assert spans[1].language == UNDETECTED  # separator


class TestNgramClassifier:
    def test_separates_obvious_words(self):
        clf = NgramLanguageClassifier().fit(
            {
                "en": ["pressure", "blood", "heart", "rate", "sodium"],
                "nl": ["bloeddruk", "hartslag", "natrium", "zuurstof"],
                "de": ["blutdruck", "herzfrequenz", "sauerstoff"],
            }
        )
        post = clf.posteriors("bloeddrukken")
        assert max(post, key=post.get) == "nl"
        assert abs(sum(post.values()) - 1.0) < 1e-9

    def test_candidate_restriction(self):
        clf = NgramLanguageClassifier().fit({"en": ["blood"], "nl": ["bloed"], "de": ["blut"]})
        post = clf.posteriors("bloed", candidates=("nl", "de"))
        assert set(post) == {"nl", "de"}


class TestLexicon:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Lexicon("en", frozenset())

    def test_whitespace_entry_rejected(self):
        with pytest.raises(ValueError):
            Lexicon("en", frozenset({"two words"}))

    def test_dictionary_single_token_only(self):
        with pytest.raises(ValueError):
            BilingualDictionary("nl", {"bloed druk": "blood"})

    def test_dictionary_tsv_round_trip(self, tmp_path):
        d = BilingualDictionary("nl", {"natrium": "sodium", "bloeddruk": "blood-pressure"})
        d.to_tsv(tmp_path / "d.tsv")
        loaded = BilingualDictionary.from_tsv("nl", tmp_path / "d.tsv")
        assert loaded.entries == d.entries


class TestDictTranslation:
    def test_term_lookup(self, dictionaries):
        span = translate_token_dict(TokenSpan("natrium", "nl", 1.0), dictionaries)
        assert span.translation == "sodium"
        span = translate_token_dict(TokenSpan("kreatinin", "de", 1.0), dictionaries)
        assert span.translation == "creatinine"

    def test_miss_returns_untranslated(self, dictionaries):
        span = translate_token_dict(TokenSpan("onbekendwoord", "nl", 1.0), dictionaries)
        assert span.translation is None

    def test_english_span_rejected(self, dictionaries):
        with pytest.raises(ValueError):
            translate_token_dict(TokenSpan("sodium", "en", 1.0), dictionaries)

    def test_order_of_dictionaries(self):
        medical = BilingualDictionary("nl", {"natrium": "sodium"})
        general = BilingualDictionary("nl", {"natrium": "natrium-general"})
        span = translate_token_dict(TokenSpan("natrium", "nl", 1.0), {"nl": [medical, general]})
        assert span.translation == "sodium"


class TestServiceTranslation:
    def test_accept_single_term(self):
        client = MockTranslationClient({"bloeddruk": "blood-pressure"})
        cache = TranslationCache()
        span = translate_token_service(TokenSpan("bloeddruk", "nl", 1.0), "ctx", client, cache)
        assert span.translation == "blood-pressure"
        assert cache.get("bloeddruk", "nl", "ctx") == "blood-pressure"

    def test_reject_multiword_response(self):
        client = MockTranslationClient({"bloeddruk": "it means blood pressure"})
        cache = TranslationCache()
        span = translate_token_service(TokenSpan("bloeddruk", "nl", 1.0), "ctx", client, cache)
        assert span.translation is None
        assert cache.get("bloeddruk", "nl", "ctx") == REJECTED

    def test_cache_hit_skips_service(self):
        cache = TranslationCache()
        cache.put("natrium", "nl", "ctx", "sodium")
        client = MockTranslationClient({}, available=True)
        span = translate_token_service(TokenSpan("natrium", "nl", 1.0), "ctx", client, cache)
        assert span.translation == "sodium"
        assert client.calls == 0

    def test_rejected_cache_hit_skips_service(self):
        cache = TranslationCache()
        cache.put("po", "nl", "ctx", REJECTED)
        client = MockTranslationClient({})
        span = translate_token_service(TokenSpan("po", "nl", 1.0), "ctx", client, cache)
        assert span.translation is None
        assert client.calls == 0

    def test_unavailable_falls_back_to_dict(self, dictionaries):
        client = MockTranslationClient({}, available=False)
        span = translate_token_service(
            TokenSpan("natrium", "nl", 1.0), "ctx", client, TranslationCache(), dictionaries
        )
        assert span.translation == "sodium"

    def test_cache_persists_to_jsonl(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = TranslationCache(path)
        cache.put("natrium", "nl", "ctx", "sodium")
        reloaded = TranslationCache(path)
        assert reloaded.get("natrium", "nl", "ctx") == "sodium"
        assert len(reloaded) == 1

    def test_http_client_requires_endpoint(self, monkeypatch):
        monkeypatch.delenv("TRANSLATE_ENDPOINT", raising=False)
        with pytest.raises(ConfigurationError, match="TRANSLATE_ENDPOINT"):
            HttpTranslationClient()


class TestAlign:
    def test_mode_none_identity(self, cascade):
        text = "lab | item natrium | value 1@2 4@1 0@0"
        assert align_event_text(text, "none") == text

    def test_dict_mode_substitutes_terms(self, cascade, dictionaries):
        text = "lab | item kreatinine | value 1@0 2@-1 | unit mg/dl"
        aligned = align_event_text(text, "dict", cascade=cascade, dictionaries=dictionaries)
        assert aligned == "lab | item creatinine | value 1@0 2@-1 | unit mg/dl"

    def test_token_count_preserved(self, cascade, dictionaries):
        text = "obs | finding bloeddruk verhoogd | status actief"
        aligned = align_event_text(text, "dict", cascade=cascade, dictionaries=dictionaries)
        assert len(aligned.split()) == len(text.split())

    def test_idempotent(self, cascade, dictionaries):
        text = "lab | item kreatinine | value 1@0"
        once = align_event_text(text, "dict", cascade=cascade, dictionaries=dictionaries)
        twice = align_event_text(once, "dict", cascade=cascade, dictionaries=dictionaries)
        assert once == twice

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            align_event_text("x", "fancy")

    def test_align_corpus_preserves_metadata(self, cascade, dictionaries):
        records = [CorpusRecord("s1", 5.0, "lab | item natrium | value 1@2 4@1 0@0")]
        aligned = align_corpus(records, "dict", cascade=cascade, dictionaries=dictionaries)
        assert aligned[0].stay_id == "s1" and aligned[0].timestamp == 5.0
        assert "sodium" in aligned[0].text

    def test_language_stats_sum_to_100(self, cascade):
        records = [
            CorpusRecord("s1", 0.0, "lab | item natrium | value 1@2 4@1 0@0"),
            CorpusRecord("s1", 1.0, "obs | finding bloeddruk verhoogd"),
        ]
        stats = language_stats(records, "nl_x", cascade=cascade)
        assert stats.total == 14
        assert sum(stats.percentages.values()) == pytest.approx(100.0)
        assert stats.token_counts["nl"] >= 2
