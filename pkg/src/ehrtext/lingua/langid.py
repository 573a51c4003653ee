"""Token language identification cascade.

Stage 1 matches against the three word lexicons (a unique hit decides).
Stage 2 is a character 2-4-gram multinomial naive Bayes classifier trained
on the lexicons themselves; when a token sits in several lexicons the
posterior is restricted to those candidate languages, otherwise the label is
accepted only above a confidence threshold. Stage 3 optionally asks a
translation service for a language vote; unresolved tokens end up
"undetected" (typical for abbreviations and proper nouns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

from ..linearize import is_protected_token
from .lexicons import Lexicon

LANGS = ("en", "nl", "de")
UNDETECTED = "undetected"


@dataclass(frozen=True)
class TokenSpan:
    token: str
    language: str  # en / nl / de / undetected
    confidence: float
    translation: str | None = None

    def __post_init__(self):
        if self.language == UNDETECTED and self.translation is not None:
            raise ValueError("undetected tokens carry no translation")


class NgramLanguageClassifier:
    """Multinomial naive Bayes over padded character n-grams."""

    def __init__(self, n_min: int = 2, n_max: int = 4, alpha: float = 0.3):
        self.n_min = n_min
        self.n_max = n_max
        self.alpha = alpha
        self.counts: dict[str, dict[str, int]] = {}
        self.totals: dict[str, int] = {}
        self.vocab: set[str] = set()

    def _grams(self, token: str) -> list[str]:
        padded = f"^{token}$"
        grams = []
        for n in range(self.n_min, self.n_max + 1):
            grams.extend(padded[i : i + n] for i in range(len(padded) - n + 1))
        return grams

    def fit(self, words_by_language: dict[str, Iterable[str]]) -> "NgramLanguageClassifier":
        for lang, words in words_by_language.items():
            counts: dict[str, int] = {}
            for word in words:
                for gram in self._grams(word.lower()):
                    counts[gram] = counts.get(gram, 0) + 1
            self.counts[lang] = counts
            self.totals[lang] = sum(counts.values())
            self.vocab.update(counts)
        return self

    def posteriors(self, token: str, candidates: tuple[str, ...] = LANGS) -> dict[str, float]:
        v = len(self.vocab) or 1
        log_p = {}
        grams = self._grams(token.lower())
        for lang in candidates:
            counts = self.counts.get(lang, {})
            total = self.totals.get(lang, 0)
            lp = 0.0
            for gram in grams:
                lp += math.log((counts.get(gram, 0) + self.alpha) / (total + self.alpha * v))
            log_p[lang] = lp
        peak = max(log_p.values())
        expd = {lang: math.exp(lp - peak) for lang, lp in log_p.items()}
        norm = sum(expd.values())
        return {lang: p / norm for lang, p in expd.items()}


def _is_wordlike(token: str) -> bool:
    return any(ch.isalpha() for ch in token) and not any(ch.isdigit() for ch in token)


class LanguageCascade:
    """Lexicon -> n-gram classifier -> optional service vote -> undetected."""

    def __init__(
        self,
        lexicons: dict[str, Lexicon],
        classifier: NgramLanguageClassifier,
        theta: float = 0.8,
        vote_client=None,
        min_classifier_length: int = 4,
    ):
        self.lexicons = lexicons
        self.classifier = classifier
        self.theta = theta
        self.vote_client = vote_client
        self.min_classifier_length = min_classifier_length
        self._cache: dict[str, TokenSpan] = {}

    def identify_token(self, token: str) -> TokenSpan:
        token = token.lower()
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        span = self._identify(token)
        self._cache[token] = span
        return span

    def _identify(self, token: str) -> TokenSpan:
        # digit-place tokens, separators and anything numeric bypass the cascade
        if is_protected_token(token) or not _is_wordlike(token):
            return TokenSpan(token, UNDETECTED, 1.0)

        members = tuple(lang for lang in LANGS if token in self.lexicons[lang])
        if len(members) == 1:
            return TokenSpan(token, members[0], 1.0)
        if len(members) > 1:
            # a real word of the candidate languages; pick the likelier one
            post = self.classifier.posteriors(token, candidates=members)
            best = max(members, key=lambda lang: post[lang])
            return TokenSpan(token, best, post[best])

        # very short tokens (typical for abbreviations like "po" or "prn")
        # yield too few character n-grams for a reliable posterior, so the
        # classifier never decides them on its own
        post = self.classifier.posteriors(token)
        best = max(post, key=post.get)
        if len(token) >= self.min_classifier_length and post[best] >= self.theta:
            return TokenSpan(token, best, post[best])

        if self.vote_client is not None:
            vote = self.vote_client.vote_language(token)
            if vote in LANGS:
                return TokenSpan(token, vote, self.theta)
        return TokenSpan(token, UNDETECTED, 1.0 - post[best])

    def identify_text(self, text: str) -> list[TokenSpan]:
        return [self.identify_token(token) for token in text.split()]


def bundled_cascade(theta: float = 0.8, vote_client=None) -> LanguageCascade:
    from .lexicons import bundled_lexicons

    lexicons = bundled_lexicons()
    classifier = NgramLanguageClassifier().fit(
        {lang: lex.words for lang, lex in lexicons.items()}
    )
    return LanguageCascade(lexicons, classifier, theta=theta, vote_client=vote_client)


def with_translation(span: TokenSpan, translation: str | None) -> TokenSpan:
    return replace(span, translation=translation)
