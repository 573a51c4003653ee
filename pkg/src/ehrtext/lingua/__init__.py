"""Token-level language identification and word-level translation alignment."""

from .lexicons import BilingualDictionary, Lexicon, bundled_dictionaries, bundled_lexicons
from .langid import LanguageCascade, NgramLanguageClassifier, TokenSpan, bundled_cascade
from .translate import (
    HttpTranslationClient,
    MockTranslationClient,
    TranslationCache,
    load_prompt,
    translate_token_dict,
    translate_token_service,
)
from .align import align_corpus, align_event_text, language_stats

__all__ = [
    "BilingualDictionary",
    "Lexicon",
    "bundled_dictionaries",
    "bundled_lexicons",
    "LanguageCascade",
    "NgramLanguageClassifier",
    "TokenSpan",
    "bundled_cascade",
    "HttpTranslationClient",
    "MockTranslationClient",
    "TranslationCache",
    "load_prompt",
    "translate_token_dict",
    "translate_token_service",
    "align_corpus",
    "align_event_text",
    "language_stats",
]
