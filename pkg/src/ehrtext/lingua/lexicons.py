"""Word lexicons and bilingual dictionaries.

The bundled lexicons combine a general word list per language with the
clinical term table renderings; the bundled dictionaries map every Dutch and
German term rendering to its English counterpart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class Lexicon:
    language: str
    words: frozenset[str]
    source: str = ""

    def __post_init__(self):
        if not self.words:
            raise ValueError(f"lexicon {self.language!r} is empty")
        for word in self.words:
            if not word or any(ch.isspace() for ch in word):
                raise ValueError(f"lexicon {self.language!r}: bad entry {word!r}")

    def __contains__(self, token: str) -> bool:
        return token in self.words

    @staticmethod
    def from_file(language: str, path: str | Path, source: str = "") -> "Lexicon":
        words = frozenset(
            line.strip().lower()
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        )
        return Lexicon(language=language, words=words, source=source or str(path))


@dataclass
class BilingualDictionary:
    """Single-token source -> English map for one language pair."""

    source_language: str
    entries: dict[str, str] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        for src, dst in self.entries.items():
            if any(ch.isspace() for ch in src) or any(ch.isspace() for ch in dst):
                raise ValueError(f"dictionary entry not single-token: {src!r} -> {dst!r}")
        self.entries = {k.lower(): v.lower() for k, v in self.entries.items()}

    def lookup(self, token: str) -> str | None:
        return self.entries.get(token)

    @staticmethod
    def from_tsv(source_language: str, path: str | Path) -> "BilingualDictionary":
        entries = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            src, dst = line.split("\t")
            entries[src.strip()] = dst.strip()
        return BilingualDictionary(source_language, entries, description=str(path))

    def to_tsv(self, path: str | Path) -> None:
        lines = [f"{src}\t{dst}" for src, dst in sorted(self.entries.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _term_concepts() -> list[dict]:
    text = resources.files("ehrtext.data").joinpath("terms.json").read_text("utf-8")
    return json.loads(text)["concepts"]


def bundled_lexicons() -> dict[str, Lexicon]:
    """General word lists merged with the clinical term renderings."""
    concepts = _term_concepts()
    lexicons = {}
    for lang in ("en", "nl", "de"):
        general = resources.files("ehrtext.data").joinpath(f"lexicon_{lang}.txt").read_text("utf-8")
        words = {w.strip().lower() for w in general.splitlines() if w.strip()}
        words.update(c[lang].lower() for c in concepts)
        lexicons[lang] = Lexicon(lang, frozenset(words), source=f"bundled:{lang}")
    return lexicons


def bundled_dictionaries() -> dict[str, BilingualDictionary]:
    """nl->en and de->en dictionaries derived from the clinical term table."""
    concepts = _term_concepts()
    out = {}
    for lang in ("nl", "de"):
        entries = {c[lang]: c["en"] for c in concepts}
        out[lang] = BilingualDictionary(lang, entries, description=f"bundled:{lang}-en")
    return out
