"""Byte-level byte-pair-encoding subword tokenizer.

The base alphabet is the 256 bytes so nothing is ever out-of-vocabulary.
Protected tokens (digit-place tokens, the event separator, the sign token,
plus padding/classifier specials) are pre-seeded as atomic vocabulary
entries: they are never split and never participate in merges. Merge
learning uses the standard highest-frequency rule with a deterministic
lexicographic tie-break, so two training runs on the same corpus produce
identical vocabularies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusEmpty
from .linearize import NEG_TOKEN, SEPARATOR, is_protected_token

PAD_TOKEN = "<pad>"
CLS_TOKEN = "<cls>"
SPECIAL_TOKENS = (PAD_TOKEN, CLS_TOKEN)

VOCAB_FORMAT = "ehrtext-bpe-v1"


def default_protected(corpus_lines: list[str] | None = None) -> list[str]:
    """Separator, sign token, specials, and every digit-place token seen."""
    protected = [PAD_TOKEN, CLS_TOKEN, SEPARATOR, NEG_TOKEN]
    if corpus_lines:
        seen = set()
        for line in corpus_lines:
            for token in line.split():
                if is_protected_token(token) and token not in (SEPARATOR, NEG_TOKEN):
                    seen.add(token)
        protected.extend(sorted(seen))
    return protected


@dataclass
class SubwordVocab:
    merges: list[tuple[str, str]]
    protected: list[str]
    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.token_to_id:
            self._build_tables()
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._protected_set = set(self.protected)
        self._encode_cache: dict[str, list[str]] = {}

    def _build_tables(self) -> None:
        tokens: list[str] = list(self.protected)
        tokens.extend(_byte_symbol(b) for b in range(256))
        for left, right in self.merges:
            merged = left + right
            if merged not in tokens:
                tokens.append(merged)
        # merged symbols may duplicate protected entries textually; protected
        # entries keep their dedicated slot
        seen = set()
        unique = []
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                unique.append(tok)
        self.id_to_token = unique
        self.token_to_id = {tok: i for i, tok in enumerate(unique)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS_TOKEN]

    # -- encoding ---------------------------------------------------------

    def _word_pieces(self, word: str) -> list[str]:
        if word in self._protected_set:
            return [word]
        cached = self._encode_cache.get(word)
        if cached is not None:
            return cached
        symbols = [_byte_symbol(b) for b in word.encode("utf-8")]
        while len(symbols) > 1:
            best_rank = None
            best_i = -1
            for i in range(len(symbols) - 1):
                rank = self._ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_i = i
            if best_rank is None:
                break
            symbols[best_i : best_i + 2] = [symbols[best_i] + symbols[best_i + 1]]
        self._encode_cache[word] = symbols
        return symbols

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            for piece in self._word_pieces(word):
                ids.append(self.token_to_id[piece])
            ids.append(self.token_to_id[_SPACE_SYMBOL])
        if ids:
            ids.pop()  # no trailing space
        return ids

    def decode(self, ids: list[int]) -> str:
        # unescape to raw bytes first: a multi-byte UTF-8 character may be
        # split across pieces, so decoding happens once over the whole run
        out = bytearray()
        for i in ids:
            tok = self.id_to_token[i]
            if tok == _SPACE_SYMBOL:
                out.extend(b" ")
            else:
                out.extend(_unescape_bytes(tok, self._protected_set))
        return out.decode("utf-8")

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": VOCAB_FORMAT,
            "merges": [[a, b] for a, b in self.merges],
            "protected": self.protected,
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "SubwordVocab":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != VOCAB_FORMAT:
            raise ValueError(f"unsupported vocab file format: {payload.get('format')!r}")
        merges = [tuple(pair) for pair in payload["merges"]]
        return SubwordVocab(merges=merges, protected=list(payload["protected"]))


# Bytes are represented by printable symbols so merged tokens remain plain
# strings: printable ASCII maps to itself, everything else to <0xNN>.
def _byte_symbol(b: int) -> str:
    ch = chr(b)
    if 0x21 <= b <= 0x7E:
        return ch
    return f"<0x{b:02x}>"


# the space byte never occurs inside a word, so its byte symbol is free to
# act as the inter-word marker in encoded sequences
_SPACE_SYMBOL = _byte_symbol(0x20)


def _unescape_bytes(token: str, protected: set[str]) -> bytes:
    if token in protected:
        return token.encode("utf-8")
    out = bytearray()
    i = 0
    while i < len(token):
        if token[i] == "<" and i + 5 < len(token) and token[i + 1 : i + 3] == "0x" and token[i + 5] == ">":
            out.extend(bytes([int(token[i + 3 : i + 5], 16)]))
            i += 6
        else:
            out.extend(token[i].encode("utf-8"))
            i += 1
    return bytes(out)


def train_bpe(
    corpus: list[str], vocab_size: int, protected: list[str] | None = None
) -> SubwordVocab:
    """Learn BPE merges from whitespace-tokenized corpus lines."""
    lines = [line for line in corpus if line.strip()]
    if not lines:
        raise CorpusEmpty("cannot train a tokenizer on an empty corpus")
    if protected is None:
        protected = default_protected(lines)
    protected_set = set(protected)
    base_size = len(protected) + 256
    if vocab_size <= base_size:
        raise ValueError(f"vocab_size {vocab_size} must exceed base alphabet size {base_size}")

    # word frequency table; protected words never enter merge learning
    word_freq: dict[str, int] = {}
    for line in lines:
        for word in line.split():
            if word not in protected_set:
                word_freq[word] = word_freq.get(word, 0) + 1

    words = [[_byte_symbol(b) for b in w.encode("utf-8")] for w in word_freq]
    freqs = list(word_freq.values())

    # incremental pair counting: pair -> total frequency, pair -> word indices
    pair_freq: dict[tuple[str, str], int] = {}
    pair_words: dict[tuple[str, str], set[int]] = {}

    def add_word_pairs(wi: int, sign: int) -> None:
        symbols = words[wi]
        f = freqs[wi] * sign
        for i in range(len(symbols) - 1):
            pair = (symbols[i], symbols[i + 1])
            pair_freq[pair] = pair_freq.get(pair, 0) + f
            if sign > 0:
                pair_words.setdefault(pair, set()).add(wi)

    for wi in range(len(words)):
        add_word_pairs(wi, +1)

    merges: list[tuple[str, str]] = []
    n_merges = vocab_size - base_size
    for _ in range(n_merges):
        live = {p: f for p, f in pair_freq.items() if f > 0}
        if not live:
            break
        best_f = max(live.values())
        best = min(p for p, f in live.items() if f == best_f)
        merges.append(best)
        merged = best[0] + best[1]
        for wi in sorted(pair_words.get(best, ())):
            symbols = words[wi]
            if len(symbols) < 2:
                continue
            add_word_pairs(wi, -1)
            i = 0
            new_symbols = []
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    new_symbols.append(merged)
                    i += 2
                else:
                    new_symbols.append(symbols[i])
                    i += 1
            words[wi] = new_symbols
            add_word_pairs(wi, +1)
        pair_freq.pop(best, None)
        pair_words.pop(best, None)

    return SubwordVocab(merges=merges, protected=list(protected))
