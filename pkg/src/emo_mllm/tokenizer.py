"""Fixed-vocabulary toy tokenizer.

Text splits into alphabetic words, single digits, single punctuation marks and
whitespace runs. Each digit is its own token so any number is representable.
Words are matched case-sensitively; anything outside the vocabulary maps to
``<unk>``. Text made only of in-vocabulary pieces round-trips exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from .errors import DomainError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)

EMOTION_WORDS = (
    "happy", "sad", "angry", "surprised", "fearful", "disgusted", "neutral",
    "worried", "excited", "calm", "nervous", "relaxed", "frustrated", "confused",
    "proud", "ashamed", "bored", "hopeful", "anxious", "content", "joyful",
    "irritated", "embarrassed", "curious", "tense", "grateful",
)

_WORDS = (
    # timestamp template
    "This", "frame", "is", "sampled", "at", "s",
    # instructions
    "What", "what", "emotions", "emotion", "does", "the", "person", "show", "in",
    "this", "video", "Please", "please", "describe", "list", "labels", "Answer",
    "answer", "with", "emotional", "state", "of", "speaker", "Transcript",
    "transcript", "Subtitle", "subtitle", "and", "or", "a", "an", "to", "on",
    "clip", "face", "voice", "tone", "expression", "their", "they", "feel",
    "feeling", "feels", "seems", "seem", "looks", "look", "Which", "which",
    "are", "be", "by", "from", "for",
    # transcripts
    "I", "you", "You", "we", "We", "it", "It", "that", "That", "can", "can't",
    "not", "no", "No", "yes", "Yes", "really", "so", "So", "very", "just",
    "know", "don't", "do", "did", "have", "had", "was", "were", "believe",
    "think", "here", "there", "now", "Now", "again", "never", "always", "today",
    "tomorrow", "happened", "happen", "why", "Why", "how", "How", "Oh", "oh",
    "well", "Well", "okay", "Okay", "sorry", "Sorry", "thanks", "Thanks", "look",
    "Look", "listen", "Listen", "stop", "wait", "Wait", "come", "go", "going",
    "get", "got", "my", "your", "me", "him", "her", "he", "she", "he's", "she's",
    "I'm", "you're", "it's", "this", "time", "again", "wow", "Wow", "great",
    "good", "bad", "fine", "right", "wrong", "all", "about", "out", "up",
    "down", "off", "too", "much", "more", "want", "need", "said", "say", "tell",
    "told", "let", "Let", "us", "our", "money", "work", "home", "friend",
    "family", "late", "early", "news", "believe",
    # answer scaffolding
    "The", "emotionally", "mostly", "slightly", "also", "but",
) + EMOTION_WORDS

_PUNCT = tuple(".,?!'\":;-()")
_DIGITS = tuple("0123456789")

_SPLIT = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)?|\d|\s+|[^\sA-Za-z\d]")


@lru_cache(maxsize=None)
def base_vocab() -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for tok in (*SPECIALS, " ", "\n", *_DIGITS, *_PUNCT, *_WORDS):
        seen.setdefault(tok, None)
    return tuple(seen)


class Tokenizer:
    def __init__(self, vocab_size: int | None = None):
        vocab = list(base_vocab())
        if vocab_size is not None:
            if vocab_size < len(vocab):
                raise ValueError(f"vocab_size {vocab_size} below base vocabulary size {len(vocab)}")
            vocab += [f"<unused{i}>" for i in range(vocab_size - len(vocab))]
        self.vocab = tuple(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.unk_id = self.index[UNK]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.pad_id = self.index[PAD]

    def __len__(self):
        return len(self.vocab)

    def pieces(self, text: str) -> list[str]:
        return _SPLIT.findall(text)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(p, self.unk_id) for p in self.pieces(text)]

    def decode(self, ids) -> str:
        return "".join(self.vocab[i] for i in ids if self.vocab[i] not in (PAD, BOS, EOS))


@lru_cache(maxsize=None)
def default_tokenizer(vocab_size: int | None = None) -> Tokenizer:
    return Tokenizer(vocab_size)


@dataclass(frozen=True)
class ConditionText:
    text: str
    token_ids: tuple[int, ...]


def format_timestamp(t_s: float, tokenizer: Tokenizer | None = None) -> ConditionText:
    if not t_s >= 0:
        raise DomainError(f"timestamp must be non-negative, got {t_s}")
    tok = tokenizer or default_tokenizer()
    text = f"This frame is sampled at {t_s:.1f}s."
    return ConditionText(text, tuple(tok.encode(text)))
