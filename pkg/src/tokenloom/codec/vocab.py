"""The joint vocabulary of text, reasoning and reconstruction tokens.

Specification:
    Ids are laid out contiguously as
        [specials | text | reasoning books 0..K-1 | reconstruction books 0..K-1]
    Every id decodes to exactly one (kind, book, index). Books are numbered
    from 0; text and special ids use book 0.

Constants:
    SPECIAL_NAMES: Control symbols in id order.

Classes:
    TokenKind: The four id families.
    Vocabulary: Id layout and the id ↔ (kind, book, index) bijection.

Functions:
    build_vocabulary: Validate sizes and build a Vocabulary.
"""
# Imports
from __future__ import annotations
from dataclasses import dataclass
from enum import StrEnum
import logging
from typing import NamedTuple


# Consts
SPECIAL_NAMES = ('PAD', 'BOS', 'EOS', 'AUDIO_BEGIN', 'AUDIO_END', 'REASON_BEGIN', 'RECON_BEGIN', 'SEP')
_logger = logging.getLogger(__name__)


# Classes
class TokenKind(StrEnum):
    SPECIAL = 'special'
    TEXT = 'text'
    REASON = 'reason'
    RECON = 'recon'


class TokenAddress(NamedTuple):
    kind: TokenKind
    book: int
    index: int


@dataclass(frozen=True)
class Vocabulary:
    """Partitioned id space.

    Attributes:
        n_text: Number of text ids.
        n_reason_per_book: Entries per reasoning codebook.
        n_recon_per_book: Entries per reconstruction codebook.
        n_books: Codebooks per audio branch (K).
    """
    n_text: int
    n_reason_per_book: int
    n_recon_per_book: int
    n_books: int = 8

    @property
    def n_specials(self) -> int:
        return len(SPECIAL_NAMES)

    @property
    def size(self) -> int:
        return (self.n_specials + self.n_text
                + self.n_books * (self.n_reason_per_book + self.n_recon_per_book))

    @property
    def n_streams(self) -> int:
        return self.n_books + 1

    @property
    def text_stream(self) -> int:
        return self.n_books

    def special(self, name: str) -> int:
        return SPECIAL_NAMES.index(name)

    @property
    def pad(self) -> int:
        return self.special('PAD')

    @property
    def bos(self) -> int:
        return self.special('BOS')

    @property
    def eos(self) -> int:
        return self.special('EOS')

    @property
    def audio_begin(self) -> int:
        return self.special('AUDIO_BEGIN')

    @property
    def audio_end(self) -> int:
        return self.special('AUDIO_END')

    @property
    def reason_begin(self) -> int:
        return self.special('REASON_BEGIN')

    @property
    def recon_begin(self) -> int:
        return self.special('RECON_BEGIN')

    @property
    def sep(self) -> int:
        return self.special('SEP')

    @property
    def text_range(self) -> range:
        return range(self.n_specials, self.n_specials + self.n_text)

    @property
    def text_head_range(self) -> range:
        """Ids the text head may emit: control symbols and text."""
        return range(0, self.n_specials + self.n_text)

    def book_size(self, kind: TokenKind) -> int:
        match kind:
            case TokenKind.REASON:
                return self.n_reason_per_book
            case TokenKind.RECON:
                return self.n_recon_per_book
            case _:
                raise ValueError(f"{kind} has no codebooks.")

    def book_range(self, kind: TokenKind, book: int) -> range:
        if not 0 <= book < self.n_books:
            raise ValueError(f"Book {book} outside [0, {self.n_books}).")
        start = self.n_specials + self.n_text
        if kind == TokenKind.RECON:
            start += self.n_books * self.n_reason_per_book
        elif kind != TokenKind.REASON:
            raise ValueError(f"{kind} has no codebooks.")
        size = self.book_size(kind)
        return range(start + book * size, start + (book + 1) * size)

    def encode(self, kind: TokenKind, book: int, index: int) -> int:
        """The id of (kind, book, index)."""
        kind = TokenKind(kind)
        match kind:
            case TokenKind.SPECIAL:
                limit, start = self.n_specials, 0
            case TokenKind.TEXT:
                limit, start = self.n_text, self.n_specials
            case TokenKind.REASON | TokenKind.RECON:
                ids = self.book_range(kind, book)
                limit, start = len(ids), ids.start
        if kind in (TokenKind.SPECIAL, TokenKind.TEXT) and book != 0:
            raise ValueError(f"{kind} ids live in book 0, got book {book}.")
        if not 0 <= index < limit:
            raise ValueError(f"Index {index} outside [0, {limit}) for {kind}.")
        return start + index

    def decode(self, token: int) -> TokenAddress:
        """The (kind, book, index) of an id."""
        if not 0 <= token < self.size:
            raise ValueError(f"Token {token} outside the vocabulary of {self.size} ids.")
        if token < self.n_specials:
            return TokenAddress(TokenKind.SPECIAL, 0, token)
        token -= self.n_specials
        if token < self.n_text:
            return TokenAddress(TokenKind.TEXT, 0, token)
        token -= self.n_text
        reason_span = self.n_books * self.n_reason_per_book
        if token < reason_span:
            return TokenAddress(TokenKind.REASON, *divmod(token, self.n_reason_per_book))
        return TokenAddress(TokenKind.RECON, *divmod(token - reason_span, self.n_recon_per_book))


# Functions
def build_vocabulary(n_text: int, n_reason_per_book: int, n_recon_per_book: int, n_books: int = 8) -> Vocabulary:
    """Build the joint vocabulary.

    Raises:
        ValueError: If any size is below 2 (n_books below 1).
    """
    sizes = {'n_text': n_text, 'n_reason_per_book': n_reason_per_book, 'n_recon_per_book': n_recon_per_book}
    for name, value in sizes.items():
        if value < 2:
            raise ValueError(f"{name} must be at least 2, got {value}.")
    if n_books < 1:
        raise ValueError(f"n_books must be at least 1, got {n_books}.")
    vocab = Vocabulary(n_text, n_reason_per_book, n_recon_per_book, n_books)
    _logger.debug(f"Built vocabulary of {vocab.size} ids.")
    return vocab
