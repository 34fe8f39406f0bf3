from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from SafeGrammar.grammar_errors import SafeSyntaxError

ATOM_SYMBOLS = ("C", "N", "O", "F")
BOND_SYMBOLS = ("=", "#")
BRANCH_OPEN = "("
BRANCH_CLOSE = ")"
DIGIT_SYMBOLS = tuple(str(d) for d in range(1, 10))
SEPARATOR = "."
PAD_TOKEN = "[PAD]"
MASK_TOKEN = "[MASK]"

BOND_ORDER = {"=": 2, "#": 3}
BOND_SYMBOL = {1: "", 2: "=", 3: "#"}


@dataclass(frozen=True)
class TokenTable:
    tokens: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _by_length: Tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token surface strings must be unique")
        if self.tokens[-1] != MASK_TOKEN:
            raise ValueError(f"{MASK_TOKEN} must be the last category")
        if PAD_TOKEN not in self.tokens:
            raise ValueError(f"{PAD_TOKEN} missing from token table")
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.tokens)})
        object.__setattr__(self, "_by_length", tuple(sorted(self.tokens, key=len, reverse=True)))

    @classmethod
    def default(cls) -> "TokenTable":
        return cls(ATOM_SYMBOLS + BOND_SYMBOLS + (BRANCH_OPEN, BRANCH_CLOSE) + DIGIT_SYMBOLS
                   + (SEPARATOR, PAD_TOKEN, MASK_TOKEN))

    @property
    def K(self) -> int:
        return len(self.tokens)

    @property
    def mask_id(self) -> int:
        return self.K - 1

    @property
    def pad_id(self) -> int:
        return self._index[PAD_TOKEN]

    @property
    def separator_id(self) -> int:
        return self._index[SEPARATOR]

    def id_of(self, token: str) -> int:
        return self._index[token]

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def tokenize(self, s: str) -> List[int]:
        """Greedy longest-match segmentation of ``s`` into token ids."""
        ids = []
        i = 0
        while i < len(s):
            for tok in self._by_length:
                if s.startswith(tok, i):
                    ids.append(self._index[tok])
                    i += len(tok)
                    break
            else:
                raise SafeSyntaxError(f"character {s[i]!r} at offset {i} is outside the alphabet")
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[int(i)] for i in ids)

    def surface(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[int(i)] for i in ids]

    def to_list(self) -> List[str]:
        return list(self.tokens)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "TokenTable":
        return cls(tuple(tokens))


DEFAULT_TABLE = TokenTable.default()


def tokenize(s: str, table: TokenTable = DEFAULT_TABLE) -> List[int]:
    return table.tokenize(s)


def detokenize(ids: Sequence[int], table: TokenTable = DEFAULT_TABLE) -> str:
    return table.detokenize(ids)
