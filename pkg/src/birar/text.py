import re
from typing import Tuple

TokenSeq = Tuple[str, ...]

_SEPARATORS = re.compile(r"[\W_]+")


def tokenize(text: str) -> TokenSeq:
    """Lowercase, turn every non-word character into a separator, split.

    >>> tokenize("The Eiffel Tower!")
    ('the', 'eiffel', 'tower')
    """
    return tuple(_SEPARATORS.sub(" ", text.lower()).split())


def render(tokens: TokenSeq) -> str:
    return " ".join(tokens)
