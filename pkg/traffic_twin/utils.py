from hashlib import sha256
import functools


@functools.lru_cache
def hash_string_tuple(tuple_: tuple[str, ...]) -> str:
    hash_ = sha256()
    for string in tuple_:
        hash_.update(string.encode())

    return hash_.hexdigest()


@functools.lru_cache
def label_key(label: str | int) -> int:
    """
    Map a stream label to a non-negative integer usable as a seed spawn key.

    Integers pass through unchanged, strings are hashed, so ``label_key("gumbel")``
    is stable across processes and platforms.
    """
    if isinstance(label, int):
        if label < 0:
            raise ValueError(f"Stream label must be non-negative, got {label}")
        return label

    return int(hash_string_tuple((label,))[:15], 16)
