"""One-sided shift over the digits 0..7 and its coding of the octupling map."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .phase import Box

ALPHABET = 8


def _check_word(w):
    w = tuple(int(s) for s in w)
    if any(not 0 <= s < ALPHABET for s in w):
        raise ValueError(f"symbols must lie in 0..{ALPHABET - 1}: {w}")
    return w


def shift(w) -> tuple:
    w = _check_word(w)
    if not w:
        raise ValueError("cannot shift the empty word")
    return w[1:]


def encode(phi: float, n: int) -> tuple:
    """First ``n`` base-8 digits of ``phi``; digit ``k`` is ``floor(8**(k+1) * phi) mod 8``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    x = Fraction(phi) % 1
    digits = []
    for _ in range(n):
        x *= ALPHABET
        d = int(x)
        digits.append(d)
        x -= d
    return tuple(digits)


def decode(w) -> Box:
    """The half-open arc of angles whose expansion starts with ``w``."""
    w = _check_word(w)
    lo = Fraction(0)
    for k, s in enumerate(w):
        lo += Fraction(s, ALPHABET ** (k + 1))
    width = Fraction(1, ALPHABET ** len(w))
    return Box((float(lo),), (float(lo + width),), depth=3 * len(w))


def de_bruijn(k: int, n: int) -> list:
    """Cyclic de Bruijn sequence B(k, n) via Lyndon words (length ``k**n``)."""
    a = [0] * (k * n)
    seq = []

    def db(t, p):
        if t > n:
            if n % p == 0:
                seq.extend(a[1:p + 1])
        else:
            a[t] = a[t - p]
            db(t + 1, p)
            for j in range(a[t - p] + 1, k):
                a[t] = j
                db(t + 1, t)

    db(1, 1)
    return seq


def rich_sequence(L: int, copies: int = 1) -> tuple:
    """A word containing every word of length ``<= L`` at least ``copies`` times.

    The cyclic de Bruijn sequence of order ``L`` is repeated ``copies`` times and
    stitched shut by appending its first ``L - 1`` symbols.
    """
    if L < 1 or copies < 1:
        raise ValueError("L and copies must be positive")
    cyc = de_bruijn(ALPHABET, L)
    return tuple(cyc * copies + cyc[:L - 1])


def count_occurrences(seq, word) -> int:
    seq = tuple(seq)
    word = tuple(word)
    m = len(word)
    return sum(1 for i in range(len(seq) - m + 1) if seq[i:i + m] == word)


def generic_expansion(prefix, length: int, seed: int = 0) -> tuple:
    """``prefix`` followed by seeded uniform digits, up to ``length`` symbols.

    Uniform digits stand in for a typical angle; such a tail contains every
    finite word with probability one.
    """
    prefix = _check_word(prefix)
    rest = max(0, length - len(prefix))
    tail = np.random.default_rng(seed).integers(0, ALPHABET, size=rest)
    return prefix + tuple(int(d) for d in tail)


def word_to_str(w) -> str:
    return "".join(str(s) for s in w)


def str_to_word(s: str) -> tuple:
    s = s.strip()
    if s and not s.isdigit():
        raise ValueError(f"not a digit string: {s!r}")
    return _check_word(int(c) for c in s)


def dense_orbit_witness(target_word, target_fiber, eps: float, ifs=None, max_len: int = 64) -> tuple:
    """Base word whose occurrence drives the skew-product fiber ``eps``-close to ``target_fiber``.

    For the point ``q`` the word is ``0`` then ``target_word``. Otherwise the
    fiber is sent to ``q`` by a ``0``, to ``p = f_2(q)`` by a ``2``, steered by a
    Hutchinson word into the ``eps``-ball and only then followed by the target.
    """
    from . import hutchinson
    from .maps import GEOMETRY, fiber_member

    if eps <= 0:
        raise ValueError("eps must be positive")
    w0 = _check_word(target_word)
    x0 = np.asarray(getattr(target_fiber, "coords", target_fiber), dtype=float)
    q = np.array(GEOMETRY.q)
    if np.array_equal(x0, q):
        return (0,) + w0
    if ifs is None:
        ifs = hutchinson.fiber_ifs()
    if GEOMETRY.d_depth(x0[None, :])[0] <= 0 and not np.array_equal(x0, q):
        raise ValueError("target fiber point must lie in D or equal q")
    p = fiber_member(2, q[None, :], ifs.fiber)[0]
    if np.hypot(*(p - x0)) < eps:
        return (0, 2) + w0
    steer = hutchinson.hutchinson_word_search(ifs, x0, eps, max_len, start=p)
    return (0, 2) + tuple(steer) + w0
