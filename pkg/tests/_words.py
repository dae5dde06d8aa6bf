"""Random words and normal monomials shared by the wick and acceptance tests."""

from __future__ import annotations

import numpy as np

from qfock.wick import Annihilate, Create, Gamma, Lambda, NormalForm

VECS = ("phi", "psi", "chi")
OPS = ("T", "S")


def _phase(rng, r_max):
    return complex(r_max * rng.random() * np.exp(2j * np.pi * rng.random()))


def random_word(rng, length):
    word = []
    for _ in range(length):
        kind = rng.integers(4)
        if kind == 0:
            word.append(Create(VECS[rng.integers(3)]))
        elif kind == 1:
            word.append(Annihilate(VECS[rng.integers(3)]))
        elif kind == 2:
            word.append(Lambda(_phase(rng, 0.8), OPS[rng.integers(2)]))
        else:
            word.append(Gamma(_phase(rng, 0.8)))
    return tuple(word)


def random_normal_monomial(rng, max_len=5):
    i, j, l = (int(x) for x in rng.integers(0, 3, size=3))
    while i + j + l + 1 > max_len:
        i, j, l = max(i - 1, 0), max(j - 1, 0), max(l - 1, 0)
    w = tuple(Create(VECS[rng.integers(3)]) for _ in range(i))
    w += tuple(Lambda(_phase(rng, 0.9), OPS[rng.integers(2)]) for _ in range(l))
    w += (Gamma(_phase(rng, 1.0)),)
    w += tuple(Annihilate(VECS[rng.integers(3)]) for _ in range(j))
    return NormalForm({w: complex(rng.standard_normal(), rng.standard_normal())})
