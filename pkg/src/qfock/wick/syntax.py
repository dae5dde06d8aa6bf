"""Text syntax for words and polynomials.

Grammar (whitespace between tokens is ignored)::

    poly  := <empty> | term (("+" | "-") term)*
    term  := ["-"] [coeff] word          coeff or word must be present
    coeff := NUMBER | "(" SNUMBER ")"
    word  := gen*
    gen   := "a*(" ID ")" | "a(" ID ")" | "L(" ["mu="] SNUMBER ";" ID ")"
           | "G(" SNUMBER ")"
    NUMBER  := REAL [("+" | "-") REAL "j"] | REAL "j"
    SNUMBER := ["+" | "-"] NUMBER
    ID    := NAME ("." NAME)*
    NAME  := [A-Za-z_][A-Za-z0-9_]* ["[" ... "]"] "~"*

The empty string is the identity. Example: ``2 a(x) a*(y) - (0.5+1j) L(mu=0.3; T) G(0.7)``.
"""

from __future__ import annotations

import re

from .algebra import Annihilate, Create, Gamma, Lambda, Polynomial

_REAL = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_NUMBER = re.compile(rf"(?:{_REAL}[+-]{_REAL}j|{_REAL}j?)")
_SNUMBER = re.compile(rf"[+-]?(?:{_REAL}[+-]{_REAL}j|{_REAL}j?)")
_NAME = r"[A-Za-z_][A-Za-z0-9_]*(?:\[[^\[\]]*\])?~*"
_ID = re.compile(rf"{_NAME}(?:\.{_NAME})*")
_WS = re.compile(r"\s*")


class ParseError(ValueError):
    def __init__(self, msg: str, text: str, pos: int):
        super().__init__(f"{msg} at position {pos}: {text[:pos]}⟨here⟩{text[pos:]}")
        self.pos = pos


def _to_complex(s: str) -> complex:
    return complex(s.replace(" ", ""))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def ws(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def peek(self, s: str) -> bool:
        self.ws()
        return self.text.startswith(s, self.pos)

    def eat(self, s: str) -> bool:
        if self.peek(s):
            self.pos += len(s)
            return True
        return False

    def expect(self, s: str):
        if not self.eat(s):
            raise ParseError(f"expected {s!r}", self.text, self.pos)

    def regex(self, rx, what):
        self.ws()
        m = rx.match(self.text, self.pos)
        if not m:
            raise ParseError(f"expected {what}", self.text, self.pos)
        self.pos = m.end()
        return m.group(0)

    def at_end(self) -> bool:
        self.ws()
        return self.pos >= len(self.text)

    def poly(self) -> Polynomial:
        terms: dict = {}
        if self.at_end():
            return Polynomial.identity()
        sign = -1.0 if self.eat("-") else 1.0
        while True:
            c, w = self.term()
            terms[w] = terms.get(w, 0j) + sign * c
            if self.at_end():
                break
            if self.eat("+"):
                sign = 1.0
            elif self.eat("-"):
                sign = -1.0
            else:
                raise ParseError("expected '+', '-' or end of input", self.text, self.pos)
            if self.eat("-"):
                sign = -sign
        return Polynomial(terms)

    def term(self):
        start = self.pos
        coeff = 1.0 + 0j
        have_coeff = False
        self.ws()
        if self.eat("("):
            coeff = _to_complex(self.regex(_SNUMBER, "number"))
            self.expect(")")
            have_coeff = True
        elif _NUMBER.match(self.text, self.pos):
            coeff = _to_complex(self.regex(_NUMBER, "number"))
            have_coeff = True
        word = []
        while True:
            g = self.generator()
            if g is None:
                break
            word.append(g)
        if not word and not have_coeff:
            raise ParseError("expected a term", self.text, start)
        return coeff, tuple(word)

    def generator(self):
        if self.eat("a*("):
            name = self.regex(_ID, "identifier")
            self.expect(")")
            return Create(name)
        if self.eat("a("):
            name = self.regex(_ID, "identifier")
            self.expect(")")
            return Annihilate(name)
        if self.eat("L("):
            self.eat("mu=")
            mu = _to_complex(self.regex(_SNUMBER, "number"))
            self.expect(";")
            name = self.regex(_ID, "identifier")
            self.expect(")")
            return Lambda(mu, name)
        if self.eat("G("):
            mu = _to_complex(self.regex(_SNUMBER, "number"))
            self.expect(")")
            return Gamma(mu)
        return None


def parse_polynomial(text: str) -> Polynomial:
    return _Parser(text).poly()


def parse_word(text: str) -> tuple:
    p = parse_polynomial(text)
    if len(p) != 1 or next(iter(p.terms.values())) != 1:
        raise ValueError(f"not a single word: {text!r}")
    return next(iter(p.terms))


# --------------------------------------------------------------------------- #
# printing
# --------------------------------------------------------------------------- #

def _fmt_real(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def format_number(z: complex) -> str:
    """Shortest round-tripping text for ``z`` (no surrounding parentheses)."""
    z = complex(z)
    if z.imag == 0.0:
        return _fmt_real(z.real)
    sign = "-" if z.imag < 0 else "+"
    return f"{_fmt_real(z.real)}{sign}{_fmt_real(abs(z.imag))}j"


def format_generator(g) -> str:
    if isinstance(g, Create):
        return f"a*({g.vec})"
    if isinstance(g, Annihilate):
        return f"a({g.vec})"
    if isinstance(g, Lambda):
        return f"L(mu={format_number(g.mu)}; {g.op})"
    if isinstance(g, Gamma):
        return f"G({format_number(g.mu)})"
    raise TypeError(f"not a generator: {g!r}")


def format_word(word) -> str:
    return " ".join(format_generator(g) for g in word)


def _term_text(c: complex, word) -> tuple[bool, str]:
    """(negative, body) so that the caller can choose ' + ' or ' - '."""
    w = format_word(word)
    if c.imag == 0.0:
        neg = c.real < 0
        mag = abs(c.real)
        if mag == 1.0 and w:
            return neg, w
        return neg, f"{_fmt_real(mag)} {w}".rstrip()
    return False, f"({format_number(c)}) {w}".rstrip()


def _sort_key(word):
    return (-len(word), format_word(word))


def format_polynomial(p: Polynomial) -> str:
    """Canonical text; longer words first, then lexicographic."""
    if not p.terms:
        return "0"
    parts = []
    for k, word in enumerate(sorted(p.terms, key=_sort_key)):
        neg, body = _term_text(p.terms[word], word)
        if k == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)
