"""Tagged-rationale codec and numeric answer handling.

Parses and serializes the ``<core>...</core><info>...</info><cot|pot>...``
reasoning format, extracts final answers from chain-of-thought text,
normalizes numeric tokens to exact decimals, and verifies inline arithmetic
steps for error analysis.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation, localcontext
from fractions import Fraction
from typing import NamedTuple, Optional, Union

from .errors import PipelineError
from .records import Format, NumericAnswer

FRACTION_PRECISION = 12  # significant digits when a/b is converted to decimal
DEFAULT_TOLERANCE = Decimal("1e-4")


class TagError(PipelineError):
    """Base for tag-structure violations; maps to verdict dropped_unparseable."""

    def __init__(self, tag_name: str, message: str):
        super().__init__(message)
        self.tag_name = tag_name


class MissingTag(TagError):
    def __init__(self, tag_name: str):
        super().__init__(tag_name, f"tag group {tag_name!r} not found")


class DuplicateTag(TagError):
    def __init__(self, tag_name: str):
        super().__init__(tag_name, f"tag group {tag_name!r} appears more than once")


class OutOfOrderTags(TagError):
    def __init__(self):
        super().__init__("", "tag groups are not in core -> info -> body order")


class SegmentContainsMarker(PipelineError):
    pass


class NoAnswerFound(PipelineError):
    pass


class NotANumber(PipelineError):
    pass


@dataclass(frozen=True)
class TagLayout:
    """Literal open/close markers for the three tagged segments."""

    format: Format
    core_open: str = "<core>"
    core_close: str = "</core>"
    info_open: str = "<info>"
    info_close: str = "</info>"
    body_open: str = ""
    body_close: str = ""

    def __post_init__(self) -> None:
        if not self.body_open:
            tag = "cot" if self.format is Format.COT else "pot"
            object.__setattr__(self, "body_open", f"<{tag}>")
            object.__setattr__(self, "body_close", f"</{tag}>")
        markers = self.markers()
        if len(set(markers)) != len(markers):
            raise ValueError("tag markers must be distinct")
        for a in markers:
            for b in markers:
                if a != b and a in b:
                    raise ValueError(f"marker {a!r} overlaps with {b!r}")

    def markers(self) -> tuple[str, ...]:
        return (
            self.core_open,
            self.core_close,
            self.info_open,
            self.info_close,
            self.body_open,
            self.body_close,
        )

    @classmethod
    def for_format(cls, fmt: Format) -> "TagLayout":
        return cls(format=fmt)


class TaggedParts(NamedTuple):
    core: str
    info: str
    rationale: str


def _locate(text: str, marker: str, group: str) -> int:
    first = text.find(marker)
    if first < 0:
        raise MissingTag(group)
    if text.find(marker, first + len(marker)) >= 0:
        raise DuplicateTag(group)
    return first


def parse_tagged(text: str, layout: TagLayout) -> TaggedParts:
    """Split raw teacher output into (core, info, rationale) segments.

    Each tag pair must appear exactly once and in core -> info -> body order;
    text outside the tag pairs is ignored. Segment whitespace is trimmed.
    """
    pairs = [
        ("core", layout.core_open, layout.core_close),
        ("info", layout.info_open, layout.info_close),
        ("body", layout.body_open, layout.body_close),
    ]
    spans = []
    for group, open_m, close_m in pairs:
        start = _locate(text, open_m, group)
        end = _locate(text, close_m, group)
        spans.append((start, start + len(open_m), end, end + len(close_m)))
    flat = [pos for span in spans for pos in (span[0], span[2])]
    if flat != sorted(flat) or len(set(flat)) != len(flat):
        raise OutOfOrderTags()
    segments = [text[content_start:end].strip() for _, content_start, end, _ in spans]
    return TaggedParts(*segments)


def serialize_tagged(core: str, info: str, rationale: str, layout: TagLayout) -> str:
    """Emit the canonical tagged concatenation; inverse of parse_tagged."""
    for name, segment in (("core", core), ("info", info), ("rationale", rationale)):
        for marker in layout.markers():
            if marker in segment:
                raise SegmentContainsMarker(f"{name} segment contains marker {marker!r}")
    return (
        f"{layout.core_open}{core}{layout.core_close}"
        f"{layout.info_open}{info}{layout.info_close}"
        f"{layout.body_open}{rationale}{layout.body_close}"
    )


_NUMBER_TOKEN_RE = re.compile(
    r"[-+]?[$€£¥]?\d[\d,]*(?:\.\d+)?(?:/\d[\d,]*(?:\.\d+)?)?%?"
)
_ANSWER_MARKER_RE = re.compile(r"the\s+answer\s+is", re.IGNORECASE)
_PLAIN_NUMBER_RE = re.compile(r"^[-+]?\d[\d,]*(?:\.\d+)?$")
_FRACTION_RE = re.compile(r"^([-+]?\d[\d,]*(?:\.\d+)?)\s*/\s*(\d[\d,]*(?:\.\d+)?)$")


def normalize_number(text: str) -> Decimal:
    """Normalize a numeric token: currency, separators, units, fractions.

    Raises NotANumber when no numeric core remains.
    """
    s = str(text).strip()
    if not s:
        raise NotANumber(f"empty token {text!r}")
    # trailing unit words: "40 dollars", "24 clips"
    s = re.sub(r"(?<=\d)\s+[A-Za-z][A-Za-z\s.]*$", "", s)
    s = s.strip().strip("()")
    s = re.sub(r"[.,;:!?%\s]+$", "", s)
    s = re.sub(r"^([-+]?)\s*[$€£¥]\s*", r"\1", s).strip()
    m = _FRACTION_RE.match(s)
    if m:
        try:
            num = Decimal(m.group(1).replace(",", ""))
            den = Decimal(m.group(2).replace(",", ""))
        except InvalidOperation as exc:
            raise NotANumber(f"bad fraction {text!r}") from exc
        if den == 0:
            raise NotANumber(f"zero denominator in {text!r}")
        with localcontext() as ctx:
            ctx.prec = FRACTION_PRECISION
            return +(num / den)
    if _PLAIN_NUMBER_RE.match(s):
        return Decimal(s.replace(",", ""))
    raise NotANumber(f"not a numeric token: {text!r}")


def extract_final_answer(cot_text: str) -> NumericAnswer:
    """Pick the final answer from chain-of-thought text.

    Precedence: (1) the last "the answer is" marker that is followed by a
    number; (2) the last parseable number anywhere in the text.
    """
    for marker in reversed(list(_ANSWER_MARKER_RE.finditer(cot_text))):
        for token in _NUMBER_TOKEN_RE.finditer(cot_text, marker.end()):
            try:
                value = normalize_number(token.group())
            except NotANumber:
                continue
            return NumericAnswer(value=value, raw=token.group())
    last: Optional[NumericAnswer] = None
    for token in _NUMBER_TOKEN_RE.finditer(cot_text):
        try:
            value = normalize_number(token.group())
        except NotANumber:
            continue
        last = NumericAnswer(value=value, raw=token.group())
    if last is None:
        raise NoAnswerFound("no numeric token in text")
    return last


AnswerLike = Union[NumericAnswer, Decimal, int, str]


def _as_decimal(value: AnswerLike) -> Decimal:
    if isinstance(value, NumericAnswer):
        return value.value
    if isinstance(value, Decimal):
        return value
    return Decimal(str(value))


def answers_match(a: AnswerLike, b: AnswerLike, tol: AnswerLike = DEFAULT_TOLERANCE) -> bool:
    """Relative comparison with an absolute floor of 1 in the denominator.

    Symmetric by construction: the scale is max(1, |a|, |b|).
    """
    da, db = _as_decimal(a), _as_decimal(b)
    tolerance = _as_decimal(tol)
    return abs(da - db) <= tolerance * max(Decimal(1), abs(da), abs(db))


@dataclass(frozen=True)
class ArithStepCheck:
    """One verified `expr = number` claim found in rationale text."""

    expression: str
    claimed: Decimal
    computed: Decimal
    ok: bool


_EXPR_CHARS = set("0123456789.,+-*/×÷−() \t")
_CLAIM_RE = re.compile(
    r"\s*([-+]?[$€£¥]?\d[\d,]*(?:\.\d+)?(?:/\d[\d,]*(?:\.\d+)?)?)"
)
_EXPR_TOKEN_RE = re.compile(r"\d[\d,]*(?:\.\d+)?|[+\-*/()×÷−]")


def _evaluate_expression(expr: str) -> Fraction:
    """Recursive-descent evaluation with standard precedence; exact arithmetic."""
    tokens = []
    pos = 0
    for m in _EXPR_TOKEN_RE.finditer(expr):
        if expr[pos : m.start()].strip():
            raise ValueError(f"junk in expression: {expr!r}")
        tokens.append(m.group())
        pos = m.end()
    if expr[pos:].strip():
        raise ValueError(f"junk at end of expression: {expr!r}")
    if not tokens:
        raise ValueError("empty expression")

    idx = 0

    def peek() -> Optional[str]:
        return tokens[idx] if idx < len(tokens) else None

    def take() -> str:
        nonlocal idx
        tok = tokens[idx]
        idx += 1
        return tok

    def parse_factor() -> Fraction:
        tok = peek()
        if tok is None:
            raise ValueError("unexpected end of expression")
        if tok in ("-", "−"):
            take()
            return -parse_factor()
        if tok == "+":
            take()
            return parse_factor()
        if tok == "(":
            take()
            value = parse_expr()
            if peek() != ")":
                raise ValueError("unbalanced parenthesis")
            take()
            return value
        if tok[0].isdigit():
            take()
            return Fraction(Decimal(tok.replace(",", "")))
        raise ValueError(f"unexpected token {tok!r}")

    def parse_term() -> Fraction:
        value = parse_factor()
        while peek() in ("*", "/", "×", "÷"):
            op = take()
            rhs = parse_factor()
            if op in ("*", "×"):
                value *= rhs
            else:
                if rhs == 0:
                    raise ValueError("division by zero")
                value /= rhs
        return value

    def parse_expr() -> Fraction:
        value = parse_term()
        while peek() in ("+", "-", "−"):
            op = take()
            rhs = parse_term()
            value = value + rhs if op == "+" else value - rhs
        return value

    result = parse_expr()
    if idx != len(tokens):
        raise ValueError("trailing tokens in expression")
    return result


def _fraction_to_decimal(value: Fraction) -> Decimal:
    return Decimal(value.numerator) / Decimal(value.denominator)


def verify_arithmetic_steps(
    cot_text: str, tol: AnswerLike = DEFAULT_TOLERANCE
) -> list[ArithStepCheck]:
    """Check every `expr = number` claim in the text; observational only.

    Candidates that do not parse as arithmetic (no operator, malformed) are
    skipped rather than reported.
    """
    checks: list[ArithStepCheck] = []
    for eq_pos, ch in enumerate(cot_text):
        if ch != "=":
            continue
        claim_match = _CLAIM_RE.match(cot_text, eq_pos + 1)
        if not claim_match:
            continue
        start = eq_pos
        while start > 0 and cot_text[start - 1] in _EXPR_CHARS:
            start -= 1
        candidate = cot_text[start:eq_pos].strip()
        # sentence punctuation swept up by the backward scan
        candidate = candidate.lstrip(".,*/×÷) \t").strip()
        if not candidate or not re.search(r"[+\-*/×÷−]", candidate):
            continue
        try:
            computed = _fraction_to_decimal(_evaluate_expression(candidate))
            claimed = normalize_number(claim_match.group(1))
        except (ValueError, NotANumber, InvalidOperation):
            continue
        checks.append(
            ArithStepCheck(
                expression=candidate,
                claimed=claimed,
                computed=computed,
                ok=answers_match(claimed, computed, tol),
            )
        )
    return checks
