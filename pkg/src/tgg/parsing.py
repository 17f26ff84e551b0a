"""Extraction of relations, narratives and judge verdicts from model completions."""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

ARROW = r"(?:->|\u2192|=>|\u2014>|\u2013>)"
LABEL = r"[A-Za-z_][A-Za-z0-9_]*"
_RELATION = re.compile(rf"({LABEL})\s*{ARROW}\s*({LABEL})")
_RELATIONS_DEF = re.compile(r"def\s+get_relations?\s*\(\s*self\s*\)\s*(?:->\s*[^:]+)?:")
_NARRATIVE_DEF = re.compile(r"def\s+get_narrative\s*\(\s*self\s*\)\s*(?:->\s*[^:]+)?:")
_FENCE = re.compile(r"^\s*```[A-Za-z0-9_+-]*\s*$", re.MULTILINE)
_CODE_START = re.compile(r"^\s*(?:class\s|def\s|return\b|\[|#|@|\"|')", re.MULTILINE)
_CLASS = re.compile(r"^\s*class\s+\w+", re.MULTILINE)


@dataclass
class ModelOutput:
    raw: str
    relations: list[tuple[str, str]] = field(default_factory=list)
    narrative: str | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def validity(self) -> bool:
        return bool(self.relations)


def _strip_fences(text: str) -> str:
    return _FENCE.sub("", text)


def _bracket_span(text: str, start: int) -> tuple[int, int] | None:
    """Span of the first balanced ``[...]`` at or after ``start``."""
    open_at = text.find("[", start)
    if open_at < 0:
        return None
    depth = 0
    quote = None
    i = open_at
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 1
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return open_at, i + 1
        i += 1
    # unterminated list (truncated generation): take the rest
    return open_at, len(text)


def _arrow_lists(text: str) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    while True:
        span = _bracket_span(text, pos)
        if span is None:
            break
        if _RELATION.search(text, span[0], span[1]):
            spans.append(span)
        pos = span[0] + 1 if span[1] <= span[0] + 1 else span[1]
    return spans


def _entries(segment: str, diagnostics: list[str]) -> list[tuple[str, str]]:
    """Relations inside a list body, one per comma/newline separated entry."""
    found: list[tuple[str, str]] = []
    skipped = 0
    for chunk in re.split(r",|\n", segment):
        chunk = chunk.strip().strip("[]").strip()
        if not chunk or chunk.startswith("#"):
            continue
        m = _RELATION.search(chunk)
        if m:
            found.append((m.group(1), m.group(2)))
        else:
            skipped += 1
    if skipped:
        diagnostics.append(f"skipped {skipped} malformed entries")
    return found


def extract_relations(raw: str) -> ModelOutput:
    """Parse the relation list out of a completion.

    Takes the list returned by the last ``get_relations`` definition when
    one is present, else the last bracketed list containing arrows, else
    any bare ``X -> Y`` lines.
    """
    out = ModelOutput(raw=raw)
    text = _strip_fences(raw)
    first_code = _CODE_START.search(text)
    lead = text[: first_code.start()] if first_code else text
    if first_code and lead.strip():
        out.diagnostics.append("lead phrase stripped")
    if _CLASS.search(text):
        out.diagnostics.append("full class regenerated")

    defs = list(_RELATIONS_DEF.finditer(text))
    relations: list[tuple[str, str]] = []
    if defs:
        region_start = defs[-1].end()
        nxt = re.search(r"^\s*(?:def|class)\s", text[region_start:], re.MULTILINE)
        region = text[region_start : region_start + nxt.start()] if nxt else text[region_start:]
        span = _bracket_span(region, 0)
        if span and _RELATION.search(region, *span):
            relations = _entries(region[span[0] + 1 : span[1]], out.diagnostics)
        else:
            relations = _entries(region, out.diagnostics) if _RELATION.search(region) else []
            if relations:
                out.diagnostics.append("relations outside a list literal")
    if not relations:
        spans = _arrow_lists(text)
        if spans:
            s, e = spans[-1]
            relations = _entries(text[s + 1 : e], out.diagnostics)
        elif _RELATION.search(text):
            relations = [(m.group(1), m.group(2)) for m in _RELATION.finditer(text)]
            out.diagnostics.append("relations outside a list literal")
    out.relations = relations
    out.narrative = extract_narrative(raw)
    if not relations:
        out.diagnostics.append("no relations found")
    return out


def _unquote(body: str) -> str:
    try:
        value = ast.literal_eval(body)
    except (ValueError, SyntaxError):
        value = None
    if isinstance(value, str):
        return value
    if len(body) >= 2 and body[0] == body[-1] and body[0] in "\"'":
        return body[1:-1]
    return body


def extract_narrative(raw: str) -> str | None:
    text = _strip_fences(raw)
    defs = list(_NARRATIVE_DEF.finditer(text))
    if not defs:
        return None
    start = defs[-1].end()
    rest = text[start:]
    stop = _RELATIONS_DEF.search(rest)
    body = rest[: stop.start()] if stop else rest
    lines = []
    for line in body.splitlines():
        s = line.strip()
        if s in ("# TODO", "# END") or s.startswith("# Let's think"):
            continue
        lines.append(line)
    body = "\n".join(lines).strip()
    if body.startswith("return"):
        body = body[len("return"):].strip()
        if body.startswith("(") and body.endswith(")"):
            body = body[1:-1].strip()
        body = _unquote(body)
    else:
        body = "\n".join(ln.strip().lstrip("#").strip() for ln in body.splitlines())
        body = _unquote(body.strip())
    body = body.strip()
    return body or None


VERDICTS = {
    "yes": "yes",
    "largely yes": "largely_yes",
    "ambivalent": "ambivalent",
    "largely no": "largely_no",
    "no": "no",
}
_ANSWER = re.compile(r"^\W*answer\W*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_RATIONALE = re.compile(r"^\W*rationale\W*:\s*(.*?)(?=^\W*(?:correct\s+)?temporal links\W*:|\Z)", re.IGNORECASE | re.MULTILINE | re.DOTALL)
_TOTAL = re.compile(r"^\W*temporal links\W*:\s*(\d+)", re.IGNORECASE | re.MULTILINE)
_CORRECT = re.compile(r"^\W*correct temporal links\W*:\s*(\d+)", re.IGNORECASE | re.MULTILINE)


class JudgeParseError(ValueError):
    pass


@dataclass
class JudgeVerdict:
    verdict: str
    rationale: str = ""
    total_links: int | None = None
    correct_links: int | None = None
    diagnostics: list[str] = field(default_factory=list)


def parse_judge(raw: str) -> JudgeVerdict:
    answers = list(_ANSWER.finditer(raw))
    if not answers:
        raise JudgeParseError("no 'Answer:' line in judge output")
    # an echoed format line ("yes/largely yes/...") is skipped in favour of a real answer
    chosen = None
    for m in reversed(answers):
        answer = " ".join(re.sub(r"[^a-z ]", " ", m.group(1).lower()).split())
        if answer in VERDICTS:
            chosen = answer
            break
    if chosen is None:
        raise JudgeParseError(f"verdict {answers[-1].group(1)!r} is not one of {'/'.join(VERDICTS)}")
    verdict = JudgeVerdict(VERDICTS[chosen])
    r = _RATIONALE.search(raw)
    if r:
        verdict.rationale = r.group(1).strip().strip("'").strip()
    total = _TOTAL.search(raw)
    correct = _CORRECT.search(raw)
    if total:
        verdict.total_links = int(total.group(1))
    else:
        verdict.diagnostics.append("missing temporal link count")
    if correct:
        verdict.correct_links = int(correct.group(1))
    else:
        verdict.diagnostics.append("missing correct link count")
    if verdict.total_links is not None and verdict.correct_links is not None:
        if verdict.correct_links > verdict.total_links:
            verdict.diagnostics.append("correct links exceed total links")
    return verdict
