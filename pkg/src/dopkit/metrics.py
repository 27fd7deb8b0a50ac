"""Text-level scoring primitives: output cleaning, value normalization,
exact match, sentence BLEU, ROUGE-L and path flattening of nested JSON."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from functools import lru_cache
from typing import Any, Iterable, Sequence

KEY_MATCH_EPSILON = 1e-9
BLEU_MAX_ORDER = 4
BLEU_SMOOTHING_K = 5

_FENCE_OPEN = re.compile(r"^```[A-Za-z0-9_+-]*[ \t]*\r?\n?")
_FENCE_CLOSE = re.compile(r"\r?\n?```$")
_VALID_ESCAPES = set('"\\/bfnrt')
_HEX = set("0123456789abcdefABCDEF")

# (pattern, replacement) applied after lowercasing
LANGUAGE_RULES: dict[str, list[tuple[str, str]]] = {
    "de": [("nicht zutreffend", "nicht angegeben")],
    "en": [],
}


# -- cleaning -----------------------------------------------------------------


def strip_code_fences(text: str) -> str:
    text = text.strip()
    text = _FENCE_OPEN.sub("", text, count=1)
    text = _FENCE_CLOSE.sub("", text, count=1)
    return text.strip()


def _outermost_object(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _repair_escapes(text: str) -> str:
    """Double lone backslashes, drop ``\\'`` escapes and escape raw control
    characters that appear inside string literals."""
    out: list[str] = []
    in_string = False
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if not in_string:
            if ch == '"':
                in_string = True
            out.append(ch)
            i += 1
            continue
        if ch == "\\":
            nxt = text[i + 1] if i + 1 < n else ""
            if nxt in _VALID_ESCAPES and nxt:
                out.append(ch + nxt)
                i += 2
            elif nxt == "u" and i + 6 <= n and all(c in _HEX for c in text[i + 2 : i + 6]):
                out.append(text[i : i + 6])
                i += 6
            elif nxt == "'":
                out.append("'")
                i += 2
            else:
                out.append("\\\\")
                i += 1
            continue
        if ch == '"':
            in_string = False
            out.append(ch)
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def clean_json(raw: Any) -> dict[str, Any] | None:
    """Parse a model output into a JSON object, or return None.

    Strips Markdown fences, trims surrounding prose to the outermost balanced
    ``{...}`` and repairs stray escapes before a strict parse. Never raises.
    """
    if isinstance(raw, dict):
        return raw
    if not isinstance(raw, str):
        return None
    text = strip_code_fences(raw)
    candidates = [text]
    obj = _outermost_object(text)
    if obj is not None:
        candidates.append(obj)
        candidates.append(_repair_escapes(obj))
    for candidate in candidates:
        try:
            parsed = json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(parsed, dict):
            return parsed
    return None


def json_validity(raw: Any) -> int:
    return int(clean_json(raw) is not None)


# -- normalization ------------------------------------------------------------


def serialize_flat(value: Any) -> str:
    """Flat string form of a (possibly nested) value."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, list) and all(not isinstance(v, (dict, list)) for v in value):
        return "; ".join("" if v is None else str(v) for v in value)
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True, ensure_ascii=False)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def normalize_value(value: Any, language: str = "en") -> str:
    text = serialize_flat(value)
    text = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii")
    text = " ".join(text.lower().split())
    for pattern, replacement in LANGUAGE_RULES.get(language, []):
        text = text.replace(pattern, replacement)
    return text


def exact_match(gt: str, pred: str) -> int:
    return int(gt == pred)


# -- BLEU ---------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_tokens(
    reference: Sequence[str],
    hypothesis: Sequence[str],
    max_order: int = BLEU_MAX_ORDER,
    k: float = BLEU_SMOOTHING_K,
) -> float:
    """Sentence BLEU, uniform weights, Chen-Cherry smoothing method 4."""
    if not reference or not hypothesis:
        return 0.0
    precisions: list[tuple[int, int]] = []
    for n in range(1, max_order + 1):
        hyp_counts = _ngrams(hypothesis, n)
        ref_counts = _ngrams(reference, n)
        matched = sum(min(count, ref_counts[g]) for g, count in hyp_counts.items())
        precisions.append((matched, max(1, sum(hyp_counts.values()))))
    if precisions[0][0] == 0:
        return 0.0

    hyp_len = len(hypothesis)
    smoothed: list[float] = []
    zero_orders = 1
    for matched, total in precisions:
        if matched == 0 and hyp_len > 1:
            smoothed.append((1.0 / (2**zero_orders * k / math.log(hyp_len))) / total)
            zero_orders += 1
        else:
            smoothed.append(matched / total)

    ref_len = len(reference)
    brevity = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    weight = 1.0 / max_order
    log_sum = math.fsum(weight * math.log(p) for p in smoothed if p > 0)
    return brevity * math.exp(log_sum)


def bleu(gt: str, pred: str) -> float:
    return bleu_tokens(gt.split(), pred.split())


# -- ROUGE-L ------------------------------------------------------------------


@lru_cache(maxsize=None)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer(PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=65536)
def stem(token: str) -> str:
    return _stemmer().stem(token)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_tokens(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    if not reference or not hypothesis:
        return 0.0
    lcs = lcs_length(reference, hypothesis)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hypothesis)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def rouge_l(gt: str, pred: str) -> float:
    return rouge_l_tokens([stem(t) for t in gt.split()], [stem(t) for t in pred.split()])


def value_scores(gt: Any, pred: Any, language: str = "en") -> dict[str, float]:
    """EM, BLEU and ROUGE-L of two raw values after normalization."""
    g = normalize_value(gt, language)
    p = normalize_value(pred, language)
    return {"em": float(exact_match(g, p)), "bleu": bleu(g, p), "rouge": rouge_l(g, p)}


# -- keys ---------------------------------------------------------------------


def key_match_ratio(
    gt_keys: Iterable[str], pred_keys: Iterable[str], language: str = "en", epsilon: float = KEY_MATCH_EPSILON
) -> float:
    gt = {normalize_value(k, language) for k in gt_keys}
    pred = {normalize_value(k, language) for k in pred_keys}
    return len(gt & pred) / (len(gt) + epsilon)


# -- flattening ---------------------------------------------------------------

_INDEX = re.compile(r"\[(\d+)\]$")


def flatten_json(value: Any, prefix: str = "") -> dict[str, Any]:
    """Depth-first path -> scalar map. Object keys are joined with "/",
    array elements are addressed as ``name[i]``."""
    out: dict[str, Any] = {}
    _flatten_into(value, prefix, out)
    return out


def _flatten_into(value: Any, path: str, out: dict[str, Any]) -> None:
    if isinstance(value, dict):
        for key, child in value.items():
            _flatten_into(child, f"{path}/{key}" if path else str(key), out)
    elif isinstance(value, list):
        for i, child in enumerate(value):
            _flatten_into(child, f"{path}[{i}]", out)
    else:
        out[path] = value


def split_path(path: str) -> list[str | int]:
    tokens: list[str | int] = []
    for segment in path.split("/") if path else []:
        indices: list[int] = []
        while (m := _INDEX.search(segment)) is not None:
            indices.insert(0, int(m.group(1)))
            segment = segment[: m.start()]
        if segment:
            tokens.append(segment)
        tokens.extend(indices)
    return tokens


def unflatten_json(flat: dict[str, Any]) -> Any:
    """Inverse of :func:`flatten_json` for keys free of "/" and "[n]"."""
    root: Any = None
    for path, leaf in flat.items():
        tokens = split_path(path)
        if not tokens:
            return leaf
        if root is None:
            root = [] if isinstance(tokens[0], int) else {}
        node = root
        for tok, nxt in zip(tokens, tokens[1:] + [None]):
            make = (lambda: leaf) if nxt is None else (list if isinstance(nxt, int) else dict)
            if isinstance(tok, int):
                while len(node) <= tok:
                    node.append(None)
                if node[tok] is None or nxt is None:
                    node[tok] = make()
                node = node[tok]
            else:
                if tok not in node or nxt is None:
                    node[tok] = make()
                node = node[tok]
    return root
