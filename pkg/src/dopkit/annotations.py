"""Ground-truth records, the 12-key EN/DE schema and QA dataset generation."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable

from .metrics import flatten_json, serialize_flat

LANGUAGES = ("en", "de")

TARGET_KEYS: list[tuple[str, str]] = [
    ("Declaration Number", "Erklärungsnummer"),
    ("Unique Identification Code of the Product-Type", "Eindeutiger Identifikationscode des Produkttyps"),
    ("Intended Use(s)", "Vorgesehene Verwendung"),
    ("Manufacturer", "Hersteller"),
    ("Authorised Representative", "Bevollmächtigter"),
    (
        "System(s) of Assessment and Verification of Constancy of Performance (AVCP)",
        "System(e) zur Bewertung und Überprüfung der Leistungsbeständigkeit (AVCP)",
    ),
    ("Harmonised Standard", "Harmonisierte Norm"),
    ("Notified Body", "Notifizierte Stelle"),
    ("Declared Performance", "Erklärte Leistung"),
    (
        "Appropriate Technical Documentation and/or Specific Technical Documentation",
        "Geeignete technische Dokumentation und/oder besondere technische Dokumentation",
    ),
    ("Declaration Statement", "Erklärungstext"),
    ("Signature", "Unterschrift"),
]

DECLARED_PERFORMANCE = "Declared Performance"
SIGNATURE = "Signature"
AVCP = TARGET_KEYS[5][0]
NESTED_KEYS = (DECLARED_PERFORMANCE, SIGNATURE)
ENTITY_KEYS = ("Manufacturer", "Authorised Representative", "Notified Body")

_EN_TO_DE = dict(TARGET_KEYS)
_DE_TO_EN = {de: en for en, de in TARGET_KEYS}
# transliterated spellings seen in annotation files
_DE_TO_EN.update({"Erklaerte Leistung": DECLARED_PERFORMANCE, "Erklaerungsnummer": "Declaration Number"})


def target_keys(language: str) -> list[str]:
    _check_language(language)
    return [en if language == "en" else de for en, de in TARGET_KEYS]


def translate_key(key: str, language: str) -> str:
    """Map a top-level key name (either language) to ``language``."""
    en = canonical_key(key)
    if en is None:
        return key
    return en if language == "en" else _EN_TO_DE[en]


def canonical_key(key: str) -> str | None:
    """English name of a known top-level key, or None."""
    if key in _EN_TO_DE:
        return key
    return _DE_TO_EN.get(key)


def is_nested_key(key: str) -> bool:
    return canonical_key(key) in NESTED_KEYS


def _check_language(language: str) -> None:
    if language not in LANGUAGES:
        raise ValueError(f"unsupported language {language!r}; expected one of {LANGUAGES}")


_PERFORMANCE_TEMPLATE = {
    "<property_name_1>": "<string>",
    "<property_name_2>": {"<sub_property_1>": "<string>", "<sub_property_2>": "<string>"},
    "<property_name_3>": {"<nested_sub_property_1>": "<string>", "<nested_sub_property_2>": "<string>"},
    "...": "...",
}

SCHEMA_EN: dict[str, Any] = {
    "Declaration Number": "<string>",
    "Unique Identification Code of the Product-Type": "<string>",
    "Intended Use(s)": "<string>",
    "Manufacturer": "<string>",
    "Authorised Representative": "<string>",
    AVCP: "<string or list of strings>",
    "Harmonised Standard": "<string>",
    "Notified Body": "<string>",
    "Declared Performance": _PERFORMANCE_TEMPLATE,
    "Appropriate Technical Documentation and/or Specific Technical Documentation": "<string>",
    "Declaration Statement": "<string>",
    "Signature": {
        "Signatories": [{"Name": "<string>", "Position": "<string>"}],
        "Place and Date of Issue": "<string>",
        "Notice": "<string>",
    },
}

SCHEMA_DE: dict[str, Any] = {
    "Erklärungsnummer": "<string>",
    "Eindeutiger Identifikationscode des Produkttyps": "<string>",
    "Vorgesehene Verwendung": "<string>",
    "Hersteller": "<string>",
    "Bevollmächtigter": "<string>",
    TARGET_KEYS[5][1]: "<string or list of strings>",
    "Harmonisierte Norm": "<string>",
    "Notifizierte Stelle": "<string>",
    "Erklärte Leistung": _PERFORMANCE_TEMPLATE,
    "Geeignete technische Dokumentation und/oder besondere technische Dokumentation": "<string>",
    "Erklärungstext": "<string>",
    "Unterschrift": {
        "Unterzeichner": [{"Name": "<string>", "Position": "<string>"}],
        "Ort und Datum der Ausstellung": "<string>",
        "Hinweis": "<string>",
    },
}

# Signature sub-keys every document is expected to carry; absent ones get
# placeholder QA entries.
REQUIRED_SIGNATURE_PATHS = {
    "en": ("Signatories[0]/Name", "Signatories[0]/Position", "Place and Date of Issue", "Notice"),
    "de": ("Unterzeichner[0]/Name", "Unterzeichner[0]/Position", "Ort und Datum der Ausstellung", "Hinweis"),
}


@dataclass(frozen=True)
class SchemaTemplate:
    language: str
    keys: tuple[tuple[str, str], ...]  # (key name, "scalar" | "nested")
    template: dict[str, Any]

    @property
    def key_names(self) -> list[str]:
        return [name for name, _ in self.keys]


def schema_template(language: str, path: str | Path | None = None) -> SchemaTemplate:
    """The 12-key template for ``language``; ``path`` overrides it with a
    JSON file holding ``{"en": {...}, "de": {...}}``."""
    _check_language(language)
    if path is not None:
        template = json.loads(Path(path).read_text(encoding="utf-8"))[language]
    else:
        template = SCHEMA_EN if language == "en" else SCHEMA_DE
    keys = tuple((k, "nested" if isinstance(v, (dict, list)) else "scalar") for k, v in template.items())
    return SchemaTemplate(language, keys, template)


# -- records ------------------------------------------------------------------


@dataclass
class KvpAnnotation:
    doc_name: str
    doc_lang: str
    key_en: str
    key_de: str
    value_en: Any
    value_de: Any

    def key(self, language: str) -> str:
        return self.key_en if language == "en" else self.key_de

    def value(self, language: str) -> Any:
        return self.value_en if language == "en" else self.value_de

    @property
    def canonical(self) -> str:
        return canonical_key(self.key_en) or self.key_en

    @property
    def nested(self) -> bool:
        return isinstance(self.value_en, dict) or isinstance(self.value_de, dict)


@dataclass
class QaItem:
    doc_name: str
    user_language: str
    parent_key: str
    key: str
    value: str
    question: str
    normalized_key: str | None = None

    @property
    def is_nested(self) -> bool:
        return self.key != self.parent_key

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.normalized_key is None:
            del data["normalized_key"]
        return data


def validate_annotations(annotations: Iterable[KvpAnnotation]) -> None:
    seen: set[tuple[str, str]] = set()
    for ann in annotations:
        ident = (ann.doc_name, ann.key_en)
        if ident in seen:
            raise ValueError(f"duplicate annotation for {ident}")
        seen.add(ident)
        if isinstance(ann.value_en, dict) != isinstance(ann.value_de, dict):
            raise ValueError(f"{ident}: value_en and value_de differ in structure")


def load_kvp_annotations(path: str | Path) -> list[KvpAnnotation]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    fields = ("doc_name", "doc_lang", "key_en", "key_de", "value_en", "value_de")
    anns = [KvpAnnotation(**{f: row.get(f) for f in fields}) for row in rows]
    validate_annotations(anns)
    return anns


def dump_kvp_annotations(anns: Iterable[KvpAnnotation], path: str | Path) -> None:
    Path(path).write_text(json.dumps([asdict(a) for a in anns], ensure_ascii=False, indent=2), encoding="utf-8")


def load_qa_items(path: str | Path) -> list[QaItem]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [QaItem(**row) for row in rows]


def dump_qa_items(items: Iterable[QaItem], path: str | Path) -> None:
    text = json.dumps([i.to_dict() for i in items], ensure_ascii=False, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


# -- question templates -------------------------------------------------------

AVCP_QUESTION = {
    "en": "Which AVCP system applies according to the declaration of performance?",
    "de": "Welches AVCP-System gilt laut der Leistungserklärung?",
}


def flat_question(key: str, language: str) -> str:
    canonical = canonical_key(key)
    if canonical == AVCP:
        return AVCP_QUESTION[language]
    if canonical in ENTITY_KEYS:
        return f"Who is the {key}?" if language == "en" else f"Wer ist der/die {key}?"
    return f"What is the {key}?" if language == "en" else f"Was ist der/die/das {key}?"


def nested_question(parent: str, path: str, language: str) -> tuple[str, str]:
    """(question, normalized_key) for a flattened path below ``parent``."""
    if canonical_key(parent) == SIGNATURE:
        tail = path[len(parent) + 1 :]
        leaf = tail.rsplit("/", 1)[-1]
        place = REQUIRED_SIGNATURE_PATHS[language][2]
        if leaf == "Name":
            q = (
                f"Who signed the declaration ({path})?"
                if language == "en"
                else f"Wer hat die Erklärung unterschrieben ({path})?"
            )
            return q, "signature"
        if tail == place:
            q = (
                f"Where was the declaration signed ({path})?"
                if language == "en"
                else f"Wo wurde die Erklärung unterschrieben ({path})?"
            )
            return q, "signature"
        return _value_question(path, language), "signature"
    return _value_question(path, language), "performance"


def _value_question(path: str, language: str) -> str:
    return f"What is the value of '{path}'?" if language == "en" else f"Was ist der Wert von '{path}'?"


def generate_flat_qa(ann: KvpAnnotation, language: str, *, allow_nested: bool = False) -> QaItem:
    """Base-level question for one key. Nested values are rejected unless
    ``allow_nested``, in which case they are serialized to a flat string."""
    _check_language(language)
    value = ann.value(language)
    if isinstance(value, dict) and not allow_nested:
        raise ValueError(f"{ann.key_en!r} has a nested value; use generate_nested_qa")
    key = ann.key(language)
    return QaItem(
        doc_name=ann.doc_name,
        user_language=language,
        parent_key=key,
        key=key,
        value=serialize_flat(value),
        question=flat_question(key, language),
    )


def generate_nested_qa(ann: KvpAnnotation, language: str) -> list[QaItem]:
    _check_language(language)
    value = ann.value(language)
    if not isinstance(value, dict):
        raise ValueError(f"{ann.key_en!r} does not have a nested value")
    parent = ann.key(language)
    leaves = flatten_json(value, parent)
    expected: list[str] = []
    if ann.canonical == SIGNATURE:
        expected = [f"{parent}/{p}" for p in REQUIRED_SIGNATURE_PATHS[language]]

    items = []
    for path, leaf in leaves.items():
        question, tag = nested_question(parent, path, language)
        items.append(QaItem(ann.doc_name, language, parent, path, serialize_flat(leaf), question, tag))
    for path in expected:
        if path in leaves:
            continue
        question, tag = nested_question(parent, path, language)
        items.append(QaItem(ann.doc_name, language, parent, path, "", question, tag))
    return items


def generate_qa_dataset(annotations: Iterable[KvpAnnotation], languages: Iterable[str] = LANGUAGES) -> list[QaItem]:
    """Every key gets one base question per language (nested values
    serialized flat); nested keys are additionally expanded per leaf."""
    languages = list(languages)
    items: list[QaItem] = []
    for ann in annotations:
        for language in languages:
            items.append(generate_flat_qa(ann, language, allow_nested=True))
            if isinstance(ann.value(language), dict):
                items.extend(generate_nested_qa(ann, language))
    return items


def sample_eval_set(items: list[QaItem], seed: int, per_parent: int = 2) -> list[QaItem]:
    """All base questions plus at most ``per_parent`` nested questions per
    (doc, language, parent), chosen by a seeded shuffle. Input order is kept."""
    groups: dict[tuple[str, str, str], list[int]] = {}
    keep: set[int] = set()
    for i, item in enumerate(items):
        if item.is_nested:
            groups.setdefault((item.doc_name, item.user_language, item.parent_key), []).append(i)
        else:
            keep.add(i)
    for (doc, lang, parent), indices in groups.items():
        rng = random.Random(f"{seed}|{doc}|{lang}|{parent}")
        shuffled = indices[:]
        rng.shuffle(shuffled)
        keep.update(shuffled[:per_parent])
    return [item for i, item in enumerate(items) if i in keep]


def dataset_stats(
    kvps: list[KvpAnnotation], qas: list[QaItem], sampled: list[QaItem] | None = None, seed: int = 0
) -> dict[str, int]:
    """Counts in the per-language row convention (one row per key per
    language)."""
    expanded = 0
    for ann in kvps:
        for language in LANGUAGES:
            value = ann.value(language)
            expanded += max(1, len(flatten_json(value))) if isinstance(value, (dict, list)) else 1
    if sampled is None:
        sampled = sample_eval_set(qas, seed)
    return {
        "flat_kvps": len(kvps) * len(LANGUAGES),
        "nested_expanded": expanded,
        "qa_initial": sum(1 for q in qas if not q.is_nested),
        "qa_nested": len(qas),
        "qa_sampled": len(sampled),
    }
