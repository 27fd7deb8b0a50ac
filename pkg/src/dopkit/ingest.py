"""Document adapters: modality check, native text with page-level OCR
recovery, OCR text sanitization and stopword language detection."""

from __future__ import annotations

import logging
import re
import shlex
import subprocess
import tempfile
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

log = logging.getLogger(__name__)

NONPRINTABLE_RATIO = 0.20
REPLACEMENT_RATIO = 0.05
MIN_ALPHA = 10
TEXT_PAGE_SHARE = 0.5
MIN_LANGUAGE_CHARS = 20
PAGE_SEPARATOR = "\f"

_ZERO_WIDTH = dict.fromkeys(map(ord, "\u200b\u200c\u200d\u2060\ufeff"))


class IngestError(Exception):
    """The document cannot be read."""


class OcrError(IngestError):
    def __init__(self, page_index: int, message: str):
        super().__init__(f"OCR failed on page {page_index}: {message}")
        self.page_index = page_index


class LanguageDetectionError(ValueError):
    pass


# -- heuristics ----------------------------------------------------------------


def is_garbage(page_text: str) -> bool:
    """True when native text is unusable: too many non-printable or
    replacement characters, or too few letters on a nonempty page."""
    if not page_text:
        return False
    n = len(page_text)
    nonprintable = sum(1 for ch in page_text if not ch.isprintable() and ch not in "\n\r\t")
    if nonprintable / n > NONPRINTABLE_RATIO:
        return True
    if page_text.count("\ufffd") / n > REPLACEMENT_RATIO:
        return True
    return sum(1 for ch in page_text if ch.isalpha()) < MIN_ALPHA


def needs_ocr(page_text: str) -> bool:
    return not page_text.strip() or is_garbage(page_text)


def _collapse_punct(match: re.Match[str]) -> str:
    return match.group(1) * 3


_REPEATS = re.compile(r"(.)\1{3,}", re.DOTALL)


def sanitize_ocr_text(text: str) -> str:
    """Drop control characters (newline and tab survive) and zero-width
    characters, then shorten runs of one repeated punctuation or symbol
    character to three."""
    kept = "".join(ch for ch in text if ch in "\n\t" or unicodedata.category(ch) != "Cc")
    kept = kept.translate(_ZERO_WIDTH)
    return _REPEATS.sub(
        lambda m: _collapse_punct(m) if unicodedata.category(m.group(1))[0] in "PS" else m.group(0), kept
    )


# -- language detection --------------------------------------------------------

_STOPWORDS = {
    "de": frozenset(
        """der die das und ist nicht ein eine einer eines dem den des mit von zu zur zum für auf im in
        wird werden sich auch als bei nach über gemäß gemäss dieser diese dieses oder sind wurde durch
        aus es sie er wir ihr kein keine nur noch wie wenn sowie""".split()
    ),
    "en": frozenset(
        """the and is not a an of to in for on with by from as at be are was were this that these those
        or it its which has have been will shall under according than into""".split()
    ),
}
_WORD = re.compile(r"[^\W\d_]+")


def detect_language(text: str) -> str:
    """``"de"`` or ``"en"`` by stopword counts; ties go to German, the
    dominant corpus language."""
    if len(text.strip()) < MIN_LANGUAGE_CHARS:
        raise LanguageDetectionError(
            f"need at least {MIN_LANGUAGE_CHARS} characters to detect the language; extract more text first"
        )
    words = _WORD.findall(text.lower())
    de = sum(1 for w in words if w in _STOPWORDS["de"])
    en = sum(1 for w in words if w in _STOPWORDS["en"])
    return "en" if en > de else "de"


# -- adapters ------------------------------------------------------------------


def native_pages(path: str | Path) -> list[str]:
    """Per-page native text. Plain-text files stand in for single- or
    multi-page documents, pages separated by form feeds."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"document not found: {path}")
    if path.suffix.lower() == ".txt":
        return path.read_text(encoding="utf-8").split(PAGE_SEPARATOR)
    from pypdf import PdfReader
    from pypdf.errors import PyPdfError

    try:
        reader = PdfReader(str(path))
        return [page.extract_text() or "" for page in reader.pages]
    except (PyPdfError, OSError, ValueError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def render_page_png(path: str | Path, page_index: int, output: str | Path, scale: float = 2.0) -> Path:
    """Rasterize one PDF page to PNG."""
    import pypdfium2 as pdfium

    pdf = pdfium.PdfDocument(str(path))
    try:
        image = pdf[page_index].render(scale=scale).to_pil()
        image.save(str(output), format="PNG")
    finally:
        pdf.close()
    return Path(output)


@dataclass
class CommandOcr:
    """OCR through an external command.

    ``template`` is split like a shell command and may use ``{image}`` (the
    rendered page) and ``{output}`` (a path whose ``.txt`` file the command
    writes, or leaves absent to use stdout)."""

    template: str
    renderer: Callable[[Path, int, Path], Path] = render_page_png
    timeout: float = 300.0

    def __call__(self, path: Path, page_index: int) -> str:
        with tempfile.TemporaryDirectory() as tmp:
            image = Path(tmp) / f"page-{page_index}.png"
            output = Path(tmp) / f"page-{page_index}"
            try:
                self.renderer(Path(path), page_index, image)
            except Exception as exc:  # renderer failures become OCR errors
                raise OcrError(page_index, f"render failed: {exc}") from exc
            argv = [a.format(image=image, output=output) for a in shlex.split(self.template)]
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise OcrError(page_index, str(exc)) from exc
            if proc.returncode != 0:
                raise OcrError(page_index, proc.stderr.decode("utf-8", "replace").strip() or f"exit {proc.returncode}")
            written = output.with_suffix(".txt")
            if written.exists():
                return written.read_text(encoding="utf-8")
            return proc.stdout.decode("utf-8", "replace")


@dataclass
class DocumentAdapters:
    native_extractor: Callable[[Path], list[str]] = native_pages
    ocr_extractor: Callable[[Path, int], str] | None = None
    renderer: Callable[[Path, int, Path], Path] | None = None
    cache: bool = False
    max_workers: int = 1

    def check_if_scanned(self, doc: str | Path) -> str:
        pages = self.native_extractor(Path(doc))
        good = sum(1 for p in pages if not needs_ocr(p))
        return "text" if pages and good / len(pages) >= TEXT_PAGE_SHARE else "scanned"

    def extract_text(self, doc: str | Path, mode: str = "direct") -> str:
        if mode not in ("direct", "ocr"):
            raise ValueError(f"unknown extraction mode {mode!r}")
        doc = Path(doc)
        cache_file = self._cache_path(doc, mode)
        if cache_file is not None and cache_file.exists():
            return cache_file.read_text(encoding="utf-8")

        pages = self.native_extractor(doc)
        if mode == "ocr":
            if self.ocr_extractor is None:
                raise IngestError("OCR mode requested but no OCR command is configured")
            todo = list(range(len(pages)))
        else:
            todo = [i for i, p in enumerate(pages) if needs_ocr(p)]
            if todo and self.ocr_extractor is None:
                log.warning("%s: %d page(s) need OCR but no OCR command is configured", doc.name, len(todo))
                todo = []
        if todo:
            for i, text in zip(todo, self._ocr_pages(doc, todo)):
                pages[i] = text
        text = PAGE_SEPARATOR.join(pages)
        if cache_file is not None:
            cache_file.write_text(text, encoding="utf-8")
        return text

    def _ocr_pages(self, doc: Path, indices: list[int]) -> list[str]:
        assert self.ocr_extractor is not None
        ocr = self.ocr_extractor
        if self.max_workers <= 1 or len(indices) == 1:
            return [ocr(doc, i) for i in indices]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(lambda i: ocr(doc, i), indices))

    def _cache_path(self, doc: Path, mode: str) -> Path | None:
        if not self.cache or doc.suffix.lower() == ".txt":
            return None
        return doc.with_name(doc.stem + (".txt" if mode == "direct" else ".ocr.txt"))
