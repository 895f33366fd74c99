"""Feature computation from raw linguistic resources.

Produces the nine-feature table consumed by the regressors: subword-vocabulary
overlap, typology-vector similarities, normalized geographic distance,
log pre-training size, weighted mean reciprocal rank of typological
feature-values, and the two tokenizer-quality metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .data import (
    FEATURE_NAMES,
    DataError,
    FeatureVector,
    LangId,
    LanguageMeta,
    read_csv_rows,
    validate_lang,
)

TYPOLOGY_KINDS = ("syntax", "phonology", "genetic", "geography")

#: typology kind -> feature name of the derived pairwise value
_KIND_FEATURE = {"syntax": "s_syn", "phonology": "s_pho", "genetic": "s_gen"}


@dataclass(frozen=True)
class VocabSet:
    """Subword vocabulary (set of distinct subword types) of one language."""

    lang: LangId
    tokens: frozenset[str]

    def __post_init__(self):
        validate_lang(self.lang)
        if not self.tokens:
            raise ValueError(f"empty vocabulary for {self.lang}")


@dataclass(frozen=True)
class TypologyVector:
    """One typology vector; None marks unobserved dimensions."""

    lang: LangId
    kind: str
    dims: tuple[float | None, ...]

    def __post_init__(self):
        validate_lang(self.lang)
        if self.kind not in TYPOLOGY_KINDS:
            raise ValueError(f"unknown typology kind {self.kind!r}")
        if not self.dims:
            raise ValueError("typology vector must have at least one dimension")
        if self.kind == "geography" and any(d is None for d in self.dims):
            raise ValueError("geography vectors must be fully observed")


@dataclass(frozen=True)
class WalsTable:
    """Language -> set of typological feature-value identifiers (e.g. '81A=SVO')."""

    rows: dict[LangId, frozenset[str]]

    def __post_init__(self):
        for lang, values in self.rows.items():
            validate_lang(lang)
            if any(not v for v in values):
                raise ValueError(f"empty feature-value identifier for {lang}")


@dataclass(frozen=True)
class TokenizationStats:
    """Counts from tokenizing a per-language corpus sample."""

    lang: LangId
    word_count: int
    subword_count: int
    continued_word_count: int

    def __post_init__(self):
        validate_lang(self.lang)
        if self.word_count < 1:
            raise ValueError("word_count must be positive")
        if self.subword_count < self.word_count:
            raise ValueError("subword_count must be >= word_count")
        if not 0 <= self.continued_word_count <= self.word_count:
            raise ValueError("continued_word_count must be in [0, word_count]")


# ---------------------------------------------------------------------------
# Individual feature formulas

def subword_overlap(vp: VocabSet, vt: VocabSet) -> float:
    """Fraction of unique subword types common to both vocabularies."""
    if not vp.tokens or not vt.tokens:
        raise ValueError("empty vocabulary")
    inter = len(vp.tokens & vt.tokens)
    union = len(vp.tokens | vt.tokens)
    return inter / union


def typo_similarity(a: TypologyVector, b: TypologyVector) -> float | None:
    """Cosine similarity over dimensions observed in both vectors.

    Returns None (missing) when no dimension is shared, or when a shared
    subvector has zero norm and the cosine is undefined.
    """
    if a.kind != b.kind:
        raise ValueError(f"typology kind mismatch: {a.kind} vs {b.kind}")
    if a.kind == "geography":
        raise ValueError("use geo_distance for geography vectors")
    if len(a.dims) != len(b.dims):
        raise ValueError("typology vectors have different dimensionality")
    va, vb = [], []
    for da, db in zip(a.dims, b.dims):
        if da is not None and db is not None:
            va.append(da)
            vb.append(db)
    if not va:
        return None
    va = np.array(va, dtype=float)
    vb = np.array(vb, dtype=float)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return None
    return float(va @ vb / (na * nb))


def geo_distance(a: TypologyVector, b: TypologyVector, scale: float = 1.0) -> float:
    """Euclidean distance between geography vectors, divided by ``scale``.

    Pass the in-set maximum pairwise distance (see
    :func:`max_geo_distance`) as the scale to normalize into [0, 1].
    """
    if a.kind != "geography" or b.kind != "geography":
        raise ValueError("geo_distance requires geography vectors")
    if len(a.dims) != len(b.dims):
        raise ValueError("geography vectors have different dimensionality")
    d = math.dist([float(x) for x in a.dims], [float(x) for x in b.dims])
    if scale <= 0.0:
        return 0.0 if d == 0.0 else d
    return d / scale


def max_geo_distance(vectors: Iterable[TypologyVector]) -> float:
    """Maximum pairwise Euclidean distance among the given geography vectors."""
    vs = list(vectors)
    best = 0.0
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            best = max(best, geo_distance(vs[i], vs[j], scale=1.0))
    return best


def pretrain_size_feature(meta: LanguageMeta) -> float:
    """log10 of the pre-training corpus word count."""
    if meta.pretrain_words <= 0:
        raise ValueError("pretrain_words must be positive")
    return math.log10(meta.pretrain_words)


def wmrr(
    t: LangId, wals: WalsTable, meta: Mapping[LangId, LanguageMeta]
) -> float:
    """Mean reciprocal rank of a language's typological feature-values.

    Every feature-value in the table is weighted by the total pre-training
    words of the languages possessing it and ranked in descending weight
    (competition ranking: ties share the smallest rank of the tied block).
    Languages without metadata contribute zero weight.
    """
    if t not in wals.rows or not wals.rows[t]:
        raise ValueError(f"language {t!r} absent from the WALS table")
    if not meta:
        raise ValueError("empty language metadata")
    mass: dict[str, float] = {}
    for lang, fvs in wals.rows.items():
        words = meta[lang].pretrain_words if lang in meta else 0.0
        for fv in fvs:
            mass[fv] = mass.get(fv, 0.0) + words
    all_masses = sorted(mass.values(), reverse=True)
    total = 0.0
    for fv in wals.rows[t]:
        rank = 1 + sum(1 for m in all_masses if m > mass[fv])
        total += 1.0 / rank
    return total / len(wals.rows[t])


def tokenizer_metrics(stats: TokenizationStats) -> tuple[float, float]:
    """(fertility, proportion of continued words) of a tokenizer on a language.

    Fertility is subwords per tokenized word; the proportion counts words the
    tokenizer continued across at least two tokens.
    """
    if stats.word_count <= 0:
        raise ValueError("word_count must be positive")
    fert = stats.subword_count / stats.word_count
    pcw = stats.continued_word_count / stats.word_count
    return fert, pcw


# ---------------------------------------------------------------------------
# Table assembly

@dataclass
class FeatureResources:
    """Raw resources from which the feature table is assembled.

    Every field is optional; features whose inputs are absent for a pair end
    up in that pair's missing mask.
    """

    vocabs: dict[LangId, VocabSet] = field(default_factory=dict)
    typology: dict[tuple[LangId, str], TypologyVector] = field(default_factory=dict)
    wals: WalsTable | None = None
    stats: dict[LangId, TokenizationStats] = field(default_factory=dict)
    meta: dict[LangId, LanguageMeta] = field(default_factory=dict)

    def languages(self) -> list[LangId]:
        langs: set[LangId] = set(self.vocabs)
        langs.update(lang for lang, _ in self.typology)
        if self.wals is not None:
            langs.update(self.wals.rows)
        langs.update(self.stats)
        langs.update(self.meta)
        return sorted(langs)


def build_feature_table(
    resources: FeatureResources,
    pairs: Iterable[tuple[LangId, LangId]] | None = None,
    pivots: Iterable[LangId] | None = None,
) -> dict[tuple[LangId, LangId], FeatureVector]:
    """One FeatureVector per directed (pivot, target) pair.

    With no explicit ``pairs``, all ordered pairs over the resource languages
    are produced (optionally restricted to the given pivots). A pair with no
    computable feature at all is an error.
    """
    langs = resources.languages()
    if pairs is None:
        pivot_set = sorted(set(pivots)) if pivots is not None else langs
        pairs = [(p, t) for p in pivot_set for t in langs if p != t]
    else:
        pairs = list(pairs)

    geo_vectors = [
        resources.typology[(lang, "geography")]
        for lang in langs
        if (lang, "geography") in resources.typology
    ]
    geo_scale = max_geo_distance(geo_vectors) if len(geo_vectors) >= 2 else 0.0

    table: dict[tuple[LangId, LangId], FeatureVector] = {}
    for pivot, target in pairs:
        values: dict[str, float] = {}

        if pivot in resources.vocabs and target in resources.vocabs:
            values["o_sw"] = subword_overlap(resources.vocabs[pivot], resources.vocabs[target])

        for kind, name in _KIND_FEATURE.items():
            va = resources.typology.get((pivot, kind))
            vb = resources.typology.get((target, kind))
            if va is not None and vb is not None:
                sim = typo_similarity(va, vb)
                if sim is not None:
                    values[name] = min(max(sim, 0.0), 1.0)

        ga = resources.typology.get((pivot, "geography"))
        gb = resources.typology.get((target, "geography"))
        if ga is not None and gb is not None:
            values["d_geo"] = geo_distance(ga, gb, scale=geo_scale)

        if target in resources.meta:
            values["size"] = pretrain_size_feature(resources.meta[target])

        if resources.wals is not None and target in resources.wals.rows and resources.meta:
            values["wmrr"] = wmrr(target, resources.wals, resources.meta)

        if target in resources.stats:
            fert, pcw = tokenizer_metrics(resources.stats[target])
            values["fert"] = fert
            values["pcw"] = pcw

        if not values:
            raise ValueError(f"no resources at all for pair ({pivot}, {target})")
        missing = frozenset(set(FEATURE_NAMES) - set(values))
        table[(pivot, target)] = FeatureVector(pivot, target, values, missing)
    return table


# ---------------------------------------------------------------------------
# Resource loaders

def load_vocab_file(path: str | Path, lang: LangId) -> VocabSet:
    """One subword token per line, UTF-8."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise DataError(str(err), path=path) from err
    tokens = frozenset(line.strip() for line in lines if line.strip())
    if not tokens:
        raise DataError("empty vocabulary file", path=path)
    return VocabSet(lang, tokens)


def load_typology_csv(path: str | Path) -> dict[tuple[LangId, str], TypologyVector]:
    """CSV ``lang,kind,d0,d1,...`` with empty cells for missing dimensions.

    Kinds may have different dimensionalities inside one fixed-width file:
    each kind's width is the longest trailing extent among its rows, so cells
    beyond a kind's width are just padding. Interior empty cells stay missing.
    """
    path = Path(path)
    rows = read_csv_rows(path)
    if not rows:
        raise DataError("empty file", path=path, line=1)
    header = [h.strip() for h in rows[0][1]]
    if header[:2] != ["lang", "kind"] or len(header) < 3:
        raise DataError(f"bad header {header!r}, expected lang,kind,d0,...", path=path, line=1)
    parsed: list[tuple[int, LangId, str, list[float | None]]] = []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} cells, got {len(row)}", path=path, line=lineno)
        lang, kind = row[0].strip(), row[1].strip()
        dims: list[float | None] = []
        for cell in row[2:]:
            cell = cell.strip()
            if cell == "":
                dims.append(None)
            else:
                try:
                    dims.append(float(cell))
                except ValueError:
                    raise DataError(f"could not parse dimension {cell!r}", path=path, line=lineno) from None
        parsed.append((lineno, lang, kind, dims))

    widths: dict[str, int] = {}
    for lineno, lang, kind, dims in parsed:
        extent = max((i + 1 for i, d in enumerate(dims) if d is not None), default=0)
        if extent == 0:
            raise DataError(f"typology row for ({lang}, {kind}) is entirely empty", path=path, line=lineno)
        widths[kind] = max(widths.get(kind, 0), extent)

    out: dict[tuple[LangId, str], TypologyVector] = {}
    for lineno, lang, kind, dims in parsed:
        width = widths[kind]
        padded = tuple(dims[:width]) + (None,) * max(0, width - len(dims))
        try:
            vec = TypologyVector(lang, kind, padded)
        except ValueError as err:
            raise DataError(str(err), path=path, line=lineno) from None
        if (lang, kind) in out:
            raise DataError(f"duplicate typology row for ({lang}, {kind})", path=path, line=lineno)
        out[(lang, kind)] = vec
    return out


def load_wals_csv(path: str | Path) -> WalsTable:
    """Long-format CSV ``lang,feature_value``."""
    path = Path(path)
    rows = read_csv_rows(path)
    if not rows:
        raise DataError("empty file", path=path, line=1)
    if [h.strip() for h in rows[0][1]] != ["lang", "feature_value"]:
        raise DataError(f"bad header {rows[0][1]!r}, expected lang,feature_value", path=path, line=1)
    acc: dict[LangId, set[str]] = {}
    for lineno, row in rows[1:]:
        if len(row) != 2:
            raise DataError(f"expected 2 cells, got {len(row)}", path=path, line=lineno)
        lang, fv = row[0].strip(), row[1].strip()
        if not fv:
            raise DataError("empty feature-value identifier", path=path, line=lineno)
        acc.setdefault(lang, set()).add(fv)
    try:
        return WalsTable({lang: frozenset(v) for lang, v in acc.items()})
    except ValueError as err:
        raise DataError(str(err), path=path) from None


def load_stats_csv(path: str | Path) -> dict[LangId, TokenizationStats]:
    """CSV ``lang,word_count,subword_count,continued_word_count``."""
    path = Path(path)
    rows = read_csv_rows(path)
    if not rows:
        raise DataError("empty file", path=path, line=1)
    expected = ["lang", "word_count", "subword_count", "continued_word_count"]
    if [h.strip() for h in rows[0][1]] != expected:
        raise DataError(f"bad header {rows[0][1]!r}, expected {expected!r}", path=path, line=1)
    out: dict[LangId, TokenizationStats] = {}
    for lineno, row in rows[1:]:
        if len(row) != 4:
            raise DataError(f"expected 4 cells, got {len(row)}", path=path, line=lineno)
        lang = row[0].strip()
        try:
            counts = [int(c) for c in row[1:]]
        except ValueError:
            raise DataError(f"could not parse counts {row[1:]!r}", path=path, line=lineno) from None
        try:
            stats = TokenizationStats(lang, *counts)
        except ValueError as err:
            raise DataError(str(err), path=path, line=lineno) from None
        if lang in out:
            raise DataError(f"duplicate stats row for {lang}", path=path, line=lineno)
        out[lang] = stats
    return out
