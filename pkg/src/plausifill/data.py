"""Task data handling: TSV parsing, input-sequence construction, deterministic
tokenization with filler-span tracking, 5x expansion, and a seeded synthetic
task generator.

File formats
------------
Instances: UTF-8 TSV with header columns
    Id, Pattern, Title, Section, Previous, Sentence, Follow-up, Filler1..Filler5
where Sentence contains exactly one placeholder marker (default ``______``).
Labels:  headerless TSV rows ``example_id<TAB>label``.
Scores:  headerless TSV rows ``example_id<TAB>score`` (decimal point, 1..5).
Example ids are ``<instance id>_<filler index 1..5>``.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError, ParseError
from .heads import SpanIndex

PLACEHOLDER = "______"
SEP_TEXT = " [SEP] "

PAD_ID, UNK_ID, SEP_ID, MASK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<sep>", "<mask>")
FIRST_WORD_ID = len(RESERVED_TOKENS)

_TOKEN_RE = re.compile(r"\[SEP\]|\w+|[^\w\s]", re.IGNORECASE | re.UNICODE)


class Pattern(Enum):
    ADDED_COMPOUND = "ADDED COMPOUND"
    FUSED_HEAD = "FUSED HEAD"
    IMPLICIT_REFERENCE = "IMPLICIT REFERENCE"
    METONYMIC_REFERENCE = "METONYMIC REFERENCE"

    @classmethod
    def from_string(cls, text: str) -> "Pattern":
        normalized = " ".join(text.strip().upper().replace("_", " ").split())
        for member in cls:
            if member.value == normalized:
                return member
        raise ParseError(f"unknown pattern string: {text!r}")


class Label(Enum):
    IMPLAUSIBLE = 0
    NEUTRAL = 1
    PLAUSIBLE = 2

    @classmethod
    def from_string(cls, text: str) -> "Label":
        key = text.strip().upper()
        if key not in cls.__members__:
            raise ParseError(f"unknown label string: {text!r}")
        return cls[key]


LABEL_ORDER = (Label.IMPLAUSIBLE, Label.NEUTRAL, Label.PLAUSIBLE)


@dataclass(frozen=True)
class Instance:
    id: str
    pattern: Pattern
    title: str
    section_header: str
    previous: str
    target_with_placeholder: str
    followup: str
    fillers: tuple[str, ...]

    def __post_init__(self):
        if len(self.fillers) != 5:
            raise ParseError(f"instance {self.id}: expected 5 fillers, got {len(self.fillers)}")


@dataclass
class FilledExample:
    example_id: str
    instance_id: str
    filler_index: int
    token_ids: np.ndarray
    span: SpanIndex
    pattern: Pattern
    filler_text: str
    has_unk_span: bool
    label: Label | None = None
    score: float | None = None


class Vocabulary:
    """Frequency-ranked token table with fixed reserved ids (pad/unk/sep/mask)."""

    def __init__(self, words: list[str]):
        self.id_to_token = list(RESERVED_TOKENS) + list(words)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    @classmethod
    def from_texts(cls, texts, cap: int = 512) -> "Vocabulary":
        if cap <= FIRST_WORD_ID:
            raise ConfigError(f"vocabulary cap must exceed {FIRST_WORD_ID}")
        counts: Counter = Counter()
        for text in texts:
            for tok, _, _, is_sep in _scan(text):
                if not is_sep:
                    counts[tok] += 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([tok for tok, _ in ranked[: cap - FIRST_WORD_ID]])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, tok in enumerate(self.id_to_token):
                fh.write(f"{idx}\t{tok}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ParseError(f"{path}:{lineno + 1}: expected 'id<TAB>token'")
                if int(parts[0]) != lineno:
                    raise ParseError(f"{path}:{lineno + 1}: ids must be consecutive from 0")
                tokens.append(parts[1])
        if tokens[:FIRST_WORD_ID] != list(RESERVED_TOKENS):
            raise ParseError(f"{path}: reserved token block missing or reordered")
        return cls(tokens[FIRST_WORD_ID:])


def _scan(text: str):
    """Yield (lowercased token, start, end, is_sep_marker) over the text."""
    for m in _TOKEN_RE.finditer(text):
        raw = m.group(0)
        if raw.upper() == "[SEP]":
            yield "<sep>", m.start(), m.end(), True
        else:
            yield raw.lower(), m.start(), m.end(), False


# -- loaders ---------------------------------------------------------------

_INSTANCE_COLUMNS = (
    "Id", "Pattern", "Title", "Section", "Previous", "Sentence", "Follow-up",
    "Filler1", "Filler2", "Filler3", "Filler4", "Filler5",
)


def load_instances(path, placeholder: str = PLACEHOLDER) -> list[Instance]:
    """Parse the instances TSV; every row must carry exactly one placeholder."""
    instances: list[Instance] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row")
        col = {name: i for i, name in enumerate(header)}
        for name in _INSTANCE_COLUMNS:
            if name not in col:
                raise ParseError(f"{path}: missing column {name!r}")
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            row_id = row[col["Id"]] if col["Id"] < len(row) else f"<row {rowno}>"
            if len(row) < len(header):
                raise ParseError(
                    f"{path}: row for id {row_id!r} has {len(row)} fields, expected {len(header)}"
                )
            fillers = tuple(row[col[f"Filler{k}"]] for k in range(1, 6))
            if any(not f.strip() for f in fillers):
                raise ParseError(f"{path}: id {row_id!r} has an empty filler")
            sentence = row[col["Sentence"]]
            if sentence.count(placeholder) != 1:
                raise ParseError(
                    f"{path}: id {row_id!r} target sentence must contain exactly one "
                    f"{placeholder!r} marker, found {sentence.count(placeholder)}"
                )
            instances.append(
                Instance(
                    id=row_id,
                    pattern=Pattern.from_string(row[col["Pattern"]]),
                    title=row[col["Title"]],
                    section_header=row[col["Section"]],
                    previous=row[col["Previous"]],
                    target_with_placeholder=sentence,
                    followup=row[col["Follow-up"]],
                    fillers=fillers,
                )
            )
    return instances


def _load_two_column(path, parse_value):
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'example_id<TAB>value'")
            example_id, value = parts
            if example_id in out:
                raise ParseError(f"{path}:{lineno}: duplicate id {example_id!r}")
            out[example_id] = parse_value(value, f"{path}:{lineno}")
    return out


def load_labels(path) -> dict[str, Label]:
    return _load_two_column(path, lambda v, loc: Label.from_string(v))


def load_scores(path) -> dict[str, float]:
    def parse(v, loc):
        try:
            score = float(v)
        except ValueError:
            raise ParseError(f"{loc}: not a number: {v!r}")
        if not 1.0 <= score <= 5.0:
            raise ParseError(f"{loc}: score {score} outside [1, 5]")
        return score

    return _load_two_column(path, parse)


# -- sequence construction --------------------------------------------------


def build_input_sequence(instance: Instance, filler_index: int,
                         placeholder: str = PLACEHOLDER) -> tuple[str, tuple[int, int]]:
    """Join pattern/title/section/previous/target/follow-up with separators.

    The placeholder in the target sentence is replaced with the chosen filler;
    returns the joined text and the character range of the inserted filler.
    """
    if not 1 <= filler_index <= 5:
        raise InputError(f"filler index must be in 1..5, got {filler_index}")
    filler = instance.fillers[filler_index - 1]
    target = instance.target_with_placeholder
    ph_at = target.find(placeholder)
    if ph_at < 0:
        raise InputError(f"instance {instance.id}: target sentence lost its placeholder")
    filled_target = target[:ph_at] + filler + target[ph_at + len(placeholder):]

    fields = [
        instance.pattern.value,
        instance.title,
        instance.section_header,
        instance.previous,
        filled_target,
        instance.followup,
    ]
    text = SEP_TEXT.join(fields)
    prefix = sum(len(f) + len(SEP_TEXT) for f in fields[:4])
    start = prefix + ph_at
    return text, (start, start + len(filler))


def tokenize(text: str, vocab: Vocabulary, filler_char_range: tuple[int, int],
             max_len: int) -> tuple[np.ndarray, SpanIndex]:
    """Lowercased word/punctuation tokenization with span tracking.

    The returned span covers exactly the tokens overlapping the filler's
    character range. When the sequence exceeds ``max_len``, tokens left of
    the span are dropped first, then tokens right of it; span tokens are
    never dropped.
    """
    cs, ce = filler_char_range
    tokens: list[int] = []
    span_lo, span_hi = None, None
    for tok, start, end, is_sep in _scan(text):
        overlaps = start < ce and end > cs
        if overlaps:
            if span_lo is None:
                span_lo = len(tokens)
            span_hi = len(tokens) + 1
        tokens.append(SEP_ID if is_sep else vocab.encode_token(tok))
    if span_lo is None:
        raise InputError(f"no tokens overlap the filler range {filler_char_range}")

    drop_left = 0
    while len(tokens) - drop_left > max_len and span_lo - drop_left > 0:
        drop_left += 1
    tokens = tokens[drop_left:]
    span_lo -= drop_left
    span_hi -= drop_left
    if len(tokens) > max_len:
        if span_hi <= max_len:
            tokens = tokens[:max_len]
        else:
            raise InputError(
                f"filler span of {span_hi - span_lo} tokens cannot fit in max_len {max_len}"
            )
    return np.asarray(tokens, dtype=np.int64), SpanIndex(span_lo, span_hi)


def expand(instances, vocab: Vocabulary, max_seq_len: int,
           labels: dict[str, Label] | None = None,
           scores: dict[str, float] | None = None,
           placeholder: str = PLACEHOLDER) -> list[FilledExample]:
    """Turn each instance into five tokenized rows, one per candidate filler."""
    examples: list[FilledExample] = []
    for inst in instances:
        for k in range(1, 6):
            text, crange = build_input_sequence(inst, k, placeholder=placeholder)
            ids, span = tokenize(text, vocab, crange, max_seq_len)
            example_id = f"{inst.id}_{k}"
            label = score = None
            if labels is not None:
                if example_id not in labels:
                    raise InputError(f"label map is missing example id {example_id!r}")
                label = labels[example_id]
            if scores is not None:
                if example_id not in scores:
                    raise InputError(f"score map is missing example id {example_id!r}")
                score = scores[example_id]
            examples.append(
                FilledExample(
                    example_id=example_id,
                    instance_id=inst.id,
                    filler_index=k,
                    token_ids=ids,
                    span=span,
                    pattern=inst.pattern,
                    filler_text=inst.fillers[k - 1],
                    has_unk_span=bool(np.any(ids[span.i:span.j] == UNK_ID)),
                    label=label,
                    score=score,
                )
            )
    return examples


def split_by_pattern(examples) -> dict[Pattern, list]:
    """Partition by pattern; every pattern key is present, possibly empty."""
    groups: dict[Pattern, list] = {p: [] for p in Pattern}
    for ex in examples:
        groups[ex.pattern].append(ex)
    return groups


def build_vocabulary(instances, cap: int = 512,
                     placeholder: str = PLACEHOLDER) -> Vocabulary:
    """Vocabulary from training text only: all five filled sequences per instance."""
    texts = [
        build_input_sequence(inst, k, placeholder=placeholder)[0]
        for inst in instances
        for k in range(1, 6)
    ]
    return Vocabulary.from_texts(texts, cap=cap)


# -- synthetic task ----------------------------------------------------------


@dataclass(frozen=True)
class GrammarConfig:
    n_classes: int = 6
    nouns_per_class: int = 4
    verbs_per_class: int = 4

    def __post_init__(self):
        if self.n_classes < 5:
            raise ConfigError("need at least 5 classes so 'far' classes exist")
        if self.nouns_per_class < 2 or self.verbs_per_class < 1:
            raise ConfigError("each class needs >= 2 nouns and >= 1 verb")
        if self.verbs_per_class > self.nouns_per_class:
            raise ConfigError(
                "verbs_per_class must not exceed nouns_per_class "
                "(keeps every verb witnessed by some subject)"
            )


_TEMPLATE_WORDS = ("the", "some", "now", "here", "quickly", ".",
                   "how", "to", "use", "part", "this", "it", "1", "2", "3", "4")


class SyntheticGrammar:
    """Word inventory with class structure and deterministic bindings.

    Nouns/verbs are partitioned into classes; every noun has an exact verb
    partner and an exact object partner within its own class, plus an exact
    partner in the circularly next class used by marker-prefixed clauses.
    Every corpus clause is therefore fully determined by its subject and its
    marker, while exposing both same-class and adjacent-class geometry.
    Filler plausibility follows the same structure: the verb's own class is
    plausible, a circularly adjacent class borderline, anything further
    implausible.
    """

    def __init__(self, config: GrammarConfig = GrammarConfig()):
        self.config = config
        k, cn, cv = config.n_classes, config.nouns_per_class, config.verbs_per_class
        self.nouns = [[f"noun{c}x{i}" for i in range(cn)] for c in range(k)]
        self.verbs = [[f"verb{c}x{i}" for i in range(cv)] for c in range(k)]
        self.all_nouns = [w for group in self.nouns for w in group]
        self._noun_class = {w: c for c, group in enumerate(self.nouns) for w in group}
        self._noun_index = {w: i for group in self.nouns for i, w in enumerate(group)}

    @property
    def words(self) -> list[str]:
        out = list(_TEMPLATE_WORDS)
        for group in self.nouns:
            out.extend(group)
        for group in self.verbs:
            out.extend(group)
        return out

    def noun_class(self, word: str) -> int:
        return self._noun_class[word]

    def verb_for(self, noun: str) -> str:
        c = self._noun_class[noun]
        return self.verbs[c][self._noun_index[noun] % self.config.verbs_per_class]

    def object_for(self, noun: str) -> str:
        c = self._noun_class[noun]
        return self.nouns[c][(self._noun_index[noun] + 1) % self.config.nouns_per_class]

    def next_class_partner(self, noun: str) -> str:
        c = self._noun_class[noun]
        return self.nouns[(c + 1) % self.config.n_classes][self._noun_index[noun]]

    def plausible_object_class(self, verb_class: int) -> int:
        return verb_class

    def clause(self, subject: str, kind: str = "same") -> list[str]:
        """A fully determined clause; 'next' clauses carry the 'now' marker."""
        if kind == "same":
            return ["the", subject, self.verb_for(subject), "the",
                    self.object_for(subject), "."]
        return ["now", "the", subject, self.verb_for(subject), "the",
                self.next_class_partner(subject), "."]

    def corpus_sentence(self, rng: np.random.Generator, n_clauses: int) -> list[str]:
        words: list[str] = []
        for _ in range(n_clauses):
            subject = self.all_nouns[rng.integers(len(self.all_nouns))]
            kind = "same" if rng.random() < 0.5 else "next"
            words.extend(self.clause(subject, kind))
        return words

    def class_distance(self, a: int, b: int) -> int:
        k = self.config.n_classes
        return min(abs(a - b), k - abs(a - b))


@dataclass(frozen=True)
class SyntheticTaskConfig:
    n_train: int = 800
    n_dev: int = 320
    n_test: int = 320
    seed: int = 0
    label_skew: float = 0.0
    grammar: GrammarConfig = field(default_factory=GrammarConfig)
    placeholder: str = PLACEHOLDER

    def __post_init__(self):
        if not 0.0 <= self.label_skew <= 1.0:
            raise ConfigError("label_skew must be in [0, 1]")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one instance")


@dataclass
class SplitData:
    instances: list[Instance]
    labels: dict[str, Label]
    scores: dict[str, float]


@dataclass
class SyntheticTask:
    train: SplitData
    dev: SplitData
    test: SplitData
    grammar: SyntheticGrammar


_LABEL_BASE_SCORE = {Label.IMPLAUSIBLE: 1.0, Label.NEUTRAL: 3.0, Label.PLAUSIBLE: 5.0}

# qualitative skew targets: NEUTRAL rarest for FUSED_HEAD, PLAUSIBLE dominant
# for ADDED_COMPOUND and IMPLICIT_REFERENCE
_SKEW_DISTRIBUTIONS = {
    Pattern.ADDED_COMPOUND: (0.15, 0.25, 0.60),
    Pattern.FUSED_HEAD: (0.45, 0.10, 0.45),
    Pattern.IMPLICIT_REFERENCE: (0.15, 0.25, 0.60),
    Pattern.METONYMIC_REFERENCE: (0.30, 0.30, 0.40),
}

_PATTERN_ORDER = (
    Pattern.ADDED_COMPOUND,
    Pattern.FUSED_HEAD,
    Pattern.IMPLICIT_REFERENCE,
    Pattern.METONYMIC_REFERENCE,
)


def _target_template(pattern: Pattern, subject: str, verb: str, placeholder: str) -> str:
    if pattern is Pattern.ADDED_COMPOUND:
        words = ["the", subject, verb, "the", placeholder, "."]
    elif pattern is Pattern.FUSED_HEAD:
        words = ["some", subject, verb, "some", placeholder, "."]
    elif pattern is Pattern.IMPLICIT_REFERENCE:
        words = ["now", "the", subject, verb, "the", placeholder, "here", "."]
    else:
        words = ["the", subject, "quickly", verb, "the", placeholder, "."]
    return " ".join(words)


class _LabelPlanner:
    """Per-pattern label assignment: an exact cycle at skew 0, sampled otherwise."""

    _CYCLE = (Label.PLAUSIBLE, Label.NEUTRAL, Label.IMPLAUSIBLE)

    def __init__(self, skew: float, rng: np.random.Generator):
        self.skew = skew
        self.rng = rng
        self.counters = {p: 0 for p in Pattern}

    def next(self, pattern: Pattern) -> Label:
        if self.skew > 0.0 and self.rng.random() < self.skew:
            probs = _SKEW_DISTRIBUTIONS[pattern]
            pick = self.rng.choice(3, p=probs)
            return LABEL_ORDER[pick]
        label = self._CYCLE[self.counters[pattern] % 3]
        self.counters[pattern] += 1
        return label


def _filler_for_label(grammar: SyntheticGrammar, verb_class: int, label: Label,
                      rng: np.random.Generator, used: set[str]) -> str:
    k = grammar.config.n_classes
    anchor = grammar.plausible_object_class(verb_class)
    if label is Label.PLAUSIBLE:
        choices = [0]
    elif label is Label.NEUTRAL:
        choices = [1, k - 1]
    else:
        choices = list(range(2, k - 1))
    for _ in range(16):
        offset = choices[rng.integers(len(choices))]
        group = grammar.nouns[(anchor + offset) % k]
        word = group[rng.integers(len(group))]
        if word not in used:
            used.add(word)
            return word
    used.add(word)
    return word


def _generate_split(grammar: SyntheticGrammar, config: SyntheticTaskConfig,
                    split_name: str, n_instances: int, rng) -> SplitData:
    planner = _LabelPlanner(config.label_skew, rng)
    instances: list[Instance] = []
    labels: dict[str, Label] = {}
    scores: dict[str, float] = {}
    nouns = grammar.all_nouns
    prefix = {"train": "tr", "dev": "dv", "test": "te"}[split_name]
    # context fields stay free of class-bearing words so the only class
    # tokens in an input are the target's subject, verb, and filler
    prev_pool = ("to part 1 .", "to part 2 .", "now to part 3 .", "use part 4 .")
    follow_pool = ("use it here .", "now use it .", "to use it .", "it here now .")
    for idx in range(n_instances):
        # cycling subjects keeps every grammar word in the training text
        if split_name == "train":
            subject = nouns[idx % len(nouns)]
        else:
            subject = nouns[rng.integers(len(nouns))]
        verb = grammar.verb_for(subject)
        verb_class = grammar.noun_class(subject)
        pattern = _PATTERN_ORDER[idx % 4]
        section = "" if idx % 5 == 4 else f"part {1 + idx % 5}"

        used: set[str] = set()
        fillers, inst_labels = [], []
        for _ in range(5):
            label = planner.next(pattern)
            fillers.append(_filler_for_label(grammar, verb_class, label, rng, used))
            inst_labels.append(label)

        inst_id = f"{prefix}{idx:05d}"
        instances.append(
            Instance(
                id=inst_id,
                pattern=pattern,
                title="how to use this",
                section_header=section,
                previous=prev_pool[idx % 4],
                target_with_placeholder=_target_template(
                    pattern, subject, verb, config.placeholder
                ),
                followup=follow_pool[(idx + 1) % 4],
                fillers=tuple(fillers),
            )
        )
        for k, label in enumerate(inst_labels, start=1):
            example_id = f"{inst_id}_{k}"
            jitter = rng.uniform(-0.3, 0.3)
            score = float(np.clip(_LABEL_BASE_SCORE[label] + jitter, 1.0, 5.0))
            labels[example_id] = label
            scores[example_id] = score
    return SplitData(instances=instances, labels=labels, scores=scores)


def generate_synthetic_task(config: SyntheticTaskConfig,
                            grammar: SyntheticGrammar | None = None) -> SyntheticTask:
    """Deterministic templated task where a hidden class-agreement rule sets
    label and score (base 5/3/1 per class distance 0/1/2+, plus +-0.3 jitter)."""
    grammar = grammar or SyntheticGrammar(config.grammar)
    splits = {}
    for split_idx, (name, count) in enumerate(
        (("train", config.n_train), ("dev", config.n_dev), ("test", config.n_test))
    ):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, split_idx]))
        splits[name] = _generate_split(grammar, config, name, count, rng)
    return SyntheticTask(train=splits["train"], dev=splits["dev"],
                         test=splits["test"], grammar=grammar)


# -- writers -----------------------------------------------------------------


def write_instances_tsv(path, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(_INSTANCE_COLUMNS) + "\n")
        for inst in instances:
            row = [inst.id, inst.pattern.value, inst.title, inst.section_header,
                   inst.previous, inst.target_with_placeholder, inst.followup,
                   *inst.fillers]
            fh.write("\t".join(row) + "\n")


def write_labels_tsv(path, labels: dict[str, Label]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example_id in sorted(labels):
            fh.write(f"{example_id}\t{labels[example_id].name}\n")


def write_scores_tsv(path, scores: dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example_id in sorted(scores):
            fh.write(f"{example_id}\t{float(scores[example_id])!r}\n")
