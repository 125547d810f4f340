"""Spectrum corpus handling.

Record parsing, molecular annotation checks, scaffold-keyed dataset
splitting, and synthetic corpus generation.

The record file format is line oriented UTF-8 text. Records are separated
by one or more blank lines:

    ID: <record id>
    SMILES: <smiles string>
    INCHIKEY: <14 letters>-<10 letters>-<1 letter>
    INSTRUMENT: <free text>          (optional)
    PEAKS: <n>
    <mz> <intensity>                 (n lines, decimal notation)

Header lines may appear in any order, but ``PEAKS`` must come last.
Malformed records are never fatal: they are skipped and reported with the
offending line number.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .seeding import substream

INCHIKEY_PATTERN = re.compile(r"^[A-Z]{14}-[A-Z]{10}-[A-Z]$")

_HEADER_KEYS = ("ID", "SMILES", "INCHIKEY", "INSTRUMENT", "PEAKS")


class MalformedInchiKeyError(ValueError):
    """An InChIKey does not match the 14-10-1 uppercase layout."""


class SplitError(ValueError):
    """A scaffold-disjoint split cannot be built from the given records."""


@dataclass(frozen=True)
class Peak:
    """One detected ion: mass-to-charge ratio (Da per unit charge) and
    detector intensity (arbitrary units)."""

    mz: float
    intensity: float

    def __post_init__(self) -> None:
        if not (self.mz > 0 and math.isfinite(self.mz)):
            raise ValueError(f"peak mz must be positive and finite, got {self.mz}")
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise ValueError(f"peak intensity must be non-negative, got {self.intensity}")


@dataclass(frozen=True)
class SpectrumRecord:
    """One measured spectrum with its molecular annotation."""

    record_id: str
    peaks: tuple[Peak, ...]
    smiles: str
    inchikey: str
    instrument_tag: str | None = None

    def __post_init__(self) -> None:
        if not self.record_id:
            raise ValueError("record_id must be non-empty")
        if not self.peaks:
            raise ValueError("a spectrum record needs at least one peak")
        if not INCHIKEY_PATTERN.match(self.inchikey):
            raise MalformedInchiKeyError(f"bad InChIKey layout: {self.inchikey!r}")

    @property
    def scaffold(self) -> str:
        return scaffold_key(self.inchikey)


@dataclass(frozen=True)
class ParseIssue:
    """One rejected record: the line where the problem was detected and why."""

    line_number: int
    reason: str


@dataclass
class ParseResult:
    records: list[SpectrumRecord] = field(default_factory=list)
    report: list[ParseIssue] = field(default_factory=list)

    def report_text(self) -> str:
        return "".join(f"{i.line_number}\t{i.reason}\n" for i in self.report)


def scaffold_key(inchikey: str) -> str:
    """First InChIKey block (the 14-letter skeleton hash).

    Raises MalformedInchiKeyError if the key does not match the
    14-10-1 uppercase layout.
    """
    if not INCHIKEY_PATTERN.match(inchikey):
        raise MalformedInchiKeyError(f"bad InChIKey layout: {inchikey!r}")
    return inchikey.split("-", 1)[0]


# ---------------------------------------------------------------------------
# SMILES validation
# ---------------------------------------------------------------------------

_TWO_CHAR_ATOMS = ("Cl", "Br")
_SINGLE_CHARS = set("BCNOPSFIcnosp") | set("=#-/\\") | set("()") | set("0123456789") | set("%[]@+H")
_BOND_CHARS = set("=#-/\\")


def validate_smiles(smiles: str) -> bool:
    """Structural sanity check for a SMILES string.

    Accepts exactly the strings that are non-empty, use the allowed
    alphabet, balance parentheses and square brackets, use every
    ring-closure digit an even number of times, and never place two bond
    symbols back to back. This is a grammar-level gate, not a chemistry
    engine: it does not canonicalize and cannot judge valence.
    """
    if not smiles:
        return False
    paren_depth = 0
    bracket_depth = 0
    ring_digits: Counter[str] = Counter()
    prev_was_bond = False
    i = 0
    n = len(smiles)
    while i < n:
        if smiles.startswith(_TWO_CHAR_ATOMS, i):
            prev_was_bond = False
            i += 2
            continue
        ch = smiles[i]
        if ch not in _SINGLE_CHARS:
            return False
        if ch == "[":
            bracket_depth += 1
            prev_was_bond = False
        elif ch == "]":
            bracket_depth -= 1
            if bracket_depth < 0:
                return False
            prev_was_bond = False
        elif bracket_depth == 0:
            if ch == "(":
                paren_depth += 1
            elif ch == ")":
                paren_depth -= 1
                if paren_depth < 0:
                    return False
            elif ch.isdigit():
                ring_digits[ch] += 1
            if ch in _BOND_CHARS:
                if prev_was_bond:
                    return False
                prev_was_bond = True
            else:
                prev_was_bond = False
        i += 1
    if paren_depth != 0 or bracket_depth != 0:
        return False
    return all(count % 2 == 0 for count in ring_digits.values())


# ---------------------------------------------------------------------------
# Record file parsing and writing
# ---------------------------------------------------------------------------


def parse_records(text: str | bytes) -> ParseResult:
    """Parse record-file content.

    Total over arbitrary text: well-formed records are returned in file
    order, malformed ones are skipped and reported with the line number
    where the problem was detected. Only a byte stream that is not valid
    UTF-8 raises (UnicodeDecodeError).
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    result = ParseResult()
    seen_ids: set[str] = set()

    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            block.append((lineno, line))
        elif block:
            _parse_block(block, result, seen_ids)
            block = []
    if block:
        _parse_block(block, result, seen_ids)
    return result


def _parse_block(block: list[tuple[int, str]], result: ParseResult, seen_ids: set[str]) -> None:
    start_line = block[0][0]

    def reject(lineno: int, reason: str) -> None:
        result.report.append(ParseIssue(lineno, reason))

    headers: dict[str, str] = {}
    header_lines: dict[str, int] = {}
    peak_lines: list[tuple[int, str]] = []
    n_peaks: int | None = None
    for lineno, line in block:
        if n_peaks is not None:
            peak_lines.append((lineno, line))
            continue
        key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or key not in _HEADER_KEYS:
            reject(lineno, f"unrecognized header line {line.split(':')[0]!r}")
            return
        if key in headers:
            reject(lineno, f"duplicate {key} header")
            return
        value = value.strip()
        headers[key] = value
        header_lines[key] = lineno
        if key == "PEAKS":
            try:
                n_peaks = int(value)
            except ValueError:
                reject(lineno, f"PEAKS count is not an integer: {value!r}")
                return
    for required in ("ID", "SMILES", "INCHIKEY"):
        if required not in headers:
            reject(start_line, f"missing {required} header")
            return
    if n_peaks is None:
        reject(start_line, "missing PEAKS header")
        return
    if n_peaks < 1:
        reject(header_lines["PEAKS"], "record has zero peaks")
        return
    if len(peak_lines) != n_peaks:
        reject(header_lines["PEAKS"], f"expected {n_peaks} peak lines, found {len(peak_lines)}")
        return
    if not headers["ID"]:
        reject(header_lines["ID"], "empty record id")
        return
    if headers["ID"] in seen_ids:
        reject(header_lines["ID"], f"duplicate record id {headers['ID']!r}")
        return
    if not INCHIKEY_PATTERN.match(headers["INCHIKEY"]):
        reject(header_lines["INCHIKEY"], f"bad InChIKey layout: {headers['INCHIKEY']!r}")
        return
    if not validate_smiles(headers["SMILES"]):
        reject(header_lines["SMILES"], f"invalid SMILES: {headers['SMILES']!r}")
        return

    peaks: list[Peak] = []
    for lineno, line in peak_lines:
        parts = line.split()
        if len(parts) != 2:
            reject(lineno, f"peak line needs two fields, found {len(parts)}")
            return
        try:
            mz, intensity = float(parts[0]), float(parts[1])
        except ValueError:
            reject(lineno, f"peak line is not numeric: {line!r}")
            return
        if not (math.isfinite(mz) and mz > 0):
            reject(lineno, f"peak mz must be positive and finite, got {parts[0]}")
            return
        if not (math.isfinite(intensity) and intensity >= 0):
            reject(lineno, f"peak intensity must be non-negative, got {parts[1]}")
            return
        peaks.append(Peak(mz=mz, intensity=intensity))

    seen_ids.add(headers["ID"])
    result.records.append(
        SpectrumRecord(
            record_id=headers["ID"],
            peaks=tuple(peaks),
            smiles=headers["SMILES"],
            inchikey=headers["INCHIKEY"],
            instrument_tag=headers.get("INSTRUMENT"),
        )
    )


def format_records(records: list[SpectrumRecord]) -> str:
    """Serialize records to the record file format (round-trips through
    parse_records, floats at full precision)."""
    blocks = []
    for record in records:
        lines = [f"ID: {record.record_id}", f"SMILES: {record.smiles}", f"INCHIKEY: {record.inchikey}"]
        if record.instrument_tag is not None:
            lines.append(f"INSTRUMENT: {record.instrument_tag}")
        lines.append(f"PEAKS: {len(record.peaks)}")
        lines.extend(f"{p.mz!r} {p.intensity!r}" for p in record.peaks)
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# ---------------------------------------------------------------------------
# Scaffold-disjoint splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    """Record ids and scaffold keys for each side of a scaffold-disjoint
    train/test partition."""

    train_ids: frozenset[str]
    test_ids: frozenset[str]
    train_scaffolds: frozenset[str]
    test_scaffolds: frozenset[str]

    def __post_init__(self) -> None:
        if self.train_scaffolds & self.test_scaffolds:
            raise SplitError("train and test scaffolds overlap")
        if self.train_ids & self.test_ids:
            raise SplitError("a record id appears on both sides")

    def side_of(self, record: SpectrumRecord) -> str:
        if record.record_id in self.train_ids:
            return "train"
        if record.record_id in self.test_ids:
            return "test"
        raise KeyError(record.record_id)

    def to_text(self) -> str:
        """Canonical serialization with a leakage-audit header."""
        lines = [
            f"train_scaffolds = {len(self.train_scaffolds)}",
            f"test_scaffolds = {len(self.test_scaffolds)}",
            f"train_records = {len(self.train_ids)}",
            f"test_records = {len(self.test_ids)}",
            f"scaffold_overlap = {len(self.train_scaffolds & self.test_scaffolds)}",
            "[train]",
        ]
        lines.extend(sorted(self.train_ids))
        lines.append("[test]")
        lines.extend(sorted(self.test_ids))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, records: list[SpectrumRecord]) -> "DatasetSplit":
        by_id = {r.record_id: r for r in records}
        train_ids: set[str] = set()
        test_ids: set[str] = set()
        current: set[str] | None = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or "=" in line:
                continue
            if line == "[train]":
                current = train_ids
            elif line == "[test]":
                current = test_ids
            elif current is not None:
                if line not in by_id:
                    raise SplitError(f"split names unknown record id {line!r}")
                current.add(line)
        return cls(
            train_ids=frozenset(train_ids),
            test_ids=frozenset(test_ids),
            train_scaffolds=frozenset(by_id[i].scaffold for i in train_ids),
            test_scaffolds=frozenset(by_id[i].scaffold for i in test_ids),
        )


def scaffold_disjoint_split(
    records: list[SpectrumRecord], test_fraction: float, seed: int
) -> DatasetSplit:
    """Assign whole scaffolds (never individual records) to the test side
    until it holds at least ``test_fraction`` of all scaffolds.

    Records whose InChIKeys differ only after the first block share a
    scaffold, so they always land on the same side. Deterministic for a
    fixed seed.
    """
    if not records:
        raise SplitError("no records to split")
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_scaffold: dict[str, list[str]] = {}
    for record in records:
        by_scaffold.setdefault(record.scaffold, []).append(record.record_id)
    scaffolds = list(by_scaffold)
    if len(scaffolds) < 2:
        raise SplitError("fewer than 2 distinct scaffolds")
    rng = substream(seed, "split")
    order = [scaffolds[i] for i in rng.permutation(len(scaffolds))]
    n_test = math.ceil(test_fraction * len(scaffolds))
    test_scaffolds = frozenset(order[:n_test])
    train_scaffolds = frozenset(order[n_test:])
    train_ids: set[str] = set()
    test_ids: set[str] = set()
    for scaffold, ids in by_scaffold.items():
        (test_ids if scaffold in test_scaffolds else train_ids).update(ids)
    return DatasetSplit(
        train_ids=frozenset(train_ids),
        test_ids=frozenset(test_ids),
        train_scaffolds=train_scaffolds,
        test_scaffolds=test_scaffolds,
    )


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

# Every synthetic molecule is an unordered combination of this many
# fragments; constant size keeps record lengths uniform so an untrained
# model cannot rank candidates by size cues.
FRAGMENTS_PER_MOLECULE = 4

_FRAGMENT_ATOMS = "CNOS"
_BASE_MASS_OFFSET = 60.0
_BASE_MASS_STEP = 40.0


def _fragment_code(fragment: int, width: int) -> str:
    letters = []
    for _ in range(width):
        letters.append(_FRAGMENT_ATOMS[fragment % 4])
        fragment //= 4
    return "".join(reversed(letters))


def _hash_letters(text: str, n: int) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return "".join(chr(ord("A") + digest[i] % 26) for i in range(n))


def fragment_base_mass(fragment: int) -> float:
    """Fixed per-fragment peak position used by the synthetic generator."""
    return _BASE_MASS_OFFSET + _BASE_MASS_STEP * fragment


def generate_synthetic_corpus(
    n_scaffolds: int,
    spectra_per_scaffold: int,
    n_fragment_types: int,
    noise_level: float,
    seed: int,
) -> list[SpectrumRecord]:
    """Build a compositional synthetic corpus.

    Each molecule is a distinct combination of FRAGMENTS_PER_MOLECULE
    fragment types; its SMILES is the concatenation of fixed per-fragment
    atom codes and its InChIKey first block is a deterministic hash of the
    fragment combination. Each spectrum holds one peak per fragment at a
    fragment-specific base mass with additive m/z jitter and
    multiplicative intensity jitter scaled by ``noise_level``. Unseen
    scaffolds are therefore novel combinations of seen fragments.
    """
    if n_scaffolds < 4:
        raise ValueError("n_scaffolds must be at least 4")
    if n_fragment_types < 8:
        raise ValueError("n_fragment_types must be at least 8")
    if spectra_per_scaffold < 2:
        raise ValueError("spectra_per_scaffold must be at least 2")
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    if math.comb(n_fragment_types, FRAGMENTS_PER_MOLECULE) < n_scaffolds:
        raise ValueError(
            f"{n_fragment_types} fragment types admit only "
            f"{math.comb(n_fragment_types, FRAGMENTS_PER_MOLECULE)} distinct molecules"
        )

    rng = substream(seed, "synthetic")
    code_width = max(2, math.ceil(math.log(n_fragment_types, 4)))
    base_intensity = rng.uniform(30.0, 100.0, size=n_fragment_types)

    combos: list[tuple[int, ...]] = []
    seen_combos: set[tuple[int, ...]] = set()
    while len(combos) < n_scaffolds:
        combo = tuple(sorted(rng.choice(n_fragment_types, size=FRAGMENTS_PER_MOLECULE, replace=False).tolist()))
        if combo not in seen_combos:
            seen_combos.add(combo)
            combos.append(combo)

    used_keys: set[str] = set()
    records: list[SpectrumRecord] = []
    for mol_index, combo in enumerate(combos):
        combo_tag = "-".join(f"{f:02d}" for f in combo)
        salt = 0
        first_block = _hash_letters(combo_tag, 14)
        while first_block in used_keys:
            salt += 1
            first_block = _hash_letters(f"{combo_tag}+{salt}", 14)
        used_keys.add(first_block)
        inchikey = f"{first_block}-{_hash_letters(combo_tag + '/suffix', 10)}-N"
        smiles = "".join(_fragment_code(f, code_width) for f in combo)
        for rep in range(spectra_per_scaffold):
            peaks = []
            for f in combo:
                mz = fragment_base_mass(f) + noise_level * rng.standard_normal()
                intensity = base_intensity[f] * math.exp(noise_level * rng.standard_normal())
                peaks.append(Peak(mz=max(mz, 1e-3), intensity=intensity))
            records.append(
                SpectrumRecord(
                    record_id=f"SYN{mol_index:04d}R{rep:02d}",
                    peaks=tuple(peaks),
                    smiles=smiles,
                    inchikey=inchikey,
                    instrument_tag=f"synth-{rep % 4}",
                )
            )
    return records
