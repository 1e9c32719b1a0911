"""Speech-Commands-style corpus ingestion.

A corpus is a directory tree ``<root>/<keyword>/<file>.wav``. Directories whose
names start with ``_`` (e.g. ``_background_noise_``) are not keywords. Labels
are assigned by sorted directory name.
"""
from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000


class CorpusError(Exception):
    """Raised for structural problems with a corpus directory or manifest."""


class WavFormatError(ValueError):
    """Raised when a file is not a 16-bit PCM mono RIFF/WAVE file."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class KeywordLabel:
    index: int
    name: str


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    samples: np.ndarray
    sample_rate: int
    label: KeywordLabel | None = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError(f"utterance {self.id!r} has no samples")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a 16-bit PCM mono WAV file to floats in [-1, 1).

    Samples are divided by 32768, so -32768 maps to exactly -1.0.
    """
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file", path)
    try:
        with wave.open(path, "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"unsupported or corrupt encoding ({exc})", path) from exc
    if channels != 1:
        raise WavFormatError(f"expected mono audio, found {channels} channels", path)
    if width != 2:
        raise WavFormatError(f"expected 16-bit PCM, found {8 * width}-bit samples", path)
    if rate <= 0:
        raise WavFormatError("invalid sample rate", path)
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Write floats in [-1, 1] as 16-bit PCM mono (used for fixtures and tooling)."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


def canonicalize_length(u: Utterance, target_samples: int = SAMPLE_RATE) -> Utterance:
    """Zero-pad symmetrically or center-crop ``u`` to ``target_samples``.

    When the pad is odd the extra zero goes on the right; when the crop is odd
    the extra sample is dropped from the right.
    """
    if target_samples <= 0:
        raise ValueError("target_samples must be positive")
    x = u.samples
    n = x.shape[0]
    if n == target_samples:
        return u
    if n < target_samples:
        left = (target_samples - n) // 2
        out = np.pad(x, (left, target_samples - n - left))
    else:
        start = (n - target_samples) // 2
        out = x[start:start + target_samples]
    return Utterance(u.id, out, u.sample_rate, u.label)


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint sets of utterance ids (paths relative to the corpus root).

    ``valid`` is optional and only used for checkpoint selection.
    """

    train: frozenset
    eval: frozenset
    valid: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("train", "eval", "valid"):
            object.__setattr__(self, name, frozenset(_norm_id(i) for i in getattr(self, name)))
        pairs = [("train", "eval"), ("train", "valid"), ("eval", "valid")]
        for a, b in pairs:
            overlap = getattr(self, a) & getattr(self, b)
            if overlap:
                example = sorted(overlap)[0]
                raise CorpusError(f"{a} and {b} splits overlap ({len(overlap)} ids, e.g. {example!r})")

    @classmethod
    def from_list_files(cls, root, eval_list, valid_list=None) -> "SplitManifest":
        """Build the official split: ids in ``eval_list`` form the eval set,
        ids in ``valid_list`` the validation set, every other keyword WAV trains.
        """
        root = Path(root)
        eval_ids = set(read_id_list(eval_list))
        valid_ids = set(read_id_list(valid_list)) if valid_list else set()
        all_ids = {rel for rel, _ in _scan_keyword_files(root)}
        train = all_ids - eval_ids - valid_ids
        return cls(frozenset(train), frozenset(eval_ids), frozenset(valid_ids))

    def to_dict(self) -> dict:
        return {"train": sorted(self.train), "eval": sorted(self.eval), "valid": sorted(self.valid)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(frozenset(d["train"]), frozenset(d["eval"]), frozenset(d.get("valid", ())))


def read_id_list(path) -> list[str]:
    """Read a newline-delimited list of relative paths, skipping blank lines."""
    with open(path, encoding="utf-8") as fh:
        return [_norm_id(line.strip()) for line in fh if line.strip()]


def _norm_id(i: str) -> str:
    return str(i).replace("\\", "/").removeprefix("./")


def keyword_dirs(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {str(root)!r} is not a directory")
    names = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith(("_", ".")))
    if not names:
        raise CorpusError("no keyword directories found")
    return names


def _scan_keyword_files(root: Path) -> Iterator[tuple[str, str]]:
    for name in keyword_dirs(root):
        for wav in sorted((root / name).glob("*.wav")):
            yield f"{name}/{wav.name}", name


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    path: Path
    label: KeywordLabel


class Corpus:
    """Handle over a labelled corpus; audio is decoded lazily."""

    def __init__(self, root, labels: Sequence[KeywordLabel], splits: dict[str, list[CorpusEntry]],
                 target_samples: int = SAMPLE_RATE):
        self.root = Path(root)
        self.labels = list(labels)
        self.splits = splits
        self.target_samples = target_samples
        self.skipped: list[str] = []

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def label_names(self) -> list[str]:
        return [lab.name for lab in self.labels]

    def entries(self, split: str) -> list[CorpusEntry]:
        try:
            return self.splits[split]
        except KeyError:
            raise CorpusError(f"unknown split {split!r}; have {sorted(self.splits)}") from None

    def counts(self) -> dict[str, int]:
        return {name: len(items) for name, items in self.splits.items()}

    def load(self, entry: CorpusEntry, canonical: bool = True) -> Utterance:
        samples, rate = read_wav(entry.path)
        u = Utterance(entry.id, samples, rate, entry.label)
        return canonicalize_length(u, self.target_samples) if canonical else u

    def iter_split(self, split: str) -> Iterator[Utterance]:
        for entry in self.entries(split):
            yield self.load(entry)


def _check_header(path: Path) -> None:
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file", str(path))
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, frames = wf.getnchannels(), wf.getsampwidth(), wf.getnframes()
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"unsupported or corrupt encoding ({exc})", str(path)) from exc
    if channels != 1 or width != 2:
        raise WavFormatError(f"expected 16-bit mono PCM, found {channels} ch / {8 * width}-bit", str(path))
    if frames == 0:
        raise WavFormatError("no audio frames", str(path))


def load_corpus(root, manifest: SplitManifest, skip_bad: bool = False,
                target_samples: int = SAMPLE_RATE, validate: bool = True) -> Corpus:
    """Enumerate keyword directories and resolve the manifest against them.

    Headers are validated up front when ``validate`` is set; a bad file raises
    :class:`WavFormatError` naming the file unless ``skip_bad`` is true, in
    which case it is logged and dropped.
    """
    root = Path(root)
    names = keyword_dirs(root)
    labels = [KeywordLabel(i, n) for i, n in enumerate(names)]
    by_name = {lab.name: lab for lab in labels}
    corpus = Corpus(root, labels, {}, target_samples)
    for split in ("train", "eval", "valid"):
        entries = []
        for uid in sorted(getattr(manifest, split)):
            keyword = uid.split("/", 1)[0]
            if keyword not in by_name:
                raise CorpusError(f"manifest id {uid!r} is not under a keyword directory")
            path = root / uid
            if not path.is_file():
                raise CorpusError(f"manifest id {uid!r} does not resolve to a file")
            if validate:
                try:
                    _check_header(path)
                except WavFormatError:
                    if not skip_bad:
                        raise
                    logger.warning("skipping unreadable file %s", uid)
                    corpus.skipped.append(uid)
                    continue
            entries.append(CorpusEntry(uid, path, by_name[keyword]))
        corpus.splits[split] = entries
    logger.info("corpus %s: %d classes, %s", root, len(labels), corpus.counts())
    return corpus


def manifest_by_fraction(root, eval_fraction: float, seed: int = 0) -> SplitManifest:
    """Random per-keyword split, for corpora that ship no list files."""
    rng = np.random.default_rng(seed)
    train, evl = set(), set()
    by_kw: dict[str, list[str]] = {}
    for rel, kw in _scan_keyword_files(Path(root)):
        by_kw.setdefault(kw, []).append(rel)
    for kw in sorted(by_kw):
        ids = by_kw[kw]
        order = rng.permutation(len(ids))
        n_eval = int(round(eval_fraction * len(ids)))
        for rank, j in enumerate(order):
            (evl if rank < n_eval else train).add(ids[j])
    return SplitManifest(frozenset(train), frozenset(evl))


def iter_noise_pool(directory) -> Iterable[np.ndarray]:
    """Yield every WAV under ``directory`` (recursively) as float samples."""
    for path in sorted(Path(directory).rglob("*.wav")):
        samples, _ = read_wav(path)
        yield samples
