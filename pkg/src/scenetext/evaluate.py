"""Benchmark protocols, word accuracy and report tables."""

from __future__ import annotations

import csv
import hashlib
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data.preprocess import preprocess
from .data.samples import WordSample, load_annotations

_ALNUM = re.compile(r"[0-9A-Za-z]*")
CASE_MODES = ("insensitive", "sensitive")


@dataclass(frozen=True)
class EvalProtocol:
    filter_non_alphanumeric: bool = False
    min_length: int = 0
    case_mode: str = "insensitive"

    def __post_init__(self):
        if self.min_length < 0:
            raise ValueError(f"min_length must be >= 0, got {self.min_length}")
        if self.case_mode not in CASE_MODES:
            raise ValueError(f"case_mode must be one of {CASE_MODES}, got {self.case_mode!r}")

    def keeps(self, text: str) -> bool:
        if self.filter_non_alphanumeric and not _ALNUM.fullmatch(text):
            return False
        return len(text) >= self.min_length


# Per-benchmark defaults. Only IC03 and IC13 are filtered; the others are used whole.
BENCHMARKS: dict[str, EvalProtocol] = {
    "ic03": EvalProtocol(True, 3),
    "ic13": EvalProtocol(True, 3),
    "ic15": EvalProtocol(False, 0),
    "svt": EvalProtocol(False, 0),
    "svtp": EvalProtocol(False, 0),
    "iiit5k": EvalProtocol(False, 0),
}


def benchmark_protocol(name: str, case_mode: str = "insensitive") -> EvalProtocol:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return replace(BENCHMARKS[key], case_mode=case_mode)


def filter_dataset(samples: Sequence[WordSample], protocol: EvalProtocol) -> list[WordSample]:
    """Order-preserving subset of ``samples`` whose transcription passes ``protocol``."""
    return [s for s in samples if protocol.keeps(s.text)]


def _fold(text: str, case_mode: str) -> str:
    return text.lower() if case_mode == "insensitive" else text


def word_accuracy(predictions: Sequence[str], truths: Sequence[str], case_mode: str = "insensitive") -> float:
    """Exact-match fraction; in insensitive mode both sides are lowercased first."""
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} ground truths")
    if case_mode not in CASE_MODES:
        raise ValueError(f"case_mode must be one of {CASE_MODES}, got {case_mode!r}")
    if not truths:
        return 0.0
    hits = sum(_fold(p, case_mode) == _fold(t, case_mode) for p, t in zip(predictions, truths))
    return hits / len(truths)


@dataclass
class ReportRow:
    dataset: str
    n_total: int | None = None
    n_kept: int | None = None
    n_correct: int | None = None
    protocol: EvalProtocol | None = None
    error: str | None = None

    @property
    def absent(self) -> bool:
        return self.n_total is None

    @property
    def accuracy(self) -> float | None:
        if self.absent:
            return None
        return self.n_correct / self.n_kept if self.n_kept else 0.0


@dataclass
class EvalReport:
    checkpoint_id: str
    rows: list[ReportRow] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(not r.absent for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.complete else 2

    def _cells(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            if r.absent:
                out.append([r.dataset, "absent", "", "", "", "", ""])
                continue
            p = r.protocol
            proto = f"alnum={int(p.filter_non_alphanumeric)} min={p.min_length} case={p.case_mode}"
            out.append(
                [r.dataset, "ok", str(r.n_total), str(r.n_kept), str(r.n_correct), f"{r.accuracy:.4f}", proto]
            )
        return out

    _HEADER = ["dataset", "status", "n_total", "n_kept", "n_correct", "accuracy", "protocol"]

    def render(self) -> str:
        rows = [self._HEADER] + self._cells()
        widths = [max(len(row[i]) for row in rows) for i in range(len(self._HEADER))]
        lines = [f"checkpoint {self.checkpoint_id}"]
        for k, row in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
            if k == 0:
                lines.append("  ".join("-" * w for w in widths))
        for r in self.rows:
            if r.absent and r.error:
                lines.append(f"# {r.dataset}: {r.error}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["checkpoint"] + self._HEADER)
        for cells in self._cells():
            writer.writerow([self.checkpoint_id] + cells)
        return buf.getvalue()


def checkpoint_id(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def evaluate_samples(model, samples: Sequence[WordSample], protocol: EvalProtocol, batch_size: int = 64) -> ReportRow:
    kept = filter_dataset(samples, protocol)
    correct = 0
    if kept:
        images = np.stack([preprocess(s) for s in kept])
        preds = model.recognize(images, batch_size)
        correct = sum(_fold(p, protocol.case_mode) == _fold(s.text, protocol.case_mode) for p, s in zip(preds, kept))
    return ReportRow("", len(samples), len(kept), correct, protocol)


def evaluate(
    model,
    datasets: Mapping[str, str | Path | Sequence[WordSample]],
    protocol: EvalProtocol | str | None = None,
    checkpoint: str = "in-memory",
    batch_size: int = 64,
) -> EvalReport:
    """One report row per dataset, in the given order.

    ``protocol`` may be an :class:`EvalProtocol`, a benchmark name applied to
    every dataset, or ``None`` to pick the benchmark preset matching each
    dataset name (unfiltered when the name is not a known benchmark). A
    dataset path that cannot be read yields an absent row.
    """
    case_mode = model.vocab.case_mode
    report = EvalReport(checkpoint)
    for name, source in datasets.items():
        if isinstance(protocol, EvalProtocol):
            proto = protocol
        elif isinstance(protocol, str):
            proto = benchmark_protocol(protocol, case_mode)
        else:
            try:
                proto = benchmark_protocol(name, case_mode)
            except KeyError:
                proto = EvalProtocol(case_mode=case_mode)
        if isinstance(source, (str, Path)):
            if not Path(source).is_file():
                report.rows.append(ReportRow(name, error=f"missing annotation file {source}"))
                continue
            samples = load_annotations(source, source=name)
        else:
            samples = list(source)
        row = evaluate_samples(model, samples, proto, batch_size)
        row.dataset = name
        report.rows.append(row)
    return report
