"""Synthetic datasets for training experiments, tests, and the demo pipeline.

Vectors are built directly against the manifest (valid by construction):
noise goes into count/log slots, flags and ratios stay in range, one-hot
groups stay one-hot. Each task plants its signal in the first count slot,
which z-scoring preserves up to an affine map.
"""

from __future__ import annotations

import numpy as np

from .features import MANIFEST, FeatureVector, Kind
from .warnings import (
    Dataset,
    Label,
    Level,
    WarningRecord,
    stratified_split,
    warning_id,
)

SIGNAL_FEATURE = "generic_param_count"

_ONE_HOT_GROUPS = ("bypass_", "checker_", "level_", "op_")


def make_synthetic_warning(i: int, label: Label, analyzer: str = "UnsafeDataflow") -> WarningRecord:
    file = f"synthetic-0.1.0/src/unit_{i:04d}.rs"
    line = 10 + 30 * i
    description = f"synthetic warning {i}"
    return WarningRecord(
        id=warning_id(file, line, 1, line, 40, analyzer, description),
        level=Level.WARNING,
        analyzer=analyzer,
        op_type=None,
        description=description,
        file=file,
        start_line=line,
        start_col=1,
        end_line=line,
        end_col=40,
        code_snippet=f"fn probe_{i}(v: &mut Vec<u8>) {{ unsafe {{ v.set_len(0); }} }}",
        label=label,
    )


def _random_valid_vector(rng: np.random.Generator) -> np.ndarray:
    values = np.zeros(len(MANIFEST))
    grouped: dict[str, list[int]] = {p: [] for p in _ONE_HOT_GROUPS}
    for i, entry in enumerate(MANIFEST.entries):
        prefix = next((p for p in _ONE_HOT_GROUPS if entry.name.startswith(p)), None)
        if entry.kind is Kind.ONE_HOT and prefix:
            grouped[prefix].append(i)
        elif entry.kind is Kind.FLAG:
            values[i] = float(rng.integers(0, 2))
        elif entry.kind is Kind.RATIO:
            values[i] = rng.random()
        else:
            values[i] = rng.normal()
    for slots in grouped.values():
        values[slots[int(rng.integers(0, len(slots)))]] = 1.0
    return values


def _build_dataset(
    records: list[WarningRecord],
    vectors: dict[str, FeatureVector],
    seed: int,
    ratios=(0.70, 0.15, 0.15),
) -> tuple[Dataset, dict[str, FeatureVector]]:
    assignment = stratified_split(records, ratios, seed)
    return Dataset(records, assignment, seed), vectors


def separable_task(
    n: int = 400, seed: int = 7, p_positive: float = 0.5
) -> tuple[Dataset, dict[str, FeatureVector]]:
    """The signal feature equals the label; everything else is noise."""
    rng = np.random.default_rng(seed)
    signal = MANIFEST.index_of(SIGNAL_FEATURE)
    records, vectors = [], {}
    for i in range(n):
        label = Label.TRUE_POSITIVE if rng.random() < p_positive else Label.FALSE_POSITIVE
        rec = make_synthetic_warning(i, label)
        values = _random_valid_vector(rng)
        values[signal] = 1.0 if label is Label.TRUE_POSITIVE else 0.0
        records.append(rec)
        vectors[rec.id] = FeatureVector(rec.id, values, MANIFEST.digest)
    return _build_dataset(records, vectors, seed)


def _constant_baseline() -> np.ndarray:
    """A fixed valid vector: zeros everywhere, first slot of each one-hot set."""
    values = np.zeros(len(MANIFEST))
    seen: set[str] = set()
    for i, entry in enumerate(MANIFEST.entries):
        prefix = next((p for p in _ONE_HOT_GROUPS if entry.name.startswith(p)), None)
        if entry.kind is Kind.ONE_HOT and prefix and prefix not in seen:
            values[i] = 1.0
            seen.add(prefix)
    return values


def ambiguity_task(
    n: int = 600,
    seed: int = 11,
    ambiguous_fraction: float = 0.5,
    clear_tp_fraction: float = 0.25,
) -> tuple[Dataset, dict[str, FeatureVector], set[str]]:
    """Half the warnings are decisively featured, half carry no label signal.

    Clear warnings put +1/-1 in the signal slot by label; ambiguous warnings
    put 0 there and draw labels 50/50, so only dynamic evidence can resolve
    them. All other slots are constant, so warnings within a group are
    indistinguishable: nothing but the signal and the fuzz encoding can carry
    information. Returns the ambiguous warning ids alongside the dataset.
    """
    rng = np.random.default_rng(seed)
    signal = MANIFEST.index_of(SIGNAL_FEATURE)
    baseline = _constant_baseline()
    records, vectors = [], {}
    ambiguous_ids: set[str] = set()
    for i in range(n):
        ambiguous = rng.random() < ambiguous_fraction
        p_tp = 0.5 if ambiguous else clear_tp_fraction
        label = Label.TRUE_POSITIVE if rng.random() < p_tp else Label.FALSE_POSITIVE
        rec = make_synthetic_warning(i, label)
        values = baseline.copy()
        if ambiguous:
            values[signal] = 0.0
            ambiguous_ids.add(rec.id)
        else:
            values[signal] = 1.0 if label is Label.TRUE_POSITIVE else -1.0
        records.append(rec)
        vectors[rec.id] = FeatureVector(rec.id, values, MANIFEST.digest)
    dataset, vectors = _build_dataset(records, vectors, seed)
    return dataset, vectors, ambiguous_ids


# ---------------------------------------------------------------------------
# A small hand-written corpus for the end-to-end CLI demo and tests.
# ---------------------------------------------------------------------------

_DEMO_SNIPPETS = [
    ("UnsafeDataflow", "ReadFlow", "unsafe dataflow from uninitialized memory",
     "fn drain_into<T: Copy>(v: &mut Vec<T>) {\n    let len = v.len();\n    unsafe { v.set_len(0); }\n    v.retain(|x| probe(x));\n    unsafe { v.set_len(len); }\n}"),
    ("SendSyncVariance", None, "missing Send bound allows cross-thread sharing",
     "pub struct Guard<T> { inner: *mut T }\nunsafe impl<T> Send for Guard<T> {}"),
    ("UnsafeDestructor", None, "unsafe block detected in drop",
     "impl<T: 'static> Drop for Slot<T> {\n    fn drop(&mut self) { unsafe { free(self.ptr); } }\n}"),
    ("UnsafeDataflow", "CopyFlow", "duplicated value reaches generic call while panicking",
     "fn dup_apply<F: Fn(&u8) -> bool>(data: &mut [u8], f: F) {\n    for b in data.iter() {\n        if f(b) { panic!(\"invariant\"); }\n    }\n}"),
    ("UnsafeDataflow", "VecFromRaw", "vector rebuilt from raw parts",
     "fn rebuild(ptr: *mut u8, n: usize) -> Vec<u8> {\n    unsafe { Vec::from_raw_parts(ptr, n, n) }\n}"),
]


def demo_corpus(n: int = 20, seed: int = 5) -> tuple[list[dict], dict[str, Label], dict]:
    """(report objects, labels by id, package metadata doc) for n warnings."""
    rng = np.random.default_rng(seed)
    report = []
    labels: dict[str, Label] = {}
    for i in range(n):
        analyzer, op_type, description, snippet = _DEMO_SNIPPETS[i % len(_DEMO_SNIPPETS)]
        package = f"demo-crate-{i % 3}"
        file = f"{package}-0.{i % 3}.1/src/lib_{i:02d}.rs"
        line = 5 + 7 * i
        obj = {
            "level": "Warning" if i % 4 else "Error",
            "analyzer": analyzer,
            "op_type": op_type,
            "description": description,
            "file": file,
            "start_line": line,
            "start_col": 1,
            "end_line": line + snippet.count("\n"),
            "end_col": 33,
            "code_snippet": snippet,
        }
        report.append(obj)
        wid = warning_id(file, line, 1, obj["end_line"], 33, analyzer, description)
        labels[wid] = Label.TRUE_POSITIVE if rng.random() < 0.4 else Label.FALSE_POSITIVE
    metadata = {
        f"demo-crate-{k}-0.{k}.1": {
            "downloads": int(10 ** (k + 2)),
            "unsafe_prevalence": round(0.1 * (k + 1), 2),
            "loc": 1200 * (k + 1),
        }
        for k in range(3)
    }
    return report, labels, metadata
