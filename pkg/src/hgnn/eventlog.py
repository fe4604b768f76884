"""Event-log ingestion: CSV parsing, encoder fitting, trace-to-graph encoding.

A trace (all events of one case, ordered by start time) becomes a chain graph:
one node per event with concatenated [one-hot activity | universal attrs |
event-specific attrs] features, edges i -> i+1 weighted by the min-max
normalized start-time gap (exactly 0 for simultaneous events), plus a
graph-level vector from the sequence attributes.

Encoders (vocabularies, min/max/median scalers, gap range, duration bins) are
fitted on the training split only; unseen categorical levels at inference get
the padding treatment: a zeroed block flagged in feature_mask.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


class SchemaError(ValueError):
    """The log schema is inconsistent or does not match the CSV."""


class RowParseError(ValueError):
    """A CSV row could not be parsed; carries the 1-based row number."""

    def __init__(self, row_number, message):
        super().__init__(f"row {row_number}: {message}")
        self.row_number = row_number


@dataclass(frozen=True)
class AttrSpec:
    name: str
    kind: str  # categorical | numerical

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class LogSchema:
    case_id_column: str
    activity_column: str
    start_time_column: str
    complete_time_column: str
    label_column: str
    universal_event_attrs: list = field(default_factory=list)
    event_specific_attrs: list = field(default_factory=list)
    sequence_attrs: list = field(default_factory=list)
    timestamp_format: str = "iso8601"  # iso8601 | epoch

    def __post_init__(self):
        self.universal_event_attrs = [
            a if isinstance(a, AttrSpec) else AttrSpec(*a) for a in self.universal_event_attrs
        ]
        self.event_specific_attrs = [
            a if isinstance(a, AttrSpec) else AttrSpec(*a) for a in self.event_specific_attrs
        ]
        self.sequence_attrs = [
            a if isinstance(a, AttrSpec) else AttrSpec(*a) for a in self.sequence_attrs
        ]
        if self.timestamp_format not in ("iso8601", "epoch"):
            raise SchemaError(f"timestamp_format must be iso8601|epoch, got {self.timestamp_format!r}")
        names = self.all_columns()
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names in schema: {dupes}")

    def node_attrs(self):
        return list(self.universal_event_attrs) + list(self.event_specific_attrs)

    def all_columns(self):
        return (
            [self.case_id_column, self.activity_column, self.start_time_column,
             self.complete_time_column, self.label_column]
            + [a.name for a in self.node_attrs()]
            + [a.name for a in self.sequence_attrs]
        )

    def to_json_dict(self):
        return {
            "case_id_column": self.case_id_column,
            "activity_column": self.activity_column,
            "start_time_column": self.start_time_column,
            "complete_time_column": self.complete_time_column,
            "label_column": self.label_column,
            "universal_event_attrs": [[a.name, a.kind] for a in self.universal_event_attrs],
            "event_specific_attrs": [[a.name, a.kind] for a in self.event_specific_attrs],
            "sequence_attrs": [[a.name, a.kind] for a in self.sequence_attrs],
            "timestamp_format": self.timestamp_format,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            case_id_column=d["case_id_column"],
            activity_column=d["activity_column"],
            start_time_column=d["start_time_column"],
            complete_time_column=d["complete_time_column"],
            label_column=d["label_column"],
            universal_event_attrs=[AttrSpec(*a) for a in d.get("universal_event_attrs", [])],
            event_specific_attrs=[AttrSpec(*a) for a in d.get("event_specific_attrs", [])],
            sequence_attrs=[AttrSpec(*a) for a in d.get("sequence_attrs", [])],
            timestamp_format=d.get("timestamp_format", "iso8601"),
        )


@dataclass
class BinningPolicy:
    """Duration binning: every exact minute value matching unique_bin_rule gets
    its own bin; the rest are split into n_quantile_bins by empirical quantiles
    (boundary values fall into the lower bin)."""

    unique_bin_rule: str = "< 5"
    n_quantile_bins: int = 4

    _OPS = {
        "<": lambda v, t: v < t,
        "<=": lambda v, t: v <= t,
        "==": lambda v, t: v == t,
        ">=": lambda v, t: v >= t,
        ">": lambda v, t: v > t,
    }

    def __post_init__(self):
        if self.n_quantile_bins < 1:
            raise ValueError("n_quantile_bins must be positive")
        parts = self.unique_bin_rule.split()
        if len(parts) != 2 or parts[0] not in self._OPS:
            raise ValueError(
                f"unique_bin_rule must look like '< 5' or '== 1440', got {self.unique_bin_rule!r}"
            )
        self._op = parts[0]
        self._threshold = float(parts[1])

    def matches(self, minutes):
        return self._OPS[self._op](minutes, self._threshold)

    def to_json_dict(self):
        return {"unique_bin_rule": self.unique_bin_rule, "n_quantile_bins": self.n_quantile_bins}

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            unique_bin_rule=d.get("unique_bin_rule", "< 5"),
            n_quantile_bins=int(d.get("n_quantile_bins", 4)),
        )


@dataclass
class Event:
    activity: object           # str or None when missing
    start: float               # epoch seconds
    complete: float
    attrs: dict                # name -> str | float | None

    def duration_minutes(self):
        return int(round((self.complete - self.start) / 60.0))


@dataclass
class Trace:
    case_id: str
    events: list
    seq_attrs: dict
    label: object


@dataclass
class EncodedGraph:
    node_features: np.ndarray   # (n, d_N)
    edge_index: np.ndarray      # (2, n-1) int64, chain 0->1->...
    edge_weights: np.ndarray    # (n-1,) in [0, 1]
    graph_features: np.ndarray  # (1, d_G)
    label: int
    activity_ids: np.ndarray    # (n,) int64, -1 = padding
    duration_bins: np.ndarray   # (n,) int64
    feature_mask: np.ndarray    # (n, d_N) bool, True where padded

    @property
    def n_nodes(self):
        return self.node_features.shape[0]

    def to_json_dict(self):
        mask_idx = np.argwhere(self.feature_mask)
        return {
            "x": self.node_features.tolist(),
            "w": self.edge_weights.tolist(),
            "g": self.graph_features[0].tolist(),
            "y": int(self.label),
            "act": self.activity_ids.tolist(),
            "bins": self.duration_bins.tolist(),
            "mask_idx": mask_idx.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d):
        x = np.asarray(d["x"], dtype=np.float64)
        n = x.shape[0]
        mask = np.zeros(x.shape, dtype=bool)
        for r, c in d.get("mask_idx", []):
            mask[r, c] = True
        return cls(
            node_features=x,
            edge_index=chain_edge_index(n),
            edge_weights=np.asarray(d["w"], dtype=np.float64),
            graph_features=np.asarray([d["g"]], dtype=np.float64),
            label=int(d["y"]),
            activity_ids=np.asarray(d["act"], dtype=np.int64),
            duration_bins=np.asarray(d["bins"], dtype=np.int64),
            feature_mask=mask,
        )


def chain_edge_index(n):
    if n <= 1:
        return np.zeros((2, 0), dtype=np.int64)
    idx = np.arange(n - 1, dtype=np.int64)
    return np.vstack([idx, idx + 1])


# -- parsing -------------------------------------------------------------------


def _parse_timestamp(raw, fmt, row_number):
    raw = raw.strip()
    if not raw:
        raise RowParseError(row_number, "empty timestamp")
    if fmt == "epoch":
        try:
            return float(raw)
        except ValueError:
            raise RowParseError(row_number, f"bad epoch timestamp {raw!r}") from None
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise RowParseError(row_number, f"bad ISO-8601 timestamp {raw!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _cell(value):
    value = value.strip() if isinstance(value, str) else value
    return None if value in (None, "") else value


def _num(value, name, row_number):
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise RowParseError(row_number, f"non-numeric value {value!r} in column {name!r}") from None


def parse_log(csv_source, schema):
    """Parse a CSV into traces grouped by case id, sorted by start time.

    csv_source may be a path or a file-like object. Sorting is stable, so
    simultaneous events keep their file order.
    """
    if hasattr(csv_source, "read"):
        return _parse_stream(csv_source, schema)
    with open(csv_source, "r", encoding="utf-8", newline="") as fh:
        return _parse_stream(fh, schema)


def _parse_stream(fh, schema):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV: no header row") from None
    col = {name: i for i, name in enumerate(header)}
    missing = [c for c in schema.all_columns() if c not in col]
    if missing:
        raise SchemaError(f"CSV is missing schema columns: {missing}")

    cases = {}
    for row_number, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise RowParseError(row_number, f"expected {len(header)} fields, got {len(row)}")

        def get(name):
            return _cell(row[col[name]])

        case_id = get(schema.case_id_column)
        if case_id is None:
            raise RowParseError(row_number, "empty case id")
        start = _parse_timestamp(row[col[schema.start_time_column]], schema.timestamp_format, row_number)
        complete = _parse_timestamp(row[col[schema.complete_time_column]], schema.timestamp_format, row_number)
        attrs = {}
        for a in schema.node_attrs():
            v = get(a.name)
            attrs[a.name] = _num(v, a.name, row_number) if a.kind == NUMERICAL else v
        event = Event(activity=get(schema.activity_column), start=start, complete=complete, attrs=attrs)

        if case_id not in cases:
            seq = {}
            for a in schema.sequence_attrs:
                v = get(a.name)
                seq[a.name] = _num(v, a.name, row_number) if a.kind == NUMERICAL else v
            cases[case_id] = Trace(case_id=case_id, events=[], seq_attrs=seq, label=get(schema.label_column))
        cases[case_id].events.append(event)

    traces = []
    for trace in cases.values():
        if not trace.events:
            continue  # a case with zero events cannot arise from rows, kept as a guard
        trace.events.sort(key=lambda e: e.start)  # stable: ties keep file order
        traces.append(trace)
    return traces


# -- encoder fitting -----------------------------------------------------------


@dataclass
class NumericStats:
    vmin: float
    vmax: float
    median: float

    def scale(self, value):
        if value is None:
            value = self.median
        if self.vmax == self.vmin:
            return 0.0  # constant attribute: everything maps to 0
        return min(1.0, max(0.0, (value - self.vmin) / (self.vmax - self.vmin)))


@dataclass
class EncoderState:
    activity_vocab: list
    cat_vocabs: dict           # attr name -> ordered vocabulary (node + sequence)
    num_stats: dict            # attr name -> NumericStats (node + sequence)
    gap_min: float
    gap_max: float
    unique_bins: dict          # duration minutes -> bin id
    quantile_edges: list       # internal edges for the quantile bins
    n_quantile_bins: int
    label_vocab: list
    policy: BinningPolicy

    _activity_index: dict = field(default=None, repr=False)
    _cat_indexes: dict = field(default=None, repr=False)

    def __post_init__(self):
        self._activity_index = {v: i for i, v in enumerate(self.activity_vocab)}
        self._cat_indexes = {k: {v: i for i, v in enumerate(vocab)} for k, vocab in self.cat_vocabs.items()}

    @property
    def n_bins(self):
        return len(self.unique_bins) + (self.n_quantile_bins if self.quantile_edges is not None else 0)

    @property
    def n_activities(self):
        return len(self.activity_vocab)

    @property
    def n_classes(self):
        return len(self.label_vocab)

    def activity_id(self, activity):
        return self._activity_index.get(activity, -1)

    def cat_id(self, name, value):
        return self._cat_indexes[name].get(value, -1)

    def label_index(self):
        if not hasattr(self, "_label_idx_cache"):
            self._label_idx_cache = {v: i for i, v in enumerate(self.label_vocab)}
        return self._label_idx_cache

    def duration_bin(self, minutes):
        """Total mapping of a rounded duration to a bin id in [0, n_bins)."""
        if self.policy.matches(minutes) and self.unique_bins:
            if minutes in self.unique_bins:
                return self.unique_bins[minutes]
            # unseen value satisfying the rule: nearest fitted unique value, ties low
            keys = sorted(self.unique_bins)
            best = min(keys, key=lambda k: (abs(k - minutes), k))
            return self.unique_bins[best]
        if self.quantile_edges is not None:
            base = len(self.unique_bins)
            return base + sum(1 for e in self.quantile_edges if e < minutes)
        # no quantile region fitted: clamp into the unique bins
        keys = sorted(self.unique_bins)
        best = min(keys, key=lambda k: (abs(k - minutes), k))
        return self.unique_bins[best]

    def to_json_dict(self):
        return {
            "activity_vocab": self.activity_vocab,
            "cat_vocabs": self.cat_vocabs,
            "num_stats": {k: [s.vmin, s.vmax, s.median] for k, s in self.num_stats.items()},
            "gap_min": self.gap_min,
            "gap_max": self.gap_max,
            "unique_bins": [[k, v] for k, v in sorted(self.unique_bins.items())],
            "quantile_edges": self.quantile_edges,
            "n_quantile_bins": self.n_quantile_bins,
            "label_vocab": self.label_vocab,
            "policy": self.policy.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            activity_vocab=d["activity_vocab"],
            cat_vocabs=d["cat_vocabs"],
            num_stats={k: NumericStats(*v) for k, v in d["num_stats"].items()},
            gap_min=d["gap_min"],
            gap_max=d["gap_max"],
            unique_bins={int(k): int(v) for k, v in d["unique_bins"]},
            quantile_edges=d["quantile_edges"],
            n_quantile_bins=d["n_quantile_bins"],
            label_vocab=d["label_vocab"],
            policy=BinningPolicy.from_json_dict(d["policy"]),
        )


def _first_appearance_vocab(values):
    vocab = []
    seen = set()
    for v in values:
        if v is None or v in seen:
            continue
        seen.add(v)
        vocab.append(v)
    return vocab


def fit_encoders(traces, schema, policy):
    """Fit all encoders on the training traces.

    Durations are complete - start rounded to the nearest minute before
    binning. Constant numerical attributes scale everything to 0 by design.
    """
    if not traces:
        raise ValueError("cannot fit encoders on an empty training split")

    activity_vocab = _first_appearance_vocab(
        e.activity for t in traces for e in t.events
    )

    cat_vocabs, num_values = {}, {}
    for a in schema.node_attrs():
        if a.kind == CATEGORICAL:
            cat_vocabs[a.name] = _first_appearance_vocab(
                e.attrs.get(a.name) for t in traces for e in t.events
            )
        else:
            num_values[a.name] = [
                e.attrs.get(a.name) for t in traces for e in t.events
                if e.attrs.get(a.name) is not None
            ]
    for a in schema.sequence_attrs:
        if a.kind == CATEGORICAL:
            cat_vocabs[a.name] = _first_appearance_vocab(t.seq_attrs.get(a.name) for t in traces)
        else:
            num_values[a.name] = [
                t.seq_attrs.get(a.name) for t in traces if t.seq_attrs.get(a.name) is not None
            ]

    num_stats = {}
    for name, vals in num_values.items():
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            num_stats[name] = NumericStats(float(arr.min()), float(arr.max()), float(np.median(arr)))
        else:
            num_stats[name] = NumericStats(0.0, 0.0, 0.0)

    gaps = [
        t.events[i + 1].start - t.events[i].start
        for t in traces for i in range(len(t.events) - 1)
    ]
    gap_min = float(min(gaps)) if gaps else 0.0
    gap_max = float(max(gaps)) if gaps else 0.0

    durations = [e.duration_minutes() for t in traces for e in t.events]
    unique_values = sorted({d for d in durations if policy.matches(d)})
    unique_bins = {v: i for i, v in enumerate(unique_values)}
    rest = sorted(d for d in durations if not policy.matches(d))
    if rest:
        q = policy.n_quantile_bins
        quantile_edges = [
            float(np.quantile(rest, j / q, method="linear")) for j in range(1, q)
        ]
        n_quantile = q
    else:
        quantile_edges = None
        n_quantile = 0
    if not unique_bins and quantile_edges is None:
        raise ValueError("no durations observed; cannot fit duration bins")

    label_vocab = _first_appearance_vocab(t.label for t in traces)
    if not label_vocab:
        raise ValueError("no labels in the training split")

    return EncoderState(
        activity_vocab=activity_vocab,
        cat_vocabs=cat_vocabs,
        num_stats=num_stats,
        gap_min=gap_min,
        gap_max=gap_max,
        unique_bins=unique_bins,
        quantile_edges=quantile_edges,
        n_quantile_bins=n_quantile,
        label_vocab=label_vocab,
        policy=policy,
    )


def feature_dims(state, schema):
    """(d_N, d_G) implied by the fitted encoders."""
    d_n = state.n_activities
    for a in schema.node_attrs():
        d_n += len(state.cat_vocabs[a.name]) if a.kind == CATEGORICAL else 1
    d_g = 0
    for a in schema.sequence_attrs:
        d_g += len(state.cat_vocabs[a.name]) if a.kind == CATEGORICAL else 1
    return d_n, max(d_g, 1)  # keep one zero column when no sequence attrs exist


def encode_trace(trace, state, schema, prefix_len=None):
    """Encode one trace into a chain graph.

    Missing numericals are imputed with the training median before scaling;
    missing or unseen categoricals become a zeroed one-hot block flagged in
    feature_mask. A single-event trace yields a valid graph with no edges.
    """
    events = trace.events if prefix_len is None else trace.events[:max(1, prefix_len)]
    n = len(events)
    if n == 0:
        raise ValueError(f"trace {trace.case_id!r} has no events")
    d_n, d_g = feature_dims(state, schema)

    x = np.zeros((n, d_n))
    mask = np.zeros((n, d_n), dtype=bool)
    act_ids = np.empty(n, dtype=np.int64)
    bins = np.empty(n, dtype=np.int64)

    for i, e in enumerate(events):
        off = 0
        aid = state.activity_id(e.activity)
        act_ids[i] = aid
        if aid >= 0:
            x[i, aid] = 1.0
        else:
            mask[i, 0:state.n_activities] = True
        off += state.n_activities
        for a in schema.node_attrs():
            if a.kind == CATEGORICAL:
                width = len(state.cat_vocabs[a.name])
                cid = state.cat_id(a.name, e.attrs.get(a.name))
                if cid >= 0:
                    x[i, off + cid] = 1.0
                else:
                    mask[i, off:off + width] = True
                off += width
            else:
                x[i, off] = state.num_stats[a.name].scale(e.attrs.get(a.name))
                off += 1
        bins[i] = state.duration_bin(e.duration_minutes())

    g = np.zeros((1, d_g))
    off = 0
    for a in schema.sequence_attrs:
        if a.kind == CATEGORICAL:
            width = len(state.cat_vocabs[a.name])
            cid = state.cat_id(a.name, trace.seq_attrs.get(a.name))
            if cid >= 0:
                g[0, off + cid] = 1.0
            off += width
        else:
            g[0, off] = state.num_stats[a.name].scale(trace.seq_attrs.get(a.name))
            off += 1

    weights = np.zeros(max(n - 1, 0))
    span = state.gap_max - state.gap_min
    for i in range(n - 1):
        raw = events[i + 1].start - events[i].start
        if raw == 0.0:
            weights[i] = 0.0  # simultaneous events stay exactly 0
        elif span > 0:
            weights[i] = min(1.0, max(0.0, (raw - state.gap_min) / span))
        else:
            weights[i] = 0.0

    if trace.label not in state.label_index():
        raise ValueError(f"label {trace.label!r} was not seen during fitting")

    return EncodedGraph(
        node_features=x,
        edge_index=chain_edge_index(n),
        edge_weights=weights,
        graph_features=g,
        label=state.label_index()[trace.label],
        activity_ids=act_ids,
        duration_bins=bins,
        feature_mask=mask,
    )


# -- train/validation split ------------------------------------------------------


def split_train_validation(items, fraction=0.8, stratified=False, seed=0):
    """Disjoint, exhaustive split; stratified mode preserves per-class
    proportions within one item. A class with a single member goes to train
    with a warning. Output order follows the input order."""
    n = len(items)
    if n < 2:
        raise ValueError("need at least two items to split")
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n)
        n_train = int(round(fraction * n))
        train_idx = sorted(perm[:n_train].tolist())
        val_idx = sorted(perm[n_train:].tolist())
    else:
        by_label = {}
        for i, item in enumerate(items):
            by_label.setdefault(item.label, []).append(i)
        train_idx, val_idx = [], []
        for label, members in by_label.items():
            if len(members) == 1:
                warnings.warn(
                    f"class {label!r} has a single member; assigning it to train",
                    stacklevel=2,
                )
                train_idx.extend(members)
                continue
            perm = rng.permutation(len(members))
            k = int(round(fraction * len(members)))
            train_idx.extend(members[j] for j in perm[:k])
            val_idx.extend(members[j] for j in perm[k:])
        train_idx.sort()
        val_idx.sort()
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


# -- synthetic logs ----------------------------------------------------------------

RULES = ("presence_of_activity", "total_duration_threshold", "graph_attribute_threshold")

_EPOCH_ORIGIN = 1_600_000_000.0


def class_proportions(n_classes, imbalance_ratio):
    """Majority:minority = imbalance_ratio with polynomial decay in between:
    weight_i = (n_classes - i) ** t where t = log(ratio) / log(n_classes)."""
    if imbalance_ratio < 1:
        raise ValueError("imbalance_ratio must be >= 1")
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    t = math.log(imbalance_ratio) / math.log(n_classes)
    weights = np.array([(n_classes - i) ** t for i in range(n_classes)], dtype=np.float64)
    return weights / weights.sum()


def _largest_remainder_counts(proportions, n):
    raw = proportions * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def generate_synthetic_log(n_cases, n_activities=8, n_classes=2, imbalance_ratio=1.0,
                           rule="presence_of_activity", seed=0,
                           min_len=4, max_len=9):
    """Deterministic synthetic event log whose labels follow `rule`.

    presence_of_activity: class c > 0 traces contain marker activity sig<c>.
    total_duration_threshold: total trace duration falls in class band c.
    graph_attribute_threshold: the numeric sequence attribute falls in band c.
    """
    if n_cases < 10:
        raise ValueError("n_cases must be >= 10")
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}")
    if rule == "presence_of_activity" and n_activities < n_classes:
        raise ValueError("presence rule needs n_activities >= n_classes")

    counts = _largest_remainder_counts(class_proportions(n_classes, imbalance_ratio), n_cases)
    if counts.min() < 1:
        raise ValueError(
            f"imbalance_ratio {imbalance_ratio} infeasible for {n_cases} cases: "
            f"minority class rounds to zero members"
        )

    rng = np.random.default_rng(seed)
    assignment = np.repeat(np.arange(n_classes), counts)
    rng.shuffle(assignment)

    n_markers = n_classes - 1 if rule == "presence_of_activity" else 0
    base_acts = [f"act{i:02d}" for i in range(n_activities - n_markers)]
    markers = [f"sig{c}" for c in range(1, n_classes)]
    resources = [f"res{i}" for i in range(4)]
    details = [f"det{i}" for i in range(5)]
    channels = [f"ch{i}" for i in range(3)]

    schema = LogSchema(
        case_id_column="case",
        activity_column="activity",
        start_time_column="start",
        complete_time_column="complete",
        label_column="outcome",
        universal_event_attrs=[AttrSpec("resource", CATEGORICAL), AttrSpec("amount", NUMERICAL)],
        event_specific_attrs=[AttrSpec("detail", CATEGORICAL), AttrSpec("service_min", NUMERICAL)],
        sequence_attrs=[AttrSpec("channel", CATEGORICAL), AttrSpec("priority", NUMERICAL)],
        timestamp_format="epoch",
    )

    traces = []
    for case_i, cls in enumerate(assignment):
        length = int(rng.integers(min_len, max_len + 1))
        acts = [base_acts[int(rng.integers(len(base_acts)))] for _ in range(length)]
        if rule == "presence_of_activity" and cls > 0:
            acts[int(rng.integers(length))] = markers[cls - 1]

        if rule == "total_duration_threshold":
            lo = 30.0 * (3.0 ** cls)
            total = float(rng.uniform(lo, 1.5 * lo))
            parts = rng.uniform(0.2, 1.0, size=length)
            durations = (parts / parts.sum()) * total
        else:
            durations = rng.uniform(1.0, 119.0, size=length)
            zero = rng.random(length) < 0.05
            durations = np.where(zero, 0.0, durations)

        if rule == "graph_attribute_threshold":
            priority = float(rng.uniform(10.0 * cls + 2.0, 10.0 * cls + 7.0))
        else:
            priority = float(rng.uniform(0.0, 40.0))

        start = _EPOCH_ORIGIN + case_i * 86_400.0
        events = []
        for j in range(length):
            dur = float(durations[j]) * 60.0  # minutes -> seconds
            amount = None if rng.random() < 0.02 else float(rng.uniform(10.0, 500.0))
            detail = None if rng.random() < 0.02 else details[int(rng.integers(len(details)))]
            events.append(Event(
                activity=acts[j],
                start=start,
                complete=start + dur,
                attrs={
                    "resource": resources[int(rng.integers(len(resources)))],
                    "amount": amount,
                    "detail": detail,
                    "service_min": float(durations[j]),
                },
            ))
            start += dur
        traces.append(Trace(
            case_id=f"case{case_i:05d}",
            events=events,
            seq_attrs={"channel": channels[int(rng.integers(len(channels)))], "priority": priority},
            label=f"class{cls}",
        ))
    return traces, schema


def write_log_csv(traces, schema, path):
    """Write traces back to a schema-shaped CSV (used by the synth command)."""
    fmt = schema.timestamp_format
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ([schema.case_id_column, schema.activity_column, schema.start_time_column,
                   schema.complete_time_column]
                  + [a.name for a in schema.node_attrs()]
                  + [a.name for a in schema.sequence_attrs]
                  + [schema.label_column])
        writer.writerow(header)
        for t in traces:
            for e in t.events:
                row = [t.case_id, e.activity, _format_ts(e.start, fmt), _format_ts(e.complete, fmt)]
                for a in schema.node_attrs():
                    row.append(_format_value(e.attrs.get(a.name)))
                for a in schema.sequence_attrs:
                    row.append(_format_value(t.seq_attrs.get(a.name)))
                row.append(t.label)
                writer.writerow(row)


def _format_ts(value, fmt):
    if fmt == "epoch":
        return repr(float(value))
    return datetime.fromtimestamp(value, tz=timezone.utc).isoformat()


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- encoded dataset container ------------------------------------------------------

DATASET_FORMAT = "hgnn-dataset"
DATASET_VERSION = 1


@dataclass
class EncodedDataset:
    train: list
    val: list
    state: EncoderState
    schema: LogSchema

    @property
    def dims(self):
        d_n, d_g = feature_dims(self.state, self.schema)
        return {
            "d_N": d_n,
            "d_G": d_g,
            "n_bins": self.state.n_bins,
            "n_activities": self.state.n_activities,
            "n_classes": self.state.n_classes,
        }

    def save(self, path):
        doc = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "dims": self.dims,
            "schema": self.schema.to_json_dict(),
            "encoder": self.state.to_json_dict(),
            "train": [g.to_json_dict() for g in self.train],
            "val": [g.to_json_dict() for g in self.val],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != DATASET_FORMAT:
            raise ValueError(f"{path}: not a {DATASET_FORMAT} file")
        if doc.get("version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {doc.get('version')}")
        return cls(
            train=[EncodedGraph.from_json_dict(d) for d in doc["train"]],
            val=[EncodedGraph.from_json_dict(d) for d in doc["val"]],
            state=EncoderState.from_json_dict(doc["encoder"]),
            schema=LogSchema.from_json_dict(doc["schema"]),
        )


def encode_dataset(traces, schema, policy, fraction=0.8, stratified=True, seed=0):
    """Split traces, fit encoders on the training part only, encode both."""
    train_traces, val_traces = split_train_validation(
        traces, fraction=fraction, stratified=stratified, seed=seed
    )
    state = fit_encoders(train_traces, schema, policy)
    train = [encode_trace(t, state, schema) for t in train_traces]
    val = [encode_trace(t, state, schema) for t in val_traces]
    return EncodedDataset(train=train, val=val, state=state, schema=schema)
