"""Interaction-log parsing, feature vocabulary, leave-last-out splitting,
negative sampling, and the on-disk dataset bundle.

Global feature indices are contiguous and partitioned by field in a fixed
order: user ids, item ids, user attribute fields, item attribute fields,
context fields.  Users therefore occupy [0, M) and items [M, M+N), which is
the node layout every graph builds on.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

_INST_MAGIC = b"DGIN"
_Y_MAGIC = b"DGYB"
_FORMAT_VERSION = 1


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass
class ContextField:
    name: str
    column: str | int
    kind: str = "categorical"  # or "timestamp"
    bucket_seconds: int = 3600
    n_buckets: int = 24


@dataclass
class Schema:
    """Column layout of a delimited interaction log (header row required)."""

    user: str | int
    item: str | int
    timestamp: str | int
    user_attrs: list[tuple[str, str | int]] = field(default_factory=list)
    item_attrs: list[tuple[str, str | int]] = field(default_factory=list)
    context: list[ContextField] = field(default_factory=list)
    delimiter: str = ","

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        try:
            return cls(
                user=obj["user"],
                item=obj["item"],
                timestamp=obj["timestamp"],
                user_attrs=[(a["name"], a["column"]) for a in obj.get("user_attrs", [])],
                item_attrs=[(a["name"], a["column"]) for a in obj.get("item_attrs", [])],
                context=[
                    ContextField(
                        c["name"],
                        c["column"],
                        c.get("type", "categorical"),
                        c.get("bucket_seconds", 3600),
                        c.get("n_buckets", 24),
                    )
                    for c in obj.get("context", [])
                ],
                delimiter=obj.get("delimiter", ","),
            )
        except KeyError as e:
            raise DataError(f"schema missing required key: {e}") from None

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "item": self.item,
            "timestamp": self.timestamp,
            "user_attrs": [{"name": n, "column": c} for n, c in self.user_attrs],
            "item_attrs": [{"name": n, "column": c} for n, c in self.item_attrs],
            "context": [
                {
                    "name": c.name,
                    "column": c.column,
                    "type": c.kind,
                    "bucket_seconds": c.bucket_seconds,
                    "n_buckets": c.n_buckets,
                }
                for c in self.context
            ],
            "delimiter": self.delimiter,
        }


# ---------------------------------------------------------------------------
# Vocabulary / instances / dataset
# ---------------------------------------------------------------------------


@dataclass
class FieldSpec:
    name: str
    start: int
    end: int

    @property
    def size(self) -> int:
        return self.end - self.start


@dataclass
class FeatureVocabulary:
    """Ordered field descriptors plus token <-> global index maps.

    ``frequency`` counts occurrences in training-split positive instances
    only (behavior slots excluded); it is zero until a split exists.
    """

    fields: list[FieldSpec]
    tokens: dict[str, list[str]]
    frequency: np.ndarray

    def __post_init__(self):
        self._maps = {
            f.name: {t: f.start + i for i, t in enumerate(self.tokens[f.name])}
            for f in self.fields
        }

    @property
    def n_features(self) -> int:
        return self.fields[-1].end

    @property
    def n_users(self) -> int:
        return self.range_of("user").size

    @property
    def n_items(self) -> int:
        return self.range_of("item").size

    def range_of(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def index_of(self, name: str, token: str) -> int:
        return self._maps[name][token]

    def field_of(self, index: int) -> FieldSpec:
        for f in self.fields:
            if f.start <= index < f.end:
                return f
        raise IndexError(index)

    def attr_field_names(self, side: str) -> list[str]:
        prefix = "ua:" if side == "user" else "ia:"
        return [f.name for f in self.fields if f.name.startswith(prefix)]

    def context_field_names(self) -> list[str]:
        return [f.name for f in self.fields if f.name.startswith("ctx:")]


@dataclass(frozen=True)
class Instance:
    """One encoded training/eval example; all indices are global."""

    user: int
    item: int
    user_attrs: tuple[int, ...]
    item_attrs: tuple[int, ...]
    behaviors: tuple[int, ...]  # global item indices, timestamp order
    context: tuple[int, ...]
    label: int


@dataclass
class Dataset:
    vocabulary: FeatureVocabulary
    # per user: (timestamp, local item, context global indices), ts-sorted
    user_events: list[list[tuple[float, int, tuple[int, ...]]]]
    user_attr_assign: list[tuple[int, ...]]  # per user, global indices
    item_attr_assign: list[tuple[int, ...]]  # per item, global indices
    train: list[Instance] = field(default_factory=list)
    val: list[Instance] = field(default_factory=list)
    test: list[Instance] = field(default_factory=list)
    # train-window item lists (local ids, event order) per user; empty for
    # dropped users.  Y is derived from these.
    user_items_train: list[np.ndarray] = field(default_factory=list)
    rejected_rows: int = 0
    parsed_rows: int = 0
    dropped_users: int = 0

    @property
    def n_users(self) -> int:
        return self.vocabulary.n_users

    @property
    def n_items(self) -> int:
        return self.vocabulary.n_items

    def y_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Binary interaction matrix over the train window as CSR arrays
        (row offsets, sorted column indices); duplicates collapsed."""
        rows = [
            np.unique(items).astype(np.int32) for items in self.user_items_train
        ]
        lens = np.array([r.shape[0] for r in rows], dtype=np.int64)
        offsets = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        cols = (
            np.concatenate(rows) if rows else np.empty(0, dtype=np.int32)
        )
        return offsets, cols


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _resolve_column(ref: str | int, header: list[str], what: str) -> int:
    if isinstance(ref, int):
        if not 0 <= ref < len(header):
            raise DataError(f"{what}: column index {ref} out of range")
        return ref
    try:
        return header.index(ref)
    except ValueError:
        raise DataError(f"{what}: column {ref!r} not in header {header}") from None


def _context_token(raw: str, cf: ContextField) -> str:
    if cf.kind == "timestamp":
        bucket = (int(float(raw)) // cf.bucket_seconds) % cf.n_buckets
        return str(bucket)
    return raw


def parse_interactions(log_path, schema: Schema) -> Dataset:
    """Parse a delimited log into an unsplit Dataset.

    Malformed rows (missing user/item/timestamp, wrong width, bad
    timestamp) are rejected and counted; more than 50% rejected rows or an
    empty file is a hard error.  Exact (user, item, timestamp) duplicates
    collapse to one behavior event.
    """
    path = Path(log_path)
    try:
        fh = path.open(newline="")
    except OSError as e:
        raise DataError(f"cannot read log {path}: {e}") from e
    with fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no usable rows: empty log") from None
        u_col = _resolve_column(schema.user, header, "user")
        v_col = _resolve_column(schema.item, header, "item")
        t_col = _resolve_column(schema.timestamp, header, "timestamp")
        ua_cols = [
            (n, _resolve_column(c, header, f"user_attr {n}"))
            for n, c in schema.user_attrs
        ]
        ia_cols = [
            (n, _resolve_column(c, header, f"item_attr {n}"))
            for n, c in schema.item_attrs
        ]
        cx_cols = [
            (cf, _resolve_column(cf.column, header, f"context {cf.name}"))
            for cf in schema.context
        ]
        width = len(header)

        rows = []
        rejected = 0
        for row in reader:
            if len(row) != width:
                rejected += 1
                continue
            u, v, ts = row[u_col].strip(), row[v_col].strip(), row[t_col].strip()
            if not u or not v or not ts:
                rejected += 1
                continue
            try:
                tsv = float(ts)
            except ValueError:
                rejected += 1
                continue
            try:
                ctx = tuple(_context_token(row[c].strip(), cf) for cf, c in cx_cols)
            except ValueError:
                rejected += 1
                continue
            ua = tuple(row[c].strip() for _, c in ua_cols)
            ia = tuple(row[c].strip() for _, c in ia_cols)
            rows.append((u, v, tsv, ua, ia, ctx))

    total = len(rows) + rejected
    if total == 0 or not rows:
        raise DataError("no usable rows")
    if rejected > total / 2:
        raise DataError(
            f"{rejected}/{total} rows rejected (>50%); refusing to continue"
        )
    if rejected:
        log.warning("rejected %d/%d malformed rows", rejected, total)

    # vocabulary: sorted token order per field for determinism
    user_tokens = sorted({r[0] for r in rows})
    item_tokens = sorted({r[1] for r in rows})
    ua_tokens = [
        sorted({r[3][i] for r in rows if r[3][i]}) for i in range(len(ua_cols))
    ]
    ia_tokens = [
        sorted({r[4][i] for r in rows if r[4][i]}) for i in range(len(ia_cols))
    ]
    cx_tokens = [
        sorted({r[5][i] for r in rows}) for i in range(len(cx_cols))
    ]

    fields: list[FieldSpec] = []
    tokens: dict[str, list[str]] = {}
    cursor = 0

    def add_field(name: str, toks: list[str]):
        nonlocal cursor
        fields.append(FieldSpec(name, cursor, cursor + len(toks)))
        tokens[name] = toks
        cursor += len(toks)

    add_field("user", user_tokens)
    add_field("item", item_tokens)
    for (name, _), toks in zip(ua_cols, ua_tokens):
        add_field(f"ua:{name}", toks)
    for (name, _), toks in zip(ia_cols, ia_tokens):
        add_field(f"ia:{name}", toks)
    for (cf, _), toks in zip(cx_cols, cx_tokens):
        add_field(f"ctx:{cf.name}", toks)

    vocab = FeatureVocabulary(fields, tokens, np.zeros(cursor, dtype=np.int64))
    m, n = vocab.n_users, vocab.n_items

    user_attr_assign: list[tuple[int, ...] | None] = [None] * m
    item_attr_assign: list[tuple[int, ...] | None] = [None] * n
    events: list[dict] = [dict() for _ in range(m)]  # (item, ts) -> ctx
    order: list[dict] = [dict() for _ in range(m)]  # arrival index for ties

    for pos, (u, v, ts, ua, ia, cx) in enumerate(rows):
        ui = vocab.index_of("user", u)
        vi = vocab.index_of("item", v) - vocab.range_of("item").start
        if user_attr_assign[ui] is None:
            user_attr_assign[ui] = tuple(
                vocab.index_of(f"ua:{name}", tok)
                for (name, _), tok in zip(ua_cols, ua)
                if tok
            )
        if item_attr_assign[vi] is None:
            item_attr_assign[vi] = tuple(
                vocab.index_of(f"ia:{name}", tok)
                for (name, _), tok in zip(ia_cols, ia)
                if tok
            )
        key = (vi, ts)
        if key not in events[ui]:  # duplicate (user,item,ts) collapses
            events[ui][key] = tuple(
                vocab.index_of(f"ctx:{cf.name}", tok)
                for (cf, _), tok in zip(cx_cols, cx)
            )
            order[ui][key] = pos

    user_events = []
    for ui in range(m):
        evs = sorted(events[ui].items(), key=lambda kv: (kv[0][1], order[ui][kv[0]]))
        user_events.append([(ts, vi, ctx) for (vi, ts), ctx in evs])

    return Dataset(
        vocabulary=vocab,
        user_events=user_events,
        user_attr_assign=[a or () for a in user_attr_assign],
        item_attr_assign=[a or () for a in item_attr_assign],
        user_items_train=[np.empty(0, dtype=np.int32) for _ in range(m)],
        rejected_rows=rejected,
        parsed_rows=total,
    )


# ---------------------------------------------------------------------------
# Splitting and negatives
# ---------------------------------------------------------------------------


def _dedup_by_item(events):
    """Earliest event per item, order preserved.  The split view works on
    distinct items so no target can reappear inside its behavior prefix."""
    seen = set()
    out = []
    for ev in events:
        if ev[1] not in seen:
            seen.add(ev[1])
            out.append(ev)
    return out


def split_leave_last(dataset: Dataset) -> Dataset:
    """Leave-last-out split: per user, targets T-2 / T-1 / T with behavior
    prefixes [1..T-3] / [1..T-2] / [1..T-1].

    Users with fewer than 4 distinct items are dropped (and counted).  The
    interaction window for Y and graph construction is [1..T-2], i.e. the
    train behaviors plus the train target.  Pure function of the dataset.
    """
    vocab = dataset.vocabulary
    item_start = vocab.range_of("item").start
    train, val, test = [], [], []
    user_items_train = [np.empty(0, dtype=np.int32)] * vocab.n_users
    dropped = 0
    freq = np.zeros(vocab.n_features, dtype=np.int64)

    for ui in range(vocab.n_users):
        events = _dedup_by_item(dataset.user_events[ui])
        if len(events) < 4:
            dropped += 1
            if dataset.user_events[ui]:
                log.debug("user %d dropped (T=%d < 4)", ui, len(events))
            continue
        locals_ = [vi for _, vi, _ in events]
        ctxs = [ctx for _, _, ctx in events]
        tt = len(events)

        def make(prefix_len: int, target_pos: int) -> Instance:
            return Instance(
                user=ui,
                item=item_start + locals_[target_pos],
                user_attrs=dataset.user_attr_assign[ui],
                item_attrs=dataset.item_attr_assign[locals_[target_pos]],
                behaviors=tuple(item_start + v for v in locals_[:prefix_len]),
                context=ctxs[target_pos],
                label=1,
            )

        train.append(make(tt - 3, tt - 3))
        val.append(make(tt - 2, tt - 2))
        test.append(make(tt - 1, tt - 1))
        user_items_train[ui] = np.array(locals_[: tt - 2], dtype=np.int32)

    if not train:
        raise DataError("all users dropped: no user has 4+ distinct items")

    for inst in train:
        freq[inst.user] += 1
        freq[inst.item] += 1
        for i in inst.user_attrs + inst.item_attrs + inst.context:
            freq[i] += 1

    vocab2 = FeatureVocabulary(vocab.fields, vocab.tokens, freq)
    return replace(
        dataset,
        vocabulary=vocab2,
        train=train,
        val=val,
        test=test,
        user_items_train=user_items_train,
        dropped_users=dropped,
    )


def sample_negatives(
    positives: list[Instance],
    n_neg: int,
    rng_seed: int,
    dataset: Dataset,
) -> list[Instance]:
    """Emit each positive followed by ``n_neg`` label-0 copies whose target
    item the user never clicked in any window.

    Sampling is uniform without replacement per positive; when a user has
    fewer never-clicked items than ``n_neg`` the remainder is drawn with
    replacement (warning emitted).  Deterministic under a fixed seed.
    """
    if n_neg < 1:
        raise DataError("n_neg must be >= 1")
    vocab = dataset.vocabulary
    item_start = vocab.range_of("item").start
    n_items = vocab.n_items
    rng = np.random.default_rng(rng_seed)

    clicked = {}
    out = []
    for inst in positives:
        if inst.user not in clicked:
            clicked[inst.user] = {vi for _, vi, _ in dataset.user_events[inst.user]}
        pool = np.setdiff1d(
            np.arange(n_items, dtype=np.int64),
            np.fromiter(clicked[inst.user], dtype=np.int64, count=len(clicked[inst.user])),
            assume_unique=False,
        )
        out.append(inst)
        if pool.shape[0] == 0:
            log.warning(
                "user %d clicked every item; no negatives emitted", inst.user
            )
            continue
        if pool.shape[0] >= n_neg:
            picks = pool[rng.choice(pool.shape[0], size=n_neg, replace=False)]
        else:
            log.warning(
                "user %d has only %d never-clicked items (< %d); "
                "sampling with replacement",
                inst.user,
                pool.shape[0],
                n_neg,
            )
            picks = pool[rng.choice(pool.shape[0], size=n_neg, replace=True)]
        for vl in picks:
            out.append(
                replace(
                    inst,
                    item=item_start + int(vl),
                    item_attrs=dataset.item_attr_assign[int(vl)],
                    label=0,
                )
            )
    return out


def train_window_sequences(dataset: Dataset) -> list[np.ndarray]:
    """Ordered train-window item sequences (local ids), one per retained
    user: the train behaviors followed by the train target.

    Derived from train positives so it works for loaded bundles too (Y.bin
    keeps only the unordered item sets).
    """
    item_start = dataset.vocabulary.range_of("item").start
    return [
        np.array(
            [v - item_start for v in inst.behaviors + (inst.item,)],
            dtype=np.int32,
        )
        for inst in dataset.train
        if inst.label == 1
    ]


# ---------------------------------------------------------------------------
# Bundle I/O
# ---------------------------------------------------------------------------


def _write_instances(path, instances: list[Instance]) -> None:
    with open(path, "wb") as f:
        f.write(_INST_MAGIC)
        f.write(struct.pack("<IQ", _FORMAT_VERSION, len(instances)))
        for inst in instances:
            slots = [
                (inst.user,),
                (inst.item,),
                inst.user_attrs,
                inst.item_attrs,
                inst.behaviors,
                inst.context,
            ]
            for slot in slots:
                f.write(struct.pack("<I", len(slot)))
                if slot:
                    f.write(np.asarray(slot, dtype="<u4").tobytes())
            f.write(struct.pack("<I", inst.label))


def _read_instances(path) -> list[Instance]:
    with open(path, "rb") as f:
        if f.read(4) != _INST_MAGIC:
            raise DataError(f"not an instance file: {path}")
        version, count = struct.unpack("<IQ", f.read(12))
        if version != _FORMAT_VERSION:
            raise DataError(f"unsupported instance format version {version}")
        out = []
        for _ in range(count):
            slots = []
            for _ in range(6):
                (ln,) = struct.unpack("<I", f.read(4))
                vals = np.frombuffer(f.read(4 * ln), dtype="<u4")
                slots.append(tuple(int(x) for x in vals))
            (label,) = struct.unpack("<I", f.read(4))
            out.append(
                Instance(
                    user=slots[0][0],
                    item=slots[1][0],
                    user_attrs=slots[2],
                    item_attrs=slots[3],
                    behaviors=slots[4],
                    context=slots[5],
                    label=int(label),
                )
            )
    return out


def save_bundle(dataset: Dataset, out_dir) -> None:
    """Write vocab.json, assignments.json, instances.*.bin and Y.bin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = dataset.vocabulary
    vocab_doc = {
        "fields": [
            {"name": f.name, "start": f.start, "end": f.end} for f in vocab.fields
        ],
        "tokens": vocab.tokens,
        "frequency": vocab.frequency.tolist(),
        "stats": {
            "rejected_rows": dataset.rejected_rows,
            "parsed_rows": dataset.parsed_rows,
            "dropped_users": dataset.dropped_users,
        },
    }
    (out / "vocab.json").write_text(json.dumps(vocab_doc, sort_keys=True))
    assign_doc = {
        "user": [list(a) for a in dataset.user_attr_assign],
        "item": [list(a) for a in dataset.item_attr_assign],
    }
    (out / "assignments.json").write_text(json.dumps(assign_doc))
    for split, insts in (
        ("train", dataset.train),
        ("val", dataset.val),
        ("test", dataset.test),
    ):
        _write_instances(out / f"instances.{split}.bin", insts)
    offsets, cols = dataset.y_csr()
    with open(out / "Y.bin", "wb") as f:
        f.write(_Y_MAGIC)
        f.write(
            struct.pack(
                "<IQQQ",
                _FORMAT_VERSION,
                dataset.n_users,
                dataset.n_items,
                cols.shape[0],
            )
        )
        f.write(offsets.astype("<u8").tobytes())
        f.write(cols.astype("<u4").tobytes())


def load_bundle(bundle_dir) -> Dataset:
    """Reload a bundle written by :func:`save_bundle`.

    Raw per-user event lists are not stored; the reloaded dataset carries
    the split instances, assignments, and the train-window item lists.
    """
    bdir = Path(bundle_dir)
    vocab_doc = json.loads((bdir / "vocab.json").read_text())
    fields = [
        FieldSpec(f["name"], f["start"], f["end"]) for f in vocab_doc["fields"]
    ]
    vocab = FeatureVocabulary(
        fields,
        vocab_doc["tokens"],
        np.asarray(vocab_doc["frequency"], dtype=np.int64),
    )
    assign_doc = json.loads((bdir / "assignments.json").read_text())
    splits = {
        s: _read_instances(bdir / f"instances.{s}.bin")
        for s in ("train", "val", "test")
    }
    with open(bdir / "Y.bin", "rb") as f:
        if f.read(4) != _Y_MAGIC:
            raise DataError("not a Y file")
        version, m, n, nnz = struct.unpack("<IQQQ", f.read(28))
        offsets = np.frombuffer(f.read(8 * (m + 1)), dtype="<u8").astype(np.int64)
        cols = np.frombuffer(f.read(4 * nnz), dtype="<u4").astype(np.int32)
    user_items = [
        cols[offsets[u] : offsets[u + 1]].copy() for u in range(m)
    ]
    return Dataset(
        vocabulary=vocab,
        user_events=[[] for _ in range(m)],
        user_attr_assign=[tuple(a) for a in assign_doc["user"]],
        item_attr_assign=[tuple(a) for a in assign_doc["item"]],
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        user_items_train=user_items,
        rejected_rows=vocab_doc["stats"]["rejected_rows"],
        parsed_rows=vocab_doc["stats"]["parsed_rows"],
        dropped_users=vocab_doc["stats"]["dropped_users"],
    )
