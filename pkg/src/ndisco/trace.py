"""Trace persistence and replay verification.

A trace file is JSON Lines.  The first line is a header holding the schema
tag, engine, topology, seed, run parameters, the discovery report and a
digest of the event lines.  Each following line is one event.  Files ending
in ``.gz`` are gzip-compressed with a fixed timestamp, so they stay
byte-reproducible.

Replay recomputes every reception straight from the recorded actions, frame
boundaries and jam intervals.  This is a deliberately simple second
implementation, separate from the engines.  Replay also checks the stored
digest, and runs the frame-layout checks on asynchronous traces.
"""

from __future__ import annotations

import bisect
import gzip
import hashlib
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

SCHEMA = "ndisco-trace/1"

KINDS = ["start", "frame_begin", "channel_select", "mode_select", "slot_begin",
         "jam_scan", "jam_set", "transmit", "receive", "discover"]
RANK = {k: i for i, k in enumerate(KINDS)}


class TraceError(ValueError):
    pass


def event_key(ev: dict) -> tuple:
    return (ev["t"], ev["node"], RANK[ev["kind"]], ev.get("frame", -1), ev.get("slot", -1), ev.get("from", -1))


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def encode(header: dict, events: list[dict]) -> bytes:
    lines = [dumps(e) for e in events]
    head = dict(header, schema=SCHEMA, events=len(lines), digest=digest(lines))
    return ("\n".join([dumps(head)] + lines) + "\n").encode()


def write_trace(path: str | Path, header: dict, events: list[dict]) -> None:
    data = encode(header, events)
    path = Path(path)
    if path.suffix == ".gz":
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    path.write_bytes(data)


def read_trace(path: str | Path) -> tuple[dict, list[dict], list[str]]:
    """(header, events, raw event lines)."""
    path = Path(path)
    try:
        data = path.read_bytes()
        if path.suffix == ".gz":
            data = gzip.decompress(data)
        lines = data.decode().splitlines()
        header = json.loads(lines[0])
        events = [json.loads(l) for l in lines[1:]]
    except (OSError, IndexError, UnicodeDecodeError, json.JSONDecodeError, gzip.BadGzipFile) as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if header.get("schema") != SCHEMA:
        raise TraceError(f"unknown trace schema {header.get('schema')!r}")
    for i, ev in enumerate(events):
        if not isinstance(ev, dict) or ev.get("kind") not in RANK or "t" not in ev or "node" not in ev:
            raise TraceError(f"malformed event on line {i + 2}")
    return header, events, lines[1:]


@dataclass
class ReplayReport:
    engine: str
    divergences: list[str] = field(default_factory=list)
    checks: dict[str, Any] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences

    def to_dict(self) -> dict:
        return {"engine": self.engine, "ok": self.ok, "divergences": self.divergences,
                "checks": self.checks, "notices": self.notices}


def _links(topology: dict) -> tuple[dict, list]:
    """``(src, dst, channel) -> link index`` plus the link list, from the header topology."""
    by_channel = {}
    links = topology["links"]
    for i, l in enumerate(links):
        for c in l["span"]:
            by_channel[(l["from"], l["to"], c)] = i
    return by_channel, links


def _receptions(events: list[dict]) -> dict[tuple, bool]:
    return {(e["t"], e["node"], e["from"], e["channel"]): bool(e.get("lost")) for e in events
            if e["kind"] == "receive"}


def _compare(report: ReplayReport, expected: set, events: list[dict], by_channel: dict, header: dict) -> None:
    recorded = _receptions(events)
    for key in sorted(expected - set(recorded)):
        report.divergences.append(f"missing reception at t={key[0]}: node {key[1]} from {key[2]} on channel {key[3]}")
    for key in sorted(set(recorded) - expected):
        report.divergences.append(f"unexpected reception at t={key[0]}: node {key[1]} from {key[2]} on channel {key[3]}")
    # discoveries: first non-lost reception per link
    first: dict[int, tuple] = {}
    for (t, r, v, c), lost in sorted(recorded.items()):
        li = by_channel.get((v, r, c))
        if not lost and li is not None and li not in first:
            first[li] = (t, r, v)
    got = {e["link"]: (e["t"], e["node"], e["from"]) for e in events if e["kind"] == "discover"}
    if got != first:
        for li in sorted(set(got) | set(first)):
            if got.get(li) != first.get(li):
                t = (got.get(li) or first.get(li))[0]
                report.divergences.append(f"discovery of link {li} diverges at t={t}: "
                                          f"recorded {got.get(li)}, derived {first.get(li)}")
    rep = header.get("report")
    if rep is not None:
        derived = [None] * len(rep["discovery_abs"])
        for li, (t, _, _) in first.items():
            derived[li] = t
        if derived != rep["discovery_abs"]:
            report.divergences.append("discovery report does not match the re-derived discoveries")
    report.checks["receptions"] = len(recorded)
    report.checks["discoveries"] = len(first)


def _replay_sync(header: dict, events: list[dict], report: ReplayReport) -> None:
    by_channel, _ = _links(header["topology"])
    params = header["params"]
    chan: dict[tuple, int] = {}
    mode: dict[tuple, str] = {}
    jams = []
    for e in events:
        if e["kind"] == "channel_select":
            chan[(e["t"], e["node"])] = e["channel"]
        elif e["kind"] == "mode_select":
            mode[(e["t"], e["node"])] = e["mode"]
        elif e["kind"] == "jam_set" and e["channel"] is not None:
            jams.append((e["channel"], e["tick"], e["until"]))
    tps = params.get("jam_ticks_per_slot") or 1
    per_slot = defaultdict(list)
    for (t, u), c in chan.items():
        per_slot[t].append((u, c, mode.get((t, u))))
    expected = set()
    for t, acts in per_slot.items():
        senders = [(u, c) for u, c, m in acts if m == "T"]
        for r, c, m in acts:
            if m != "L":
                continue
            heard = [v for v, cv in senders if cv == c and (v, r, c) in by_channel]
            if len(heard) != 1:
                continue
            if any(jc == c and min((t + 1) * tps, e) > max(t * tps, s) for jc, s, e in jams):
                continue
            expected.add((t, r, heard[0], c))
    _compare(report, expected, events, by_channel, header)


def frame_table_from_events(events: list[dict], n: int):
    """Per-node FrameSeries rebuilt from frame_begin records."""
    import numpy as np

    from .engine_async import FrameSeries

    starts = defaultdict(list)
    slots = defaultdict(list)
    for e in events:
        if e["kind"] == "frame_begin":
            s = e["slots"]
            starts[e["node"]].append(s[0])
            slots[e["node"]].append(s[1] - s[0])
    return [FrameSeries(np.array(starts[u], dtype=np.int64), np.array(slots[u], dtype=np.int64))
            for u in range(n)]


def _replay_async(header: dict, events: list[dict], report: ReplayReport, layout_checks: bool) -> None:
    by_channel, links = _links(header["topology"])
    n = len(header["topology"]["nodes"])
    horizon = header["params"]["horizon"]
    frames: dict[int, list] = defaultdict(list)  # node -> [(start, end, slots, frame)]
    fchan, fmode = {}, {}
    sends = defaultdict(list)  # node -> [(a, b, channel)]
    jams = []
    for e in events:
        k = e["kind"]
        if k == "frame_begin":
            frames[e["node"]].append((e["t"], e["end"], e["slots"], e["frame"]))
        elif k == "channel_select":
            fchan[(e["node"], e["frame"])] = e["channel"]
        elif k == "mode_select":
            fmode[(e["node"], e["frame"])] = e["mode"]
        elif k == "jam_set" and e["channel"] is not None:
            jams.append((e["channel"], e["t"], e["until"]))
    bounds = {}
    for u, fs in frames.items():
        for st, en, sl, j in fs:
            bounds[(u, j)] = sl
    for e in events:
        if e["kind"] == "transmit":
            sl = bounds[(e["node"], e["frame"])]
            sends[e["node"]].append((sl[e["slot"]], sl[e["slot"] + 1], e["channel"]))
    starts = {u: [f[0] for f in fs] for u, fs in frames.items()}
    expected = set()
    for v, slots in sends.items():
        for a, b, c in slots:
            if b > horizon:
                continue
            if any(jc == c and min(b, e) > max(a, s) for jc, s, e in jams):
                continue
            for u in range(n):
                if u == v or (v, u, c) not in by_channel or u not in frames:
                    continue
                i = bisect.bisect_right(starts[u], a) - 1
                if i < 0:
                    continue
                st, en, _, j = frames[u][i]
                if not (st <= a and b <= en) or fmode.get((u, j)) != "L" or fchan.get((u, j)) != c:
                    continue
                blocked = False
                for w, ws in sends.items():
                    if w in (u, v) or (w, u, c) not in by_channel:
                        continue
                    if any(cw == c and min(b, bw) > max(a, aw) for aw, bw, cw in ws):
                        blocked = True
                        break
                if not blocked:
                    expected.add((b, u, v, c))
    _compare(report, expected, events, by_channel, header)
    if not layout_checks:
        return
    from .analysis import layout as lm

    table = frame_table_from_events(events, n)
    t_s = header["report"]["start_time"] if header.get("report") else 0
    report.checks["overlap_violations"] = len(lm.overlap_violations(table))
    pairs = sorted({(l["from"], l["to"]) for l in links})
    missing = sum(len(lm.aligned_existence_violations(table, v, u, t_s, horizon)) for v, u in pairs)
    report.checks["aligned_existence_violations"] = missing
    bad = 0
    for v, u in pairs:
        seq = lm.extract_admissible_sequence(table, v, u, t_s, horizon)
        if lm.validate_admissible(table, seq.pairs, v, u) or len(seq.pairs) < seq.M // 6:
            bad += 1
    report.checks["admissible_violations"] = bad
    for name in ("overlap_violations", "aligned_existence_violations", "admissible_violations"):
        if report.checks[name]:
            report.divergences.append(f"{name}: {report.checks[name]}")


def replay(header: dict, events: list[dict], lines: list[str] | None = None, layout_checks: bool = True) -> ReplayReport:
    engine = header.get("engine")
    report = ReplayReport(engine=engine)
    if lines is not None:
        if len(lines) != header.get("events") or digest(lines) != header.get("digest"):
            report.divergences.append("event digest mismatch: trace content was altered")
    keys = [event_key(e) for e in events]
    if any(b <= a for a, b in zip(keys, keys[1:])):
        report.divergences.append("events are not in strict (time, node, kind) order")
    if engine == "sync":
        _replay_sync(header, events, report)
        report.notices.append("frame-layout checks apply to asynchronous traces only; skipped")
    elif engine == "async":
        _replay_async(header, events, report, layout_checks)
    else:
        raise TraceError(f"unknown engine {engine!r}")
    return report


def replay_file(path: str | Path, layout_checks: bool = True) -> ReplayReport:
    header, events, lines = read_trace(path)
    return replay(header, events, lines, layout_checks)
