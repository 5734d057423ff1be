"""Results tables shaped like the published comparison tables."""

import csv
import io
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ManifestError

MARKS = {"bold": ("**", "**"), "underline": ("__", "__")}
MISSING = "-"


@dataclass
class ResultsTable:
    caption: str
    columns: list                      # headers of the numeric columns
    rows: list                         # [(label, [cell, ...]), ...]; cell is float or "-"
    emphasis: list = field(default_factory=list)  # [[row, col, mark], ...]
    row_header: str = "Method"
    digits: int = 2

    def __post_init__(self):
        self.rows = [(str(label), [c if c == MISSING else float(c) for c in cells])
                     for label, cells in self.rows]
        self.emphasis = sorted([int(r), int(c), str(m)] for r, c, m in self.emphasis)
        self.validate()

    def validate(self):
        width = len(self.columns)
        for label, cells in self.rows:
            if len(cells) != width:
                raise ConfigError(f"row {label!r} has {len(cells)} cells, expected {width}")
            for c in cells:
                if c != MISSING and not np.isfinite(c):
                    raise ConfigError(f"row {label!r} holds a non-finite cell")
        for r, c, m in self.emphasis:
            if m not in MARKS or not (0 <= r < len(self.rows) and 0 <= c < width):
                raise ConfigError(f"bad emphasis entry {(r, c, m)}")

    def to_json(self):
        return {"caption": self.caption, "columns": list(self.columns), "row_header": self.row_header,
                "rows": [[label, list(cells)] for label, cells in self.rows],
                "emphasis": [list(e) for e in self.emphasis], "digits": self.digits}

    @classmethod
    def from_json(cls, d):
        return cls(caption=d["caption"], columns=d["columns"], rows=[tuple(r) for r in d["rows"]],
                   emphasis=d.get("emphasis", []), row_header=d.get("row_header", "Method"),
                   digits=d.get("digits", 2))

    def __eq__(self, other):
        return isinstance(other, ResultsTable) and self.to_json() == other.to_json()


def _marks_at(t):
    out = {}
    for r, c, m in t.emphasis:
        out.setdefault((r, c), []).append(m)
    return out


def _cell_text(value, marks, digits, exact=False):
    if value == MISSING:
        s = MISSING
    else:
        s = repr(value) if exact else f"{value:.{digits}f}"
    for m in sorted(marks):
        pre, post = MARKS[m]
        s = pre + s + post
    return s


def _parse_cell(s):
    marks = []
    changed = True
    while changed:
        changed = False
        for m, (pre, post) in MARKS.items():
            if len(s) > len(pre) + len(post) and s.startswith(pre) and s.endswith(post):
                s = s[len(pre):-len(post)]
                marks.append(m)
                changed = True
    return (MISSING if s == MISSING else float(s)), marks


def emit_table(t, fmt="text"):
    """Serialize to ``json``, ``csv`` or column-aligned ``text``; returns bytes."""
    if fmt == "json":
        return (json.dumps(t.to_json(), indent=1) + "\n").encode()
    marks = _marks_at(t)
    header = [t.row_header] + list(t.columns)
    body = [[label] + [_cell_text(v, marks.get((i, j), []), t.digits, exact=(fmt == "csv"))
                       for j, v in enumerate(cells)]
            for i, (label, cells) in enumerate(t.rows)]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["#caption", t.caption])
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue().encode()
    if fmt == "text":
        widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]

        def line(r):
            return "  ".join(r[0].ljust(widths[0]) if k == 0 else r[k].rjust(widths[k])
                             for k in range(len(r)))
        rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
        return "\n".join([t.caption, rule, line(header), rule] + [line(r) for r in body] + [rule]).encode() + b"\n"
    raise ConfigError(f"unknown table format {fmt!r}")


def parse_table(data, fmt="text", digits=2):
    """Inverse of :func:`emit_table` (text values come back at printed precision)."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "json":
        return ResultsTable.from_json(json.loads(text))
    if fmt == "csv":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["#caption"]:
            raise ManifestError("csv table lacks its caption row")
        caption, header, body = rows[0][1], rows[1], rows[2:]
    elif fmt == "text":
        lines = text.rstrip("\n").split("\n")
        caption = lines[0]
        header = re.split(r" {2,}", lines[2].strip())
        body = [re.split(r" {2,}", ln.strip()) for ln in lines[4:-1]]
    else:
        raise ConfigError(f"unknown table format {fmt!r}")
    rows, emphasis = [], []
    for i, r in enumerate(body):
        cells = []
        for j, s in enumerate(r[1:]):
            v, ms = _parse_cell(s)
            cells.append(v)
            emphasis += [[i, j, m] for m in ms]
        rows.append((r[0], cells))
    return ResultsTable(caption, header[1:], rows, sorted(emphasis), row_header=header[0], digits=digits)


TWO_AFC_DISTORTIONS = ("Trad.", "CNN", "S.Res", "DeBlur", "Color", "F.Interp")


def two_afc_table(results, caption="2AFC accuracy against human judgments"):
    """``results`` maps method -> {distortion: score, ..., "CLIC": score}.

    Missing entries render as "-"; Avg is the mean of the six distortion
    columns when all six are present. The best value per column is bold.
    """
    columns = list(TWO_AFC_DISTORTIONS) + ["Avg.", "CLIC"]
    rows = []
    for method, res in results.items():
        six = [res.get(k, MISSING) for k in TWO_AFC_DISTORTIONS]
        avg = MISSING if MISSING in six else float(np.mean(six))
        rows.append((method, six + [avg, res.get("CLIC", MISSING)]))
    emphasis = []
    for j in range(len(columns)):
        vals = [(cells[j], i) for i, (_, cells) in enumerate(rows) if cells[j] != MISSING]
        if vals:
            emphasis.append([max(vals)[1], j, "bold"])
    return ResultsTable(caption, columns, rows, sorted(emphasis))


def bd_table(entries, anchor_label, caption=None):
    """``entries`` maps label -> {"bd_rate", "bd_psnr", optional "top1", "top5"}."""
    columns = ["BD Rate (%)", "BD PSNR (dB)", "Top-1 Acc.", "Top-5 Acc."]
    rows = [(label, [e.get("bd_rate", MISSING), e.get("bd_psnr", MISSING),
                     e.get("top1", MISSING), e.get("top5", MISSING)]) for label, e in entries.items()]
    return ResultsTable(caption or f"Coding efficiency compared to {anchor_label}", columns, rows,
                        row_header="Comparison")
