"""Renders shallowbayes CSV/JSON outputs into fixed-style PNG figures.

Four figure kinds, one per data shape the CLI emits:

  error-curve       theory sweep CSV (alpha, eps_opt, phase, ...) plus
                    optional per-instance marker CSVs (alpha, eps_test)
                    and an optional threshold JSON for the vertical line
  mi-crossing       theory sweep CSV (alpha, mi); draws the ln 2 guide
  overlap-dynamics  chain trace CSV (step, qW, q1..q5)
  phase-diagram     grid CSV (delta, alpha_sp)

Inputs are the files as written by the CLI: optional `# key: value`
header lines, then a column row, then data rows.  When several inputs
carry a `model_hash` header they must agree, so a theory curve cannot
be silently overlaid with markers from a different model; files without
the header (hand-assembled grids) skip the check.  Rendering is pure:
fixed fonts, fixed dpi, no timestamps, so the same inputs give
byte-identical PNGs.

The y-axis of an error-curve switches to log scale automatically when
the plotted errors span more than two decades (force it with
``logy="on"``/``"off"``).
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass, field

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("error-curve", "mi-crossing", "overlap-dynamics", "phase-diagram")

_REQUIRED = {
    "error-curve": ("alpha", "eps_opt", "phase"),
    "mi-crossing": ("alpha", "mi"),
    "overlap-dynamics": ("step", "qW"),
    "phase-diagram": ("delta", "alpha_sp"),
}

_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "figure.dpi": 100.0,
    "savefig.dpi": 150.0,
    "legend.framealpha": 0.9,
}


class SchemaError(ValueError):
    """Input file does not match the documented schema for the kind."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    theory: tuple
    out: str
    markers: tuple = ()
    alpha_sp: str | None = None
    title: str | None = None
    hlines: tuple = ()       # (label, value) pairs
    logy: str = "auto"       # auto | on | off

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {', '.join(KINDS)}")
        if not self.theory:
            raise SchemaError("at least one input file is required")
        if self.logy not in ("auto", "on", "off"):
            raise SchemaError("logy must be auto, on, or off")


@dataclass
class Table:
    path: str
    meta: dict
    columns: dict = field(default_factory=dict)

    def require(self, names):
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(
                f"{self.path}: missing column(s) {', '.join(missing)}; "
                f"found {', '.join(self.columns) or 'none'}")

    def finite(self, name):
        col = self.columns[name]
        return col[np.isfinite(col)]


def read_table(path) -> Table:
    """One CLI CSV: skip '#' metadata (kept), parse named float columns."""
    meta = {}
    names = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            if names is None:
                names = [c.strip() for c in line.split(",")]
                continue
            rows.append(line.split(","))
    if names is None:
        raise SchemaError(f"{path}: no column row found")
    columns = {}
    for j, name in enumerate(names):
        vals = []
        for row in rows:
            if j >= len(row):
                raise SchemaError(f"{path}: row with {len(row)} fields "
                                  f"under {len(names)} columns")
            try:
                vals.append(float(row[j]))
            except ValueError:
                vals.append(math.nan)
        columns[name] = np.asarray(vals, dtype=float)
    return Table(path=path, meta=meta, columns=columns)


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(report, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return report


def _check_model_hashes(sources):
    """All inputs that declare a model_hash must declare the same one."""
    seen = {}
    for path, meta in sources:
        h = meta.get("model_hash")
        if h:
            seen.setdefault(h, path)
    if len(seen) > 1:
        listing = "; ".join(f"{p} has {h}" for h, p in sorted(seen.items()))
        raise SchemaError(f"model_hash mismatch across inputs: {listing}")


def _decades(values) -> float:
    pos = values[values > 0]
    if pos.size < 2:
        return 0.0
    return math.log10(float(pos.max()) / float(pos.min()))


def _marker_stats(table):
    """Mean and standard error of the finite marker values per alpha."""
    table.require(("alpha",))
    value_col = next((c for c in ("eps_test", "eps", "value")
                      if c in table.columns), None)
    if value_col is None:
        raise SchemaError(f"{table.path}: marker file needs an eps_test, "
                          "eps, or value column")
    alpha = table.columns["alpha"]
    values = table.columns[value_col]
    keep = np.isfinite(alpha) & np.isfinite(values)
    alpha, values = alpha[keep], values[keep]
    stats = []
    for a in np.unique(alpha):
        group = values[alpha == a]
        err = float(group.std(ddof=1) / math.sqrt(group.size)) \
            if group.size > 1 else 0.0
        stats.append((float(a), float(group.mean()), err))
    return stats


_PHASE_STYLE = {
    "universal": dict(color="#1f77b4", ls="-"),
    "specialisation": dict(color="#d62728", ls="-"),
}
_FALLBACK_STYLE = dict(color="#7f7f7f", ls="--")


def _read_sweep(path):
    """Sweep CSV with the string-valued phase column preserved."""
    table = read_table(path)
    phases = []
    with open(path, "r", encoding="utf-8") as fh:
        names = None
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if names is None:
                names = [c.strip() for c in line.split(",")]
                continue
            row = line.split(",")
            phases.append(row[names.index("phase")]
                          if "phase" in names else "")
    table.phase_raw = phases
    return table


def _segments(alpha, phases):
    """Consecutive runs of equal phase, as (phase, slice) pairs."""
    out = []
    start = 0
    for i in range(1, len(phases) + 1):
        if i == len(phases) or phases[i] != phases[start]:
            out.append((phases[start], slice(start, i)))
            start = i
    return out


def _draw_error_curve(spec, ax):
    used_logy = False
    eps_all = []
    sources = []
    for path in spec.theory:
        table = _read_sweep(path)
        table.require(_REQUIRED["error-curve"])
        sources.append((path, table.meta))
        alpha = table.columns["alpha"]
        eps = table.columns["eps_opt"]
        order = np.argsort(alpha, kind="stable")
        alpha, eps = alpha[order], eps[order]
        phases = [table.phase_raw[i] for i in order]
        eps_all.append(eps[np.isfinite(eps)])
        seen = set()
        for phase, sl in _segments(alpha, phases):
            style = _PHASE_STYLE.get(phase, _FALLBACK_STYLE)
            label = phase if phase not in seen else None
            seen.add(phase)
            # extend each segment to touch the next so the curve is not
            # broken at the phase change
            stop = min(sl.stop + 1, len(alpha))
            ax.plot(alpha[sl.start:stop], eps[sl.start:stop],
                    label=label, **style)
    for path in spec.markers:
        table = read_table(path)
        sources.append((path, table.meta))
        stats = _marker_stats(table)
        if not stats:
            continue
        a, m, e = zip(*stats)
        ax.errorbar(a, m, yerr=e, fmt="o", ms=5, color="#2ca02c",
                    capsize=3, label="instances", zorder=5)
        eps_all.append(np.asarray(m))
    if spec.alpha_sp:
        report = read_report(spec.alpha_sp)
        sources.append((spec.alpha_sp, report))
        value = report.get("alpha_sp")
        if value is not None:
            ax.axvline(float(value), color="0.4", ls=":",
                       label=f"threshold {float(value):.3g}")
    _check_model_hashes(sources)
    flat = np.concatenate(eps_all) if eps_all else np.array([])
    if spec.logy == "on" or (spec.logy == "auto" and _decades(flat) > 2.0):
        ax.set_yscale("log")
        used_logy = True
    ax.set_xlabel("samples per parameter-squared")
    ax.set_ylabel("generalisation error")
    return used_logy


def _draw_mi_crossing(spec, ax):
    sources = []
    for path in spec.theory:
        table = read_table(path)
        table.require(_REQUIRED["mi-crossing"])
        sources.append((path, table.meta))
        alpha = table.columns["alpha"]
        mi = table.columns["mi"]
        order = np.argsort(alpha, kind="stable")
        ax.plot(alpha[order], mi[order], color="#1f77b4",
                label="mutual information")
    _check_model_hashes(sources)
    ax.axhline(math.log(2.0), color="0.4", ls="--", label="ln 2")
    ax.set_xlabel("samples per parameter-squared")
    ax.set_ylabel("nats per weight")


_TRACE_COLORS = {"qW": "#000000", "q1": "#9467bd", "q2": "#1f77b4",
                 "q3": "#2ca02c", "q4": "#ff7f0e", "q5": "#d62728"}


def _draw_overlap_dynamics(spec, ax):
    sources = []
    for path in spec.theory:
        table = read_table(path)
        table.require(_REQUIRED["overlap-dynamics"])
        sources.append((path, table.meta))
        step = table.columns["step"]
        for name in ("qW", "q1", "q2", "q3", "q4", "q5"):
            if name not in table.columns:
                continue
            col = table.columns[name]
            keep = np.isfinite(col)
            if not keep.any():
                continue
            ax.plot(step[keep], col[keep], lw=1.2,
                    color=_TRACE_COLORS.get(name), label=name)
    _check_model_hashes(sources)
    ax.set_xlabel("sweep")
    ax.set_ylabel("overlap")
    ax.set_ylim(-0.15, 1.05)


def _draw_phase_diagram(spec, ax):
    sources = []
    for path in spec.theory:
        table = read_table(path)
        table.require(_REQUIRED["phase-diagram"])
        sources.append((path, table.meta))
        delta = table.columns["delta"]
        asp = table.columns["alpha_sp"]
        keep = np.isfinite(delta) & np.isfinite(asp)
        delta, asp = delta[keep], asp[keep]
        order = np.argsort(delta, kind="stable")
        delta, asp = delta[order], asp[order]
        ax.plot(delta, asp, color="#d62728", marker="o", ms=4)
        if delta.size:
            mid = delta.size // 2
            ax.annotate("aligned", (delta[mid], asp[mid]),
                        xytext=(0, 18), textcoords="offset points",
                        ha="center")
            ax.annotate("universal", (delta[mid], asp[mid]),
                        xytext=(0, -24), textcoords="offset points",
                        ha="center")
        if _decades(delta) > 2.0:
            ax.set_xscale("log")
    _check_model_hashes(sources)
    ax.set_xlabel("label noise")
    ax.set_ylabel("alignment threshold")


_DRAWERS = {
    "error-curve": _draw_error_curve,
    "mi-crossing": _draw_mi_crossing,
    "overlap-dynamics": _draw_overlap_dynamics,
    "phase-diagram": _draw_phase_diagram,
}


def render(spec: FigureSpec) -> str:
    """Draw the figure and write it to ``spec.out``; returns the path."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        try:
            _DRAWERS[spec.kind](spec, ax)
            for label, value in spec.hlines:
                ax.axhline(value, color="0.5", ls="--", lw=1.0, label=label)
            if spec.title:
                ax.set_title(spec.title)
            handles, _ = ax.get_legend_handles_labels()
            if handles:
                ax.legend(loc="best")
            fig.tight_layout()
            fig.savefig(spec.out, format="png",
                        metadata={"Software": "sbfigures"})
        finally:
            plt.close(fig)
    return spec.out


def _parse_hline(raw):
    label, sep, value = raw.partition("=")
    if not sep:
        raise SchemaError(f"--hline wants label=value, got {raw!r}")
    try:
        return label, float(value)
    except ValueError as exc:
        raise SchemaError(f"--hline value in {raw!r} is not a number") from exc


def build_parser():
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render shallowbayes CSV/JSON outputs as PNG figures.")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--theory", action="append", default=[],
                        help="input CSV (repeatable)")
    parser.add_argument("--markers", action="append", default=[],
                        help="per-instance marker CSV (repeatable)")
    parser.add_argument("--alpha-sp", default=None,
                        help="threshold JSON for the vertical line")
    parser.add_argument("--out", required=True)
    parser.add_argument("--title", default=None)
    parser.add_argument("--hline", action="append", default=[],
                        metavar="LABEL=VALUE")
    parser.add_argument("--logy", choices=("auto", "on", "off"),
                        default="auto")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, theory=tuple(args.theory),
                          markers=tuple(args.markers),
                          alpha_sp=args.alpha_sp, out=args.out,
                          title=args.title,
                          hlines=tuple(_parse_hline(h) for h in args.hline),
                          logy=args.logy)
        render(spec)
    except (SchemaError, OSError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
