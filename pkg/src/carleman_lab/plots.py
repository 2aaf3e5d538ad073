"""SVG line plots with their data embedded as an XML comment.

Output is deterministic: no creation date and a fixed id salt.
"""
from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "carleman-lab"
    fig, ax = plt.subplots(figsize=(5, 3.6))
    return plt, fig, ax


def _data_comment(columns: dict[str, Sequence[float]]) -> str:
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    lines = [",".join(names)] + [",".join(repr(float(v)) for v in r) for r in rows]
    body = "\n".join(lines).replace("--", "- -")
    return f"<!-- data\n{body}\n-->\n"


def _save(plt, fig, path: Path, columns: dict) -> Path:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    svg = buf.getvalue()
    # keep the XML declaration first, then the data table
    head, sep, rest = svg.partition("?>\n")
    text = head + sep + _data_comment(columns) + rest if sep else _data_comment(columns) + svg
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def convergence_plot(eps, error, gap, path) -> Path | None:
    if len(eps) < 2:
        log.warning("convergence table has fewer than two points; plot skipped")
        return None
    plt, fig, ax = _figure()
    ax.loglog(eps, error, "o-", label="e(eps)")
    ax.loglog(eps, gap, "s--", label="isotropy gap")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("L1(K) error")
    ax.legend()
    return _save(plt, fig, Path(path), {"epsilon": eps, "error": error, "isotropy_gap": gap})


def midline(field: np.ndarray) -> np.ndarray:
    """1-D cut through the centre of a 1-, 2- or 3-D field along the first axis."""
    idx = (slice(None),) + tuple(s // 2 for s in field.shape[1:])
    return field[idx]


def profile_plot(x, profiles: dict[str, np.ndarray], path, ylabel="rho") -> Path | None:
    if not profiles:
        log.warning("no profiles to plot; skipped")
        return None
    plt, fig, ax = _figure()
    cols = {"x": x}
    for name, y in profiles.items():
        ax.plot(x, y, label=name)
        cols[name] = y
    ax.set_xlabel("x1 (midline)")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    return _save(plt, fig, Path(path), cols)


def series_plot(t, series: dict[str, Sequence[float]], path, ylabel="value") -> Path | None:
    if not series:
        log.warning("no series to plot; skipped")
        return None
    plt, fig, ax = _figure()
    cols = {"t": t}
    for name, y in series.items():
        ax.plot(t, y, "o-", label=name)
        cols[name] = y
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    return _save(plt, fig, Path(path), cols)
