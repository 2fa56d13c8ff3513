"""Output helpers: JSON reports, CSV tables, gnuplot scripts and optional PNG figures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

PROFILE_COLUMNS = ("s", "aF", "aExt", "indF", "nullF", "indExt", "nullExt", "minAbsEig")


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Mapping):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def dumps(report) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True)


def write_json(path: str | Path, report) -> None:
    Path(path).write_text(dumps(report) + "\n")


def write_csv(target: str | Path | TextIO, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a header and rows to a path or an open text stream."""
    if hasattr(target, "write"):
        _write_rows(target, columns, rows)
        return
    with open(target, "w", newline="") as fh:
        _write_rows(fh, columns, rows)


def _write_rows(fh, columns, rows):
    w = csv.writer(fh)
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def gnuplot_script(csv_path: str | Path, image: str = "profile.png") -> str:
    """Script drawing both shooting determinants and the index steps from a profile CSV."""
    name = Path(csv_path).name
    return f"""# plots the conjugacy indicators and Hessian indices from {name}
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,700
set output '{image}'
set multiplot layout 2,1
set xlabel 's'
set ylabel 'indicator'
set xzeroaxis
plot '{name}' using 1:2 with lines lw 2 title 'a_F', \\
     '{name}' using 1:3 with lines lw 2 title 'a_Ext'
set ylabel 'index'
set yrange [-0.5:*]
plot '{name}' using 1:4 with steps lw 2 title 'ind F', \\
     '{name}' using 1:6 with steps lw 2 dt 2 title 'ind Ext'
unset multiplot
"""


def profile_figure(path: str | Path, rows: Sequence[Mapping[str, float]], title: str | None = None) -> None:
    """PNG of the same content as :func:`gnuplot_script`. Needs matplotlib."""
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("figure output needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    s = [r["s"] for r in rows]
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    top.plot(s, [r["aF"] for r in rows], lw=1.5, label="$a_F$")
    top.plot(s, [r["aExt"] for r in rows], lw=1.5, label="$a_{Ext}$")
    top.axhline(0.0, color="k", lw=0.5)
    top.set_ylabel("indicator")
    top.legend(frameon=False)
    bottom.step(s, [r["indF"] for r in rows], where="post", lw=1.5, label="ind F")
    bottom.step(s, [r["indExt"] for r in rows], where="post", lw=1.5, ls="--", label="ind Ext")
    bottom.set_xlabel("s")
    bottom.set_ylabel("index")
    bottom.legend(frameon=False)
    if title:
        top.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
