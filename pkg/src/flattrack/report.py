"""Report emission: per-grid-point error map as SVG, tables as CSV.

SVG is written by hand (textual, diffable, no plotting dependency).
"""

from __future__ import annotations

import csv

from .errors import DataError

# Circles never collapse below this radius so zero-error points stay visible.
MIN_RADIUS_PX = 2.0
MAX_RADIUS_PX = 24.0


def write_per_point_csv(per_point: dict[tuple[int, int], tuple[float, int]],
                        path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", "j", "mean_err_deg", "count"])
        for (i, j), (err, count) in sorted(per_point.items()):
            w.writerow([i, j, repr(float(err)), count])


def read_per_point_csv(path) -> dict[tuple[int, int], tuple[float, int]]:
    out: dict[tuple[int, int], tuple[float, int]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["i", "j", "mean_err_deg", "count"]:
            raise DataError(f"{path}: unexpected per-point columns {header}")
        for rec in reader:
            try:
                out[(int(rec[0]), int(rec[1]))] = (float(rec[2]), int(rec[3]))
            except (ValueError, IndexError) as e:
                raise DataError(f"{path}: bad row {rec}") from e
    if not out:
        raise DataError(f"{path}: empty per-point table")
    return out


def write_grid_error_svg(per_point: dict[tuple[int, int], tuple[float, int]],
                         path, cell_px: float = 56.0) -> None:
    """Error map: one circle per grid point, radius proportional to mean error.

    Radii are floored at MIN_RADIUS_PX (a zero-error point still draws) and
    the largest error maps to MAX_RADIUS_PX.
    """
    if not per_point:
        raise DataError("empty per-point table")
    rows = max(i for i, _ in per_point) + 1
    cols = max(j for _, j in per_point) + 1
    margin = cell_px
    width = cols * cell_px + 2 * margin
    height = rows * cell_px + 2 * margin
    max_err = max(err for err, _ in per_point.values())
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<text x="{margin:.0f}" y="{margin / 2:.0f}" font-size="14" '
        f'font-family="monospace">mean angular error per grid point '
        f'(max {max_err:.3f} deg)</text>',
    ]
    for (i, j), (err, _count) in sorted(per_point.items()):
        cx = margin + (j + 0.5) * cell_px
        cy = margin + (i + 0.5) * cell_px
        if max_err > 0:
            r = MIN_RADIUS_PX + (err / max_err) * (MAX_RADIUS_PX - MIN_RADIUS_PX)
        else:
            r = MIN_RADIUS_PX
        lines.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.3f}" '
            f'fill="#4477aa" fill-opacity="0.55" stroke="#223355">'
            f'<title>({i},{j}): {err:.4f} deg</title></circle>')
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_subject_table_csv(rows: list[dict], summary: dict, path) -> None:
    """Per-subject error table plus average / best-case summary lines."""
    if not rows:
        raise DataError("empty subject table")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
        for k, v in summary.items():
            w.writerow([k, _fmt(v)] + [""] * (len(cols) - 2))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
