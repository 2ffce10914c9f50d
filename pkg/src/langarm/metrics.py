"""Training metrics: CSV log and a hand-rolled SVG learning curve.

Floats are written with repr() (shortest round-trip form), which keeps the
file byte-identical across reruns of the same seeded run. Evaluation columns
are filled only on rows where an evaluation ran.
"""

from __future__ import annotations

import csv


def metric_columns(n_instructions: int) -> list[str]:
    cols = ["update", "env_steps", "train_return", "policy_loss", "value_loss",
            "clip_frac", "mean_ratio", "ratio_dev", "eval_return", "eval_wrong_rate"]
    cols += [f"success_{i}" for i in range(n_instructions)]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


class MetricsWriter:
    def __init__(self, path, n_instructions: int):
        self.path = path
        self.columns = metric_columns(n_instructions)
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(self.columns) + "\n")

    def write(self, row: dict):
        self._fh.write(",".join(_fmt(row.get(c)) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def load_metrics(path) -> dict[str, list]:
    """Columns as lists; numeric strings parsed, blanks kept as None."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out: dict[str, list] = {c: [] for c in reader.fieldnames}
        for row in reader:
            for c, raw in row.items():
                if raw == "" or raw is None:
                    out[c].append(None)
                else:
                    out[c].append(float(raw))
    return out


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def write_learning_curve(csv_path, svg_path):
    """Mean episodic return vs environment steps, train curve + eval dots."""
    data = load_metrics(csv_path)
    pairs = [(s, r) for s, r in zip(data["env_steps"], data["train_return"])
             if s is not None and r is not None]
    eval_pairs = [(s, r) for s, r in zip(data["env_steps"], data["eval_return"])
                  if s is not None and r is not None]
    width, height = 640, 400
    ml, mr, mt, mb = 70, 20, 20, 55
    if pairs:
        xs = [p[0] for p in pairs] + [p[0] for p in eval_pairs]
        ys = [p[1] for p in pairs] + [p[1] for p in eval_pairs]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys + [0.0]), max(ys + [0.0])
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def py(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mb - mt)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" '
        'stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for tx in _ticks(x0, x1):
        parts.append(
            f'<text x="{px(tx):.1f}" y="{height - mb + 18}" font-size="11" '
            f'text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(y0, y1):
        parts.append(
            f'<text x="{ml - 6}" y="{py(ty):.1f}" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle">{ty:.3g}</text>')
    parts.append(
        f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 12}" font-size="13" '
        'text-anchor="middle">environment steps</text>')
    parts.append(
        f'<text x="16" y="{(mt + height - mb) / 2:.1f}" font-size="13" '
        f'text-anchor="middle" transform="rotate(-90 16 {(mt + height - mb) / 2:.1f})">'
        'mean episodic return</text>')
    if pairs:
        pts = " ".join(f"{px(s):.2f},{py(r):.2f}" for s, r in pairs)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
                     'stroke-width="1.5"/>')
    for s, r in eval_pairs:
        parts.append(f'<circle cx="{px(s):.2f}" cy="{py(r):.2f}" r="3" fill="#d62728"/>')
    parts.append("</svg>")
    with open(svg_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
