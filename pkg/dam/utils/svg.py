"""
Plain-text SVG writer for line plots, heatmaps and bar charts
"""
import logging
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

WIDTH, HEIGHT, MARGIN = 640, 360, 48
PALETTE = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b')


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(values, dtype=np.float64) - lo) / span * (out_hi - out_lo)


def _document(body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
            + '\n'.join(body) + '\n</svg>\n')


def _write(path, text):
    with open(path, 'w') as fh:
        fh.write(text)
    logger.debug(f"Wrote {path}")
    return path


def line_plot(path, x, lines, title='', x_label='', y_label=''):
    """
    Polyline plot

    Args:
        x: shared x values
        lines: mapping label -> y values (NaN gaps are dropped)
    """
    x = np.asarray(x, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in lines.items()}
    finite = np.concatenate([y[np.isfinite(y)] for y in ys.values()] or [np.zeros(1)])
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    body = [f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
            f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>']
    for i, (label, y) in enumerate(ys.items()):
        ok = np.isfinite(y)
        px = _scale(x[ok], x.min(), x.max(), MARGIN, WIDTH - MARGIN)
        py = _scale(y[ok], y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        points = ' '.join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        colour = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{points}"/>')
        body.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * i}" text-anchor="end" font-size="11" '
                    f'fill="{colour}">{escape(str(label))}</text>')
    body.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="11">{escape(x_label)}</text>')
    body.append(f'<text x="12" y="{HEIGHT / 2}" font-size="11" transform="rotate(-90 12 {HEIGHT / 2})">'
                f'{escape(y_label)}</text>')
    body.append(f'<text x="{MARGIN - 4}" y="{MARGIN}" text-anchor="end" font-size="10">{y_hi:.3g}</text>')
    body.append(f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{y_lo:.3g}</text>')
    return _write(path, _document(body, title))


def heatmap(path, frame, title=''):
    """Heatmap of a numeric DataFrame; darker cells hold lower values"""
    values = frame.to_numpy(dtype=np.float64)
    n_rows, n_cols = values.shape
    cell_w = (WIDTH - 2 * MARGIN) / max(n_cols, 1)
    cell_h = (HEIGHT - 2 * MARGIN) / max(n_rows, 1)
    finite = values[np.isfinite(values)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    body = []
    for i in range(n_rows):
        for j in range(n_cols):
            v = values[i, j]
            shade = 255 if not np.isfinite(v) else int(_scale(v, lo, hi, 40, 235))
            x, y = MARGIN + j * cell_w, MARGIN + i * cell_h
            body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell_w:.2f}" height="{cell_h:.2f}" '
                        f'fill="rgb({shade},{shade},255)"/>')
            body.append(f'<text x="{x + cell_w / 2:.2f}" y="{y + cell_h / 2:.2f}" text-anchor="middle" '
                        f'font-size="10">{v:.3g}</text>')
    for i, label in enumerate(frame.index):
        body.append(f'<text x="{MARGIN - 4}" y="{MARGIN + (i + 0.5) * cell_h:.2f}" text-anchor="end" '
                    f'font-size="10">{escape(str(label))}</text>')
    for j, label in enumerate(frame.columns):
        body.append(f'<text x="{MARGIN + (j + 0.5) * cell_w:.2f}" y="{HEIGHT - MARGIN + 14}" '
                    f'text-anchor="middle" font-size="10">{escape(str(label))}</text>')
    return _write(path, _document(body, title))


def bar_chart(path, labels, values, title=''):
    values = np.asarray(values, dtype=np.float64)
    n = max(len(values), 1)
    bar_w = (WIDTH - 2 * MARGIN) / n
    top = float(np.nanmax(values)) if values.size else 1.0
    body = []
    for i, v in enumerate(values):
        h = _scale(v, 0.0, top, 0, HEIGHT - 2 * MARGIN)
        x = MARGIN + i * bar_w
        body.append(f'<rect x="{x:.2f}" y="{HEIGHT - MARGIN - h:.2f}" width="{max(bar_w - 0.5, 0.5):.2f}" '
                    f'height="{h:.2f}" fill="{PALETTE[0]}"><title>{escape(str(labels[i]))}: {v:.4g}</title></rect>')
    return _write(path, _document(body, title))
