import json
import logging
import os

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def attention_frame(summary, row=0):
    """
    Long-format attention weights of one batch row

    Columns: layer, head, kind (self / cross), query, key, weight. Key indices
    count the affine token first, then TV-tokens; the final key is the zero slot.
    """
    frames = []
    for entry in summary:
        for kind in ('self', 'cross'):
            weights = entry[f'{kind}_attention']
            if weights is None:
                continue
            w = weights[row]
            h, q, k = np.indices(w.shape)
            frames.append(pd.DataFrame({'layer': entry['layer'], 'head': h.ravel(), 'kind': kind,
                                        'query': q.ravel(), 'key': k.ravel(), 'weight': w.ravel()}))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=['layer', 'head', 'kind', 'query', 'key', 'weight'])


def cumulative_attention_frame(summary, context_times, row=0):
    """
    Cumulative attention each TV-token received, per layer and head, with the
    original context indices (and their times) the token covers
    """
    rows = []
    for entry in summary:
        if entry['cumulative'] is None:
            continue
        cumulative = entry['cumulative'][row]
        for token, sources in enumerate(entry['provenance'][row]):
            times = ' '.join(f"{context_times[i]:.6g}" for i in sources)
            for head in range(cumulative.shape[0]):
                rows.append({'layer': entry['layer'], 'head': head, 'token': token,
                             'attention': float(cumulative[head, token]),
                             'sources': ' '.join(str(i) for i in sources), 'times': times})
    return pd.DataFrame(rows, columns=['layer', 'head', 'token', 'attention', 'sources', 'times'])


def write_run_config(out_dir, config, seeds=None, command=None):
    """Resolved configuration next to the outputs, stamped with seed and subsystem seeds"""
    os.makedirs(out_dir, exist_ok=True)
    extra = {'command': command}
    if seeds:
        extra['subsystem_seeds'] = seeds
    path = os.path.join(out_dir, 'config.json')
    config.save(path, extra)
    return path


def write_json(path, data):
    with open(path, 'w') as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)
    return path


def mark_incomplete(out_dir, error):
    """Leave a marker in a partially written output directory"""
    if not out_dir or not os.path.isdir(out_dir):
        return None
    path = os.path.join(out_dir, 'INCOMPLETE')
    with open(path, 'w') as fh:
        fh.write(f"{type(error).__name__}: {error}\n")
    logger.warning(f"Marked {out_dir} as incomplete")
    return path
