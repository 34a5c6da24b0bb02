"""Independent reference implementations used as test oracles."""

import math


def counting_sweep(pred, gt):
    """Per-pixel counting of precision/recall for thresholds 0..255 (pure Python)."""
    rows, cols = len(pred), len(pred[0])
    levels = [[int(math.floor(min(max(pred[i][j], 0.0), 1.0) * 255.0 + 0.5)) for j in range(cols)] for i in range(rows)]
    positives = sum(1 for i in range(rows) for j in range(cols) if gt[i][j] >= 0.5)
    precision, recall = [], []
    for t in range(256):
        tp = fp = 0
        for i in range(rows):
            for j in range(cols):
                if levels[i][j] >= t:
                    if gt[i][j] >= 0.5:
                        tp += 1
                    else:
                        fp += 1
        precision.append(tp / (tp + fp) if tp + fp else 1.0)
        recall.append(tp / positives if positives else 1.0)
    return precision, recall


def counting_metrics(pairs, beta_sq=0.3):
    """(max_f, mae, precision[256], recall[256]) averaged over ``pairs``."""
    sweeps = [counting_sweep(p, g) for p, g in pairs]
    n = len(sweeps)
    precision = [sum(s[0][t] for s in sweeps) / n for t in range(256)]
    recall = [sum(s[1][t] for s in sweeps) / n for t in range(256)]
    best = 0.0
    for p, r in zip(precision, recall):
        den = beta_sq * p + r
        best = max(best, (1 + beta_sq) * p * r / den if den else 0.0)
    errors = []
    for p, g in pairs:
        cells = [abs(p[i][j] - g[i][j]) for i in range(len(p)) for j in range(len(p[0]))]
        errors.append(sum(cells) / len(cells))
    return best, sum(errors) / n, precision, recall
