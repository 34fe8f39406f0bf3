import heapq
from typing import Sequence

import numpy as np


def topk_curve(scores: Sequence[float], k: int, budget: int) -> np.ndarray:
    """Running mean of the best k scores after each call 1..budget.

    Fewer than k scores so far averages all of them; calls past the history repeat the
    final value; history past the budget is ignored.
    """
    if not len(scores):
        raise ValueError("history is empty")
    if k < 1:
        raise ValueError(f"k={k} must be at least 1")
    if budget < 1:
        raise ValueError(f"budget={budget} must be at least 1")
    best: list = []
    total = 0.0
    curve = np.empty(budget)
    for i in range(min(len(scores), budget)):
        value = float(scores[i])
        if len(best) < k:
            heapq.heappush(best, value)
            total += value
        elif value > best[0]:
            total += value - heapq.heapreplace(best, value)
        curve[i] = total / len(best)
    filled = min(len(scores), budget)
    curve[filled:] = curve[filled - 1]
    return curve


def auc_topk(scores: Sequence[float], k: int, budget: int) -> float:
    """Trapezoid area under the top-k curve over calls 0..budget, divided by budget.

    The curve at call 0 takes the value at call 1.
    """
    curve = topk_curve(scores, k, budget)
    points = np.concatenate([curve[:1], curve])
    return float(((points[:-1] + points[1:]) / 2.0).sum() / budget)
