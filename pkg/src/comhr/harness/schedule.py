import math


def cosine_restart_lr(step, peak, period, min_lr=0.0, mult=1):
    """Cosine annealing with warm restarts, evaluated at an integer step.

    The first cycle lasts ``period`` steps and each later cycle ``mult``
    times longer; every cycle starts at ``peak`` and decays towards ``min_lr``.
    """
    if period <= 0 or mult < 1:
        raise ValueError("period must be positive and mult >= 1")
    t, length = step, period
    while t >= length:
        t -= length
        length *= mult
    if t == 0:
        return peak
    return min_lr + (peak - min_lr) * 0.5 * (1.0 + math.cos(math.pi * t / length))
