"""Proportion statistics for simulation results."""

import math


def wilson_interval(
    successes: int, trials: int, z: float = 1.96
) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Args:
        successes: Number of successes
        trials: Number of trials (must be positive)
        z: Normal quantile; 1.96 gives a 95% interval, 3.0 a 3-sigma one

    Returns:
        (low, high) bounds clamped to [0, 1]
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    z2 = z * z
    denominator = 1 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denominator
    spread = math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    margin = z * spread / denominator
    return max(0.0, centre - margin), min(1.0, centre + margin)


def two_proportion_p_value(
    successes_a: int, trials_a: int, successes_b: int, trials_b: int
) -> float:
    """Two-sided p-value of the pooled two-proportion z-test."""
    if trials_a <= 0 or trials_b <= 0:
        raise ValueError("trials must be positive")
    pooled = (successes_a + successes_b) / (trials_a + trials_b)
    variance = pooled * (1 - pooled) * (1 / trials_a + 1 / trials_b)
    if variance == 0:
        return 1.0 if successes_a / trials_a == successes_b / trials_b else 0.0
    z = (successes_a / trials_a - successes_b / trials_b) / math.sqrt(variance)
    return math.erfc(abs(z) / math.sqrt(2))
