import numpy as np
from scipy.optimize import linear_sum_assignment

def linear_assignment(
    cost_matrix, threshold: float = np.inf
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """
    Minimum-cost one-to-one assignment over `cost_matrix`.

    Entries set to +inf never match. Pairs whose cost exceeds `threshold`
    are dropped after solving.

    :returns:   A tuple of (matches, unmatched rows, unmatched columns),
                matches sorted by row
    """
    cost_matrix = np.asarray(cost_matrix, dtype=np.float64)
    if cost_matrix.ndim != 2:
        cost_matrix = cost_matrix.reshape(len(cost_matrix), -1)

    rows, cols = cost_matrix.shape
    if cost_matrix.size == 0:
        return [], list(range(rows)), list(range(cols))

    finite = np.isfinite(cost_matrix)
    if not finite.any():
        return [], list(range(rows)), list(range(cols))

    solvable = cost_matrix
    if not finite.all():
        # Large enough that any extra finite pair beats a forbidden one.
        sentinel = (np.abs(cost_matrix[finite]).max() + 1.0) * (max(rows, cols) + 1)
        solvable = np.where(finite, cost_matrix, sentinel)

    row_ind, col_ind = linear_sum_assignment(solvable)

    matches = [
        (int(row), int(col))
        for row, col in zip(row_ind, col_ind)
        if finite[row, col] and cost_matrix[row, col] <= threshold
    ]
    matched_rows = {row for row, _ in matches}
    matched_cols = {col for _, col in matches}

    return (
        matches,
        [row for row in range(rows) if row not in matched_rows],
        [col for col in range(cols) if col not in matched_cols],
    )
