"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Raised when an operation's domain contract is violated.

    Examples: empty scans, grids where no voxel survives the point-count
    cutoff, matches with zero correspondences, normal equations with no
    observable directions.
    """
