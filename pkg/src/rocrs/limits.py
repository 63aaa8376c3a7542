"""Desk-scale enumeration caps.

Exact subroutines (polytope membership, brute-force acceptance, exact
multilinear extensions) enumerate exponentially many subsets and are only
meant for verification-sized instances.  The shared cap defaults to 20
ground elements and can be overridden through the ROCRS_DESK_CAP
environment variable.
"""

import os

DESK_CAP_DEFAULT = 20
DESK_CAP_ENV = "ROCRS_DESK_CAP"


def desk_cap() -> int:
    raw = os.environ.get(DESK_CAP_ENV)
    if raw is None:
        return DESK_CAP_DEFAULT
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{DESK_CAP_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"{DESK_CAP_ENV} must be positive, got {value}")
    return value
