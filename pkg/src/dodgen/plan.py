"""Frame-index arithmetic shared by training samplers and the generation planner.

Depth ``d`` (1-based, ``1 <= d <= m``) places its ``L`` frames ``(L - 1) ** (m - d)``
final-frame indices apart. Training clips and inference segments both use
:func:`depth_stride`, so a depth is trained at exactly the spacing it is run at.
"""


def depth_stride(L: int, m: int, depth: int) -> int:
    if not 1 <= depth <= m:
        raise ValueError(f"depth must be in [1, {m}], got {depth}")
    return (L - 1) ** (m - depth)


def total_frames(L: int, m: int) -> int:
    """N_1 = L, N_{d+1} = N_d + (N_d - 1)(L - 2)."""
    n = L
    for _ in range(m - 1):
        n = n + (n - 1) * (L - 2)
    return n


def span(L: int, m: int, depth: int) -> int:
    """Number of final frames one depth-``depth`` clip covers, endpoints included."""
    return (L - 1) * depth_stride(L, m, depth) + 1
