"""Group structures, group norms and the grouped Hadamard product.

A :class:`GroupStructure` is a list of index blocks over ``{0, ..., p-1}``.
In ``partition`` mode the blocks must be disjoint and cover the index set;
``overlapping`` mode allows shared indices (weights default to sqrt of the
block size).  Group files on disk are plain text, one group per line,
1-based space-separated indices.
"""

import numpy as np

__all__ = [
    "GroupStructure", "trivial_groups", "contiguous_groups",
    "group_norm_12", "group_norm_inf2", "group_sq_norms", "group_dots",
    "hadamard_group", "extend", "soft_threshold", "group_soft_threshold",
    "load_groups", "save_groups",
]


class GroupStructure:
    """Index blocks over ``{0, ..., p-1}`` with optional per-group weights."""

    def __init__(self, groups, p=None, mode="partition", weights=None):
        self.groups = [np.asarray(np.sort(np.asarray(g, dtype=int)), dtype=int)
                       for g in groups]
        if any(g.size == 0 for g in self.groups):
            raise ValueError("empty group")
        top = max(int(g[-1]) for g in self.groups) + 1
        self.p = top if p is None else int(p)
        if top > self.p:
            raise ValueError("group index out of range")
        if min(int(g[0]) for g in self.groups) < 0:
            raise ValueError("negative group index")
        if mode not in ("partition", "overlapping"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.sizes = np.array([g.size for g in self.groups])
        self.n_groups = len(self.groups)
        if weights is None and mode == "overlapping":
            weights = np.sqrt(self.sizes.astype(float))
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        if self.weights is not None and (self.weights <= 0).any():
            raise ValueError("group weights must be positive")

        if mode == "partition":
            table = np.full(self.p, -1, dtype=int)
            for gi, g in enumerate(self.groups):
                if (table[g] != -1).any():
                    raise ValueError("groups overlap in partition mode")
                table[g] = gi
            if (table == -1).any():
                raise ValueError("partition does not cover the index set")
            self.group_of = table
        else:
            self.group_of = None

    @property
    def is_trivial(self):
        return (self.mode == "partition" and self.n_groups == self.p
                and bool(np.all(self.group_of == np.arange(self.p))))

    def spans(self):
        """True when the union of the groups covers the full index set."""
        seen = np.zeros(self.p, dtype=bool)
        for g in self.groups:
            seen[g] = True
        return bool(seen.all())

    def membership_counts(self):
        """Number of groups containing each index (overlap diagnostics)."""
        counts = np.zeros(self.p, dtype=int)
        for g in self.groups:
            counts[g] += 1
        return counts

    def __len__(self):
        return self.n_groups

    def __repr__(self):
        return (f"GroupStructure(p={self.p}, n_groups={self.n_groups}, "
                f"mode={self.mode!r})")


def trivial_groups(p):
    return GroupStructure([[i] for i in range(p)], p=p)


def contiguous_groups(p, size):
    if p % size:
        raise ValueError("size must divide p")
    return GroupStructure([range(i, i + size) for i in range(0, p, size)], p=p)


def _require_partition(gs):
    if gs.mode != "partition":
        raise ValueError("operation requires a partition group structure")


def group_sq_norms(z, gs):
    """Per-group squared Euclidean norms, ``(||z_g||^2)_g``."""
    _require_partition(gs)
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        row = (z * z).sum(axis=1)
    else:
        row = z * z
    return np.bincount(gs.group_of, weights=row, minlength=gs.n_groups)


def group_dots(a, b, gs):
    """Per-group inner products ``(<a_g, b_g>)_g``."""
    _require_partition(gs)
    return np.bincount(gs.group_of, weights=np.asarray(a) * np.asarray(b),
                       minlength=gs.n_groups)


def group_norm_12(z, gs):
    """Sum of per-group Euclidean norms; the l1 norm for trivial groups."""
    return float(np.sqrt(group_sq_norms(z, gs)).sum())


def group_norm_inf2(z, gs):
    """Max of per-group Euclidean norms; the sup norm for trivial groups."""
    sq = group_sq_norms(z, gs)
    return float(np.sqrt(sq.max())) if sq.size else 0.0


def hadamard_group(u, v, gs):
    """Grouped Hadamard product: entry i of group g maps to ``u_i * v_g``."""
    _require_partition(gs)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.size != gs.p or v.size != gs.n_groups:
        raise ValueError("dimension mismatch in grouped product")
    return u * v[gs.group_of]


def extend(v, gs):
    """Extension of per-group scalars to the full index set."""
    _require_partition(gs)
    v = np.asarray(v, dtype=float)
    if v.size != gs.n_groups:
        raise ValueError("dimension mismatch in extension")
    return v[gs.group_of]


def soft_threshold(z, tau):
    """Componentwise shrinkage ``sign(z) * max(|z| - tau, 0)``."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def group_soft_threshold(z, tau, gs):
    """Blockwise shrinkage: scales each group toward zero by ``tau``.

    Reduces exactly (bitwise) to :func:`soft_threshold` for trivial groups.
    """
    if gs.is_trivial:
        return soft_threshold(z, tau)
    z = np.asarray(z, dtype=float)
    norms = np.sqrt(group_sq_norms(z, gs))
    scale = np.zeros(gs.n_groups)
    nz = norms > 0
    scale[nz] = np.maximum(0.0, 1.0 - tau / norms[nz])
    return z * scale[gs.group_of]


def load_groups(path, p=None, mode="partition"):
    groups = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            groups.append([int(tok) - 1 for tok in line.split()])
    return GroupStructure(groups, p=p, mode=mode)


def save_groups(path, gs):
    with open(path, "w") as fh:
        for g in gs.groups:
            fh.write(" ".join(str(i + 1) for i in g) + "\n")
