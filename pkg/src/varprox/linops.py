"""Linear operators used across the solvers.

Concrete kinds: dense matrices, the identity, coordinate masks, 2-D
finite-difference gradients (single- and multi-channel, Neumann boundary),
block extractors for overlapping groups, and real-stacked partial Fourier
systems.  Operators are immutable after construction; ``apply``/``adjoint``
are reentrant and densification is memoized.

Dense matrices serialize to the SOPM binary format: magic bytes ``SOPM``,
u32 rows, u32 cols, little-endian float64 row-major payload.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .groups import GroupStructure

__all__ = [
    "LinearOperator", "DenseOperator", "IdentityOperator", "MaskOperator",
    "Grad2DOperator", "BlockExtractOperator", "FourierSystemSpec",
    "dense", "identity", "mask", "grad2d", "block_extract", "fourier_system",
    "tv_group_structure", "save_sopm", "load_sopm", "operator_norm",
]

_SOPM_MAGIC = b"SOPM"


class LinearOperator:
    """A linear map from R^cols to R^rows with an exact adjoint."""

    kind = "abstract"

    def __init__(self, rows, cols):
        self.rows = int(rows)
        self.cols = int(cols)
        self._dense = None

    @property
    def shape(self):
        return (self.rows, self.cols)

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def to_dense(self):
        if self._dense is None:
            self._dense = self._densify()
            self._dense.flags.writeable = False
        return self._dense

    def gram(self):
        """Memoized ``A^T A`` (constant across solves on the same operator)."""
        if getattr(self, "_gram", None) is None:
            D = self.to_dense()
            self._gram = D.T @ D
            self._gram.flags.writeable = False
        return self._gram

    def cogram(self):
        """Memoized ``A A^T``."""
        if getattr(self, "_cogram", None) is None:
            D = self.to_dense()
            self._cogram = D @ D.T
            self._cogram.flags.writeable = False
        return self._cogram

    def _densify(self):
        eye = np.eye(self.cols)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.cols)])

    def _check_input(self, x, length, name):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            if x.shape[0] != length:
                raise ValueError(f"{self.kind}: {name} has {x.shape[0]} rows, "
                                 f"expected {length}")
            return x
        x = x.ravel()
        if x.size != length:
            raise ValueError(f"{self.kind}: {name} has length {x.size}, "
                             f"expected {length}")
        return x

    def __repr__(self):
        return f"<{type(self).__name__} {self.rows}x{self.cols}>"


class DenseOperator(LinearOperator):
    def __init__(self, matrix, kind="dense"):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("dense operator needs a 2-D matrix")
        super().__init__(*matrix.shape)
        matrix.flags.writeable = False
        self.matrix = matrix
        self.kind = kind
        self._dense = matrix

    def apply(self, x):
        return self.matrix @ self._check_input(x, self.cols, "x")

    def adjoint(self, y):
        return self.matrix.T @ self._check_input(y, self.rows, "y")


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, n):
        super().__init__(n, n)

    def apply(self, x):
        return self._check_input(x, self.cols, "x").copy()

    def adjoint(self, y):
        return self._check_input(y, self.rows, "y").copy()

    def _densify(self):
        return np.eye(self.cols)


class MaskOperator(LinearOperator):
    """Selects a fixed subset of coordinates; adjoint scatters with zeros."""

    kind = "mask"

    def __init__(self, keep, n):
        keep = np.unique(np.asarray(keep, dtype=int))
        if keep.size and (keep[0] < 0 or keep[-1] >= n):
            raise ValueError("mask index out of range")
        super().__init__(keep.size, n)
        self.keep = keep

    def apply(self, x):
        return self._check_input(x, self.cols, "x")[self.keep]

    def adjoint(self, y):
        y = self._check_input(y, self.rows, "y")
        out = np.zeros(self.cols)
        out[self.keep] = y
        return out


class Grad2DOperator(LinearOperator):
    """Forward differences on a (channels, height, width) image.

    Neumann boundary: the difference with an out-of-range neighbor is zero,
    so constant images map exactly to zero.  Output layout is channel-major,
    horizontal block then vertical block per channel.
    """

    def __init__(self, height, width, channels=1):
        if height < 1 or width < 1 or channels < 1:
            raise ValueError("invalid image dimensions")
        self.height, self.width, self.channels = height, width, channels
        super().__init__(2 * channels * height * width, channels * height * width)
        self.kind = "grad2d" if channels == 1 else "multichannel-grad"

    def apply(self, x):
        c, h, w = self.channels, self.height, self.width
        img = self._check_input(x, self.cols, "x").reshape(c, h, w)
        out = np.zeros((c, 2, h, w))
        out[:, 0, :-1, :] = img[:, :-1, :] - img[:, 1:, :]
        out[:, 1, :, :-1] = img[:, :, :-1] - img[:, :, 1:]
        return out.ravel()

    def adjoint(self, y):
        c, h, w = self.channels, self.height, self.width
        g = self._check_input(y, self.rows, "y").reshape(c, 2, h, w)
        out = np.zeros((c, h, w))
        out[:, :-1, :] += g[:, 0, :-1, :]
        out[:, 1:, :] -= g[:, 0, :-1, :]
        out[:, :, :-1] += g[:, 1, :, :-1]
        out[:, :, 1:] -= g[:, 1, :, :-1]
        return out.ravel()


class BlockExtractOperator(LinearOperator):
    """Stacks weighted copies of index blocks: ``x -> (w_g * x_{I_g})_g``."""

    kind = "block-extract"

    def __init__(self, groups, n):
        if not isinstance(groups, GroupStructure):
            groups = GroupStructure(groups, p=n, mode="overlapping")
        if groups.p > n:
            raise ValueError("group index out of range")
        weights = groups.weights
        if weights is None:
            weights = np.sqrt(groups.sizes.astype(float))
        super().__init__(int(groups.sizes.sum()), n)
        self.source_groups = groups
        self.block_weights = weights
        offs = np.concatenate([[0], np.cumsum(groups.sizes)])
        self.offsets = offs

    def lifted_partition(self):
        """Partition of the stacked output space, one block per group."""
        blocks = [range(self.offsets[g], self.offsets[g + 1])
                  for g in range(len(self.source_groups))]
        return GroupStructure(blocks, p=self.rows)

    def apply(self, x):
        x = self._check_input(x, self.cols, "x")
        parts = [w * x[g] for w, g in
                 zip(self.block_weights, self.source_groups.groups)]
        return np.concatenate(parts)

    def adjoint(self, y):
        y = self._check_input(y, self.rows, "y")
        out = np.zeros(self.cols)
        for w, g, lo, hi in zip(self.block_weights, self.source_groups.groups,
                                self.offsets[:-1], self.offsets[1:]):
            np.add.at(out, g, w * y[lo:hi])
        return out


@dataclass(frozen=True)
class FourierSystemSpec:
    """Low-frequency Fourier measurements of amplitudes on a uniform grid.

    ``cutoff`` is the frequency band size per axis (band ``-cutoff/2 ..
    cutoff/2``); ``grid`` the number of sample points per axis.  The two are
    independent parameters: the operator has ``grid**dimension`` columns and
    ``2 * (2*floor(cutoff/2)+1)**dimension`` rows once the complex rows are
    stacked as real parts then imaginary parts.
    """

    dimension: int = 1
    cutoff: int = 2
    grid: int = 300

    def __post_init__(self):
        if self.cutoff < 1 or self.grid < 1 or self.dimension < 1:
            raise ValueError("cutoff, grid and dimension must be >= 1")


def fourier_system(spec):
    """Real-stacked partial Fourier operator for the given spec.

    Entries of the complex matrix are ``exp(2i*pi*<theta_k, l>) / m**(d/2)``
    for grid point ``theta_k = k/grid`` and frequency ``l``; deterministic
    for a fixed spec.
    """
    d, m, p = spec.dimension, spec.cutoff, spec.grid
    half = m // 2
    freqs_1d = np.arange(-half, half + 1, dtype=float)
    theta_1d = np.arange(p, dtype=float) / p
    if d == 1:
        freqs = freqs_1d[:, None]
        thetas = theta_1d[:, None]
    elif d == 2:
        fa, fb = np.meshgrid(freqs_1d, freqs_1d, indexing="ij")
        freqs = np.column_stack([fa.ravel(), fb.ravel()])
        ta, tb = np.meshgrid(theta_1d, theta_1d, indexing="ij")
        thetas = np.column_stack([ta.ravel(), tb.ravel()])
    else:
        raise ValueError("only dimensions 1 and 2 are supported")
    phase = 2.0 * np.pi * freqs @ thetas.T
    z = np.exp(1j * phase) / m ** (d / 2.0)
    return DenseOperator(np.vstack([z.real, z.imag]), kind="partial-fourier-real")


def dense(matrix, kind="dense"):
    return DenseOperator(matrix, kind=kind)


def identity(n):
    return IdentityOperator(n)


def mask(keep, n):
    return MaskOperator(keep, n)


def grad2d(height, width, channels=1):
    return Grad2DOperator(height, width, channels)


def block_extract(groups, n):
    return BlockExtractOperator(groups, n)


def tv_group_structure(height, width, channels=1):
    """Pixel groups matching the Grad2D output layout.

    Group ``(i, j)`` collects the horizontal and vertical differences of
    pixel ``(i, j)`` across all channels (size ``2 * channels``), inducing
    the isotropic multichannel total-variation norm.
    """
    hw = height * width
    pix = np.arange(hw)
    blocks = np.empty((hw, 2 * channels), dtype=int)
    for t in range(channels):
        blocks[:, 2 * t] = (2 * t) * hw + pix
        blocks[:, 2 * t + 1] = (2 * t + 1) * hw + pix
    return GroupStructure(list(blocks), p=2 * channels * hw)


def operator_norm(op, iters=50, seed=0):
    """Spectral norm estimate by power iteration on ``A^T A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.cols)
    x /= np.linalg.norm(x)
    val = 0.0
    for _ in range(iters):
        y = op.adjoint(op.apply(x))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        val = nrm
        x = y / nrm
    return float(np.sqrt(val))


def save_sopm(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("SOPM stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(_SOPM_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))


def load_sopm(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SOPM_MAGIC:
            raise ValueError(f"bad SOPM magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        payload = fh.read(8 * rows * cols)
    if len(payload) != 8 * rows * cols:
        raise ValueError("truncated SOPM payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
