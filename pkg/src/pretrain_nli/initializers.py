"""Gaussian and block-orthogonal weight initialization scaled by kappa."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("gaussian", "orthogonal")


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "gaussian"
    kappa: float = 1.0
    num_layers: int = 2
    seed: int = 0
    # also apply the (1/sqrt 2)^L depth factor to orthogonal blocks
    ortho_depth_correction: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")

    @property
    def depth_factor(self) -> float:
        return 2.0 ** (-self.num_layers / 2)

    @property
    def gaussian_std(self) -> float:
        return self.kappa * self.depth_factor


def gaussian_init(rows: int, cols: int, spec: InitSpec, rng=None) -> np.ndarray:
    """N(0, (kappa * 2^(-L/2))^2) entries."""
    if spec.scheme != "gaussian":
        raise ValueError("spec.scheme must be 'gaussian'")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return spec.gaussian_std * rng.standard_normal((rows, cols))


def random_orthogonal(n: int, rng) -> np.ndarray:
    """Haar-distributed n x n orthogonal matrix (sign-corrected QR)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def orthogonal_init(rows: int, cols: int, spec: InitSpec, rng=None,
                    strict: bool = True, block: int | None = None) -> np.ndarray:
    """Tile a ``rows x cols`` matrix with independent scaled orthogonal blocks.

    Block size defaults to ``min(rows, cols)``; both dimensions must be
    multiples of it. LSTM gate matrices (``4d x 2d``, four gates acting on
    ``[x; h]``) pass ``block=d`` and so get eight ``d x d`` blocks. With
    ``strict=False`` a non-tileable shape gets a single scaled semi-orthogonal
    matrix (orthonormal rows or columns) instead of an error.
    """
    if spec.scheme != "orthogonal":
        raise ValueError("spec.scheme must be 'orthogonal'")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    scale = spec.kappa * (spec.depth_factor if spec.ortho_depth_correction else 1.0)
    b = min(rows, cols) if block is None else block
    if b < 1 or rows % b or cols % b:
        if strict or b < 1:
            raise ValueError(f"shape {rows}x{cols} is not tileable by {b}x{b} blocks")
        q = random_orthogonal(max(rows, cols), rng)
        return scale * (q[:rows, :cols])
    out = np.empty((rows, cols))
    for r0 in range(0, rows, b):
        for c0 in range(0, cols, b):
            out[r0:r0 + b, c0:c0 + b] = scale * random_orthogonal(b, rng)
    return out


def init_matrix(rows: int, cols: int, spec: InitSpec, rng=None,
                block: int | None = None) -> np.ndarray:
    """Either scheme; orthogonal falls back to semi-orthogonal for odd shapes."""
    if spec.scheme == "gaussian":
        return gaussian_init(rows, cols, spec, rng)
    return orthogonal_init(rows, cols, spec, rng, strict=False, block=block)


def blocks(m: np.ndarray, block: int | None = None):
    """Split a matrix into square blocks (default ``min(rows, cols)``), row-major."""
    b = min(m.shape) if block is None else block
    return [m[r:r + b, c:c + b] for r in range(0, m.shape[0], b)
            for c in range(0, m.shape[1], b)]
