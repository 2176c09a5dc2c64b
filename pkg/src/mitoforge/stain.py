"""Macenko stain-basis estimation and normalization for H&E patches.

Images are uint8 RGB arrays of shape (H, W, 3); optical-density images are
float64 arrays of the same shape. Optical density uses base-10 logs against
a reference white ``io`` (default 255):

    OD = -log10(max(I, 1) / io)

Basis estimation follows the Macenko plane-fit: keep tissue pixels, take the
two leading principal directions of their OD vectors, and pick the extreme
percentile angles within that plane as the stain vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DegenerateTissue, SingularBasis

DEFAULT_IO = 255.0
DEFAULT_BETA = 0.15
DEFAULT_ALPHA = 1.0
MIN_TISSUE_PIXELS = 100
MIN_STAIN_ANGLE_RAD = 1e-3
CONCENTRATION_PERCENTILE = 99.0


@dataclass(frozen=True)
class StainBasis:
    """Two unit-norm stain directions in OD space plus reference maxima.

    ``stain_vectors`` is 3x2; column 0 is the hematoxylin-like vector
    (larger blue-channel component), column 1 the eosin-like one.
    """

    stain_vectors: np.ndarray     # (3, 2), unit columns, nonnegative
    max_concentrations: np.ndarray  # (2,), positive
    io: float = DEFAULT_IO

    def __post_init__(self):
        v = np.asarray(self.stain_vectors, dtype=float)
        c = np.asarray(self.max_concentrations, dtype=float)
        if v.shape != (3, 2):
            raise ValueError(f"stain_vectors must be 3x2, got {v.shape}")
        norms = np.linalg.norm(v, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError(f"stain columns not unit-norm: {norms}")
        if np.any(v < -1e-12):
            raise ValueError("stain vectors must be nonnegative")
        angle = _angle_between(v[:, 0], v[:, 1])
        if angle <= MIN_STAIN_ANGLE_RAD:
            raise ValueError(f"stain columns nearly parallel ({angle:.2e} rad)")
        if c.shape != (2,) or np.any(c <= 0):
            raise ValueError(f"max_concentrations must be 2 positive values, got {c}")
        object.__setattr__(self, "stain_vectors", v)
        object.__setattr__(self, "max_concentrations", c)

    def to_json(self) -> str:
        return json.dumps(
            {
                "stain_vectors": [[float(x) for x in row] for row in self.stain_vectors],
                "max_concentrations": [float(x) for x in self.max_concentrations],
                "io": float(self.io),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "StainBasis":
        obj = json.loads(text)
        return cls(
            stain_vectors=np.array(obj["stain_vectors"], dtype=float),
            max_concentrations=np.array(obj["max_concentrations"], dtype=float),
            io=float(obj.get("io", DEFAULT_IO)),
        )


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    cosang = np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0)
    return float(np.arccos(cosang))


def rgb_to_od(patch: np.ndarray, io: float = DEFAULT_IO) -> np.ndarray:
    """Beer-Lambert conversion of an 8-bit RGB patch to optical density."""
    if io <= 0:
        raise ValueError(f"io must be positive, got {io}")
    intensities = np.maximum(np.asarray(patch, dtype=np.float64), 1.0)
    return -np.log10(intensities / io)


def od_to_rgb(od: np.ndarray, io: float = DEFAULT_IO) -> np.ndarray:
    """Inverse Beer-Lambert step; result rounded and clamped to uint8."""
    if io <= 0:
        raise ValueError(f"io must be positive, got {io}")
    intensities = io * np.power(10.0, -np.asarray(od, dtype=np.float64))
    return np.clip(np.rint(intensities), 0, 255).astype(np.uint8)


def _tissue_pixels(od: np.ndarray, beta: float) -> np.ndarray:
    """Drop transparent pixels: those whose OD components are all below beta.

    Rows are returned in lexicographic order so the estimate is exactly
    invariant to pixel ordering.
    """
    flat = od.reshape(-1, 3)
    tissue = flat[np.any(flat >= beta, axis=1)]
    if tissue.shape[0]:
        order = np.lexsort((tissue[:, 2], tissue[:, 1], tissue[:, 0]))
        tissue = tissue[order]
    return tissue


def estimate_stain_basis(
    od: np.ndarray,
    beta: float = DEFAULT_BETA,
    alpha: float = DEFAULT_ALPHA,
    min_tissue_pixels: int = MIN_TISSUE_PIXELS,
    io: float = DEFAULT_IO,
) -> StainBasis:
    """Fit a two-stain basis to an OD image by the Macenko plane-fit.

    Raises DegenerateTissue when fewer than ``min_tissue_pixels`` pixels pass
    the beta filter or when the percentile angle directions coincide
    (single-stain image).
    """
    tissue = _tissue_pixels(np.asarray(od, dtype=np.float64), beta)
    if tissue.shape[0] < min_tissue_pixels:
        raise DegenerateTissue(
            f"only {tissue.shape[0]} tissue pixels survive beta={beta} filter "
            f"(need {min_tissue_pixels})"
        )

    cov = np.cov(tissue, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    plane = eigvecs[:, np.argsort(eigvals)[::-1][:2]]  # (3, 2), leading directions

    projected = tissue @ plane
    phi = np.arctan2(projected[:, 1], projected[:, 0])
    # Angles are measured relative to the mean direction so the stain cone
    # cannot straddle the arctan2 branch cut at +-pi.
    mean_dir = projected.mean(axis=0)
    phi_mean = np.arctan2(mean_dir[1], mean_dir[0])
    phi = np.mod(phi - phi_mean + np.pi, 2.0 * np.pi) - np.pi
    phi_lo = np.percentile(phi, alpha) + phi_mean
    phi_hi = np.percentile(phi, 100.0 - alpha) + phi_mean

    v_lo = plane @ np.array([np.cos(phi_lo), np.sin(phi_lo)])
    v_hi = plane @ np.array([np.cos(phi_hi), np.sin(phi_hi)])

    def rectify(v: np.ndarray) -> np.ndarray:
        # Stains absorb: flip the overall sign if needed, clamp residual noise.
        if v.sum() < 0:
            v = -v
        v = np.clip(v, 0.0, None)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DegenerateTissue("stain direction collapsed to zero after rectification")
        return v / norm

    v_lo, v_hi = rectify(v_lo), rectify(v_hi)
    if _angle_between(v_lo, v_hi) <= MIN_STAIN_ANGLE_RAD:
        raise DegenerateTissue("percentile stain directions coincide (single stain?)")

    # Hematoxylin-like column first: larger blue-channel OD component.
    if v_lo[2] >= v_hi[2]:
        vectors = np.stack([v_lo, v_hi], axis=1)
    else:
        vectors = np.stack([v_hi, v_lo], axis=1)

    concentrations = _solve_concentrations(tissue, vectors)
    max_c = np.percentile(concentrations, CONCENTRATION_PERCENTILE, axis=0)
    max_c = np.maximum(max_c, 1e-8)
    return StainBasis(stain_vectors=vectors, max_concentrations=max_c, io=io)


def _solve_concentrations(od_vectors: np.ndarray, stain_vectors: np.ndarray) -> np.ndarray:
    """Least-squares unmix of (N, 3) OD rows against a 3x2 basis, clamped >= 0."""
    gram = stain_vectors.T @ stain_vectors
    if abs(np.linalg.det(gram)) < 1e-12:
        raise SingularBasis("stain vectors are linearly dependent")
    coeffs = np.linalg.solve(gram, stain_vectors.T @ od_vectors.T)
    return np.clip(coeffs.T, 0.0, None)


def stain_concentrations(od: np.ndarray, basis: StainBasis) -> np.ndarray:
    """Per-pixel 2-vector concentration map for an OD image under ``basis``."""
    od = np.asarray(od, dtype=np.float64)
    flat = od.reshape(-1, 3)
    conc = _solve_concentrations(flat, basis.stain_vectors)
    return conc.reshape(od.shape[:-1] + (2,))


def normalize_to_reference(
    patch: np.ndarray,
    reference: StainBasis,
    io: float = DEFAULT_IO,
    beta: float = DEFAULT_BETA,
    alpha: float = DEFAULT_ALPHA,
) -> np.ndarray:
    """Re-express a patch in the reference stain basis.

    The patch's own basis is estimated, its concentrations are rescaled to the
    reference maxima, and pixels are rebuilt from the reference vectors.
    Propagates DegenerateTissue for patches where no basis can be fit.
    """
    od = rgb_to_od(patch, io=io)
    source = estimate_stain_basis(od, beta=beta, alpha=alpha, io=io)
    conc = stain_concentrations(od, source)
    scale = reference.max_concentrations / source.max_concentrations
    od_out = (conc * scale) @ reference.stain_vectors.T
    return od_to_rgb(od_out, io=io)


def synthesize_patch(
    basis_vectors: np.ndarray,
    concentrations: np.ndarray,
    io: float = DEFAULT_IO,
) -> np.ndarray:
    """Build an RGB patch from a 3x2 stain basis and an (H, W, 2) concentration map.

    Test/demo helper: the forward model the estimator is meant to invert.
    """
    od = np.asarray(concentrations, dtype=np.float64) @ np.asarray(basis_vectors).T
    return od_to_rgb(od, io=io)
