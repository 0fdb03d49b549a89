"""Sequence-level Procrustean alignment and the generalized Procrustes mean.

Aligning a shape sequence onto a common reference removes per-frame rigid
motion: the aligned set has the transversal property (two aligned members
related by a rotation are equal), which is what makes the reference +
deformation split of a sequence well defined.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateShapeError
from .geometry import centralize, kabsch


@dataclass
class AlignmentResult:
    """Per-frame rotations aligning a sequence onto a reference shape.

    aligned[i] is rotations[i] applied to the centralized input frame;
    per_frame_residual[i] is its Frobenius distance to the (centralized)
    reference.
    """

    aligned: np.ndarray  # (F, P, 3)
    rotations: np.ndarray  # (F, 3, 3)
    per_frame_residual: np.ndarray  # (F,)


@dataclass
class GeneralizedProcrustesResult:
    reference: np.ndarray  # (P, 3), centralized
    alignment: AlignmentResult
    objective_trace: list = field(default_factory=list)


def align_to_reference(sequence, reference, threads=1):
    """Rotate every frame of an (F, P, 3) sequence onto a common reference.

    Each frame and the reference are centralized, then the frame rotation is
    the Kabsch minimizer of ||R S_i - ref||_F (no scaling).
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if sequence.ndim != 3 or sequence.shape[2] != 3:
        raise ValueError(f"expected sequence (F, P, 3), got {sequence.shape}")
    if reference.shape != sequence.shape[1:]:
        raise ValueError(
            f"reference shape {reference.shape} does not match frames {sequence.shape[1:]}"
        )
    ref_c = centralize(reference)
    frames_c = centralize(sequence)

    def solve(i):
        try:
            return kabsch(frames_c[i], ref_c).rotation
        except DegenerateShapeError as exc:
            raise DegenerateShapeError(f"frame {i}: {exc}") from exc

    n = sequence.shape[0]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rotations = np.stack(list(pool.map(solve, range(n))))
    else:
        rotations = np.stack([solve(i) for i in range(n)])
    aligned = np.matmul(frames_c, np.transpose(rotations, (0, 2, 1)))
    residuals = np.linalg.norm(aligned - ref_c[None], axis=(1, 2))
    return AlignmentResult(aligned=aligned, rotations=rotations, per_frame_residual=residuals)


def generalized_procrustes(sequence, tol=1e-10, max_iters=100, threads=1):
    """Alternating estimation of a common reference shape and frame rotations.

    Holding the reference, rotations are the per-frame Kabsch solutions;
    holding rotations, the reference is the mean of the aligned frames.  The
    recorded objective (sum of squared aligned residuals) is non-increasing.
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    reference = centralize(sequence[0])
    trace = []
    previous = np.inf
    for _ in range(max_iters):
        result = align_to_reference(sequence, reference, threads=threads)
        reference = result.aligned.mean(axis=0)
        objective = float(((result.aligned - reference[None]) ** 2).sum())
        trace.append(objective)
        if previous - objective < tol:
            break
        previous = objective
    final = align_to_reference(sequence, reference, threads=threads)
    return GeneralizedProcrustesResult(
        reference=reference, alignment=final, objective_trace=trace
    )
