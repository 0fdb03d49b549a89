"""Evaluation metrics for reconstructed pose sequences.

All inputs are (F, P, 3) arrays in millimeters.  Error distances compare
joints after increasingly permissive alignment: none (MPJPE), per-frame
optimal scale (N-MPJPE), per-frame similarity Procrustes (PA-MPJPE).
Threshold metrics (PCK, AUC) use inclusive comparison so an exact match
scores 100 at every threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import centralize, kabsch

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)  # 31 points


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError(f"expected (F, P, 3) sequences, got {pred.shape}")
    return pred, gt


def _joint_errors(pred, gt):
    return np.linalg.norm(pred - gt, axis=-1)  # (F, P)


def mpjpe(pred, gt):
    """Mean Euclidean joint distance over all frames and joints (mm)."""
    pred, gt = _check_pair(pred, gt)
    return float(_joint_errors(pred, gt).mean())


def mpjpe_per_frame(pred, gt):
    pred, gt = _check_pair(pred, gt)
    return _joint_errors(pred, gt).mean(axis=1)


def _scaled_pred(pred, gt, per_frame_scale=True):
    """Centralize both and apply the least-squares optimal scalar to pred."""
    pc = centralize(pred)
    gc = centralize(gt)
    if per_frame_scale:
        num = (pc * gc).sum(axis=(1, 2))
        den = (pc * pc).sum(axis=(1, 2))
        if np.any(den == 0):
            raise ValueError(f"zero-norm predicted frame {int(np.argmin(den))}")
        s = (num / den)[:, None, None]
    else:
        den = (pc * pc).sum()
        if den == 0:
            raise ValueError("zero-norm prediction")
        s = (pc * gc).sum() / den
    return s * pc, gc


def n_mpjpe(pred, gt, per_frame_scale=True):
    """MPJPE after the optimal scalar alignment of the centralized prediction."""
    pred, gt = _check_pair(pred, gt)
    sp, gc = _scaled_pred(pred, gt, per_frame_scale)
    return float(_joint_errors(sp, gc).mean())


def n_mpjpe_per_frame(pred, gt, per_frame_scale=True):
    pred, gt = _check_pair(pred, gt)
    sp, gc = _scaled_pred(pred, gt, per_frame_scale)
    return _joint_errors(sp, gc).mean(axis=1)


def _procrustes_aligned(pred, gt):
    pc = centralize(pred)
    gc = centralize(gt)
    aligned = np.empty_like(pc)
    for i in range(pc.shape[0]):
        fit = kabsch(pc[i], gc[i], with_scale=True)
        aligned[i] = fit.scale * pc[i] @ fit.rotation.T
    return aligned, gc

def pa_mpjpe(pred, gt):
    """MPJPE after per-frame similarity (rotation + scale) Procrustes alignment."""
    pred, gt = _check_pair(pred, gt)
    aligned, gc = _procrustes_aligned(pred, gt)
    return float(_joint_errors(aligned, gc).mean())


def pa_mpjpe_per_frame(pred, gt):
    pred, gt = _check_pair(pred, gt)
    aligned, gc = _procrustes_aligned(pred, gt)
    return _joint_errors(aligned, gc).mean(axis=1)


def _errors_for_mode(pred, gt, alignment):
    if alignment == "none":
        return _joint_errors(pred, gt)
    if alignment == "scale":
        sp, gc = _scaled_pred(pred, gt)
        return _joint_errors(sp, gc)
    if alignment == "procrustes":
        aligned, gc = _procrustes_aligned(pred, gt)
        return _joint_errors(aligned, gc)
    raise ValueError(f"unknown alignment mode {alignment!r}")


def pck_auc(pred, gt, threshold=PCK_THRESHOLD_MM, auc_thresholds=None, alignment="none"):
    """Percentage of joints within `threshold` mm, and its mean over a sweep.

    AUC averages PCK over `auc_thresholds` (default 0..150 mm in 5 mm steps).
    Comparison is inclusive (error <= threshold counts as correct).
    """
    pred, gt = _check_pair(pred, gt)
    if auc_thresholds is None:
        auc_thresholds = AUC_THRESHOLDS_MM
    errors = _errors_for_mode(pred, gt, alignment)
    pck = 100.0 * float((errors <= threshold).mean())
    auc = float(np.mean([100.0 * (errors <= t).mean() for t in auc_thresholds]))
    return pck, auc


@dataclass
class EvalReport:
    mpjpe_mm: float
    n_mpjpe_mm: float
    pa_mpjpe_mm: float
    pck_pct: float
    auc_pct: float
    per_frame: dict

    def to_dict(self):
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "n_mpjpe_mm": self.n_mpjpe_mm,
            "pa_mpjpe_mm": self.pa_mpjpe_mm,
            "pck_pct": self.pck_pct,
            "auc_pct": self.auc_pct,
            "per_frame": self.per_frame,
        }


def evaluate(pred, gt, pck_alignment="procrustes"):
    """Full evaluation report for a predicted sequence against ground truth."""
    pred, gt = _check_pair(pred, gt)
    pck, auc = pck_auc(pred, gt, alignment=pck_alignment)
    return EvalReport(
        mpjpe_mm=mpjpe(pred, gt),
        n_mpjpe_mm=n_mpjpe(pred, gt),
        pa_mpjpe_mm=pa_mpjpe(pred, gt),
        pck_pct=pck,
        auc_pct=auc,
        per_frame={
            "mpjpe_mm": mpjpe_per_frame(pred, gt).tolist(),
            "n_mpjpe_mm": n_mpjpe_per_frame(pred, gt).tolist(),
            "pa_mpjpe_mm": pa_mpjpe_per_frame(pred, gt).tolist(),
        },
    )
