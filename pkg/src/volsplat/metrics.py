"""Evaluation metrics: masked PSNR over color, alpha PSNR, masked SSIM."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .image import RgbaImage
from .ssim import ssim_map


@dataclass(frozen=True)
class MetricReport:
    psnr_masked: float | None  # None when the mask is empty
    psnr_alpha: float
    ssim: float | None
    mask_pixel_count: int

    def as_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return "inf" if np.isinf(v) else float(v)
        return {"psnr_masked": enc(self.psnr_masked),
                "psnr_alpha": enc(self.psnr_alpha),
                "ssim": None if self.ssim is None else float(self.ssim),
                "mask_pixel_count": self.mask_pixel_count}


def _psnr(mse: float) -> float:
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def evaluate(rendered: RgbaImage, truth: RgbaImage) -> MetricReport:
    """Compare images on pixels that are non-empty (alpha > 0) in both.

    Color PSNR and SSIM are restricted to the mask (SSIM by window centers);
    alpha PSNR always covers the whole plane.
    """
    if rendered.pixels.shape != truth.pixels.shape:
        raise ValueError("image dimensions differ")
    mask = (rendered.alpha > 0.0) & (truth.alpha > 0.0)
    n_mask = int(mask.sum())

    alpha_mse = float(np.mean((rendered.alpha - truth.alpha) ** 2))
    psnr_alpha = _psnr(alpha_mse)

    if n_mask == 0:
        return MetricReport(None, psnr_alpha, None, 0)

    diff = rendered.rgb[mask] - truth.rgb[mask]
    psnr_masked = _psnr(float(np.mean(diff ** 2)))
    maps = [ssim_map(rendered.rgb[..., c], truth.rgb[..., c])
            for c in range(3)]
    ssim_val = float(np.mean([m[mask].mean() for m in maps]))
    return MetricReport(psnr_masked, psnr_alpha, ssim_val, n_mask)


def write_report_json(reports: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(reports, fh, indent=1)
        fh.write("\n")


def write_report_csv(rows: list[dict], path: str) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
