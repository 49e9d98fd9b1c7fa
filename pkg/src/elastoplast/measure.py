"""Histograms on M = R x [-1, 1] with atoms on the plastic lines.

The one-step law of the constrained chain charges the lines z = +-1 with
positive mass, so a histogram on M keeps three parts: a 2-D grid over
[-Ymax, Ymax] x (-1, 1), a 1-D grid over y on each line, and one overflow bin
for |y| > Ymax.  All bins live in one flat count vector laid out as

    interior (ny * nz, row-major in y) | upper line (ny) | lower line (ny) | overflow (1)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import fmt
from .exceptions import PreconditionError


@dataclass(frozen=True)
class MeasureConfig:
    ny: int = 200
    nz: int = 100
    ymax: float = 10.0

    def __post_init__(self):
        if int(self.ny) != self.ny or int(self.nz) != self.nz or self.ny < 1 or self.nz < 1:
            raise PreconditionError(f"bin counts must be positive integers, got ny={self.ny}, nz={self.nz}")
        if not (self.ymax > 0 and math.isfinite(self.ymax)):
            raise PreconditionError(f"ymax must be finite and > 0, got {self.ymax}")

    @property
    def n_bins(self) -> int:
        return self.ny * self.nz + 2 * self.ny + 1

    @property
    def upper_offset(self) -> int:
        return self.ny * self.nz

    @property
    def lower_offset(self) -> int:
        return self.ny * self.nz + self.ny

    @property
    def overflow_index(self) -> int:
        return self.n_bins - 1

    def bin_index(self, y, z) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        iy = np.floor((y + self.ymax) / (2 * self.ymax) * self.ny).astype(np.int64)
        np.clip(iy, 0, self.ny - 1, out=iy)
        iz = np.floor((z + 1.0) * 0.5 * self.nz).astype(np.int64)
        np.clip(iz, 0, self.nz - 1, out=iz)
        idx = iy * self.nz + iz
        idx = np.where(z >= 1.0, self.upper_offset + iy, idx)
        idx = np.where(z <= -1.0, self.lower_offset + iy, idx)
        return np.where(np.abs(y) > self.ymax, self.overflow_index, idx)

    def mirror_permutation(self) -> np.ndarray:
        """Bin permutation induced by (y, z) -> (-y, -z)."""
        iy = np.arange(self.ny)
        iz = np.arange(self.nz)
        inner = ((self.ny - 1 - iy)[:, None] * self.nz + (self.nz - 1 - iz)[None, :]).ravel()
        upper = self.lower_offset + (self.ny - 1 - iy)
        lower = self.upper_offset + (self.ny - 1 - iy)
        return np.concatenate([inner, upper, lower, [self.overflow_index]])

    def representative(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Bin centres (on the line for atoms; +-ymax for overflow)."""
        idx = np.asarray(idx, dtype=np.int64)
        dy = 2 * self.ymax / self.ny
        dz = 2.0 / self.nz
        y = np.empty(idx.shape)
        z = np.empty(idx.shape)
        inner = idx < self.upper_offset
        y[inner] = -self.ymax + (idx[inner] // self.nz + 0.5) * dy
        z[inner] = -1.0 + (idx[inner] % self.nz + 0.5) * dz
        up = (idx >= self.upper_offset) & (idx < self.lower_offset)
        y[up] = -self.ymax + (idx[up] - self.upper_offset + 0.5) * dy
        z[up] = 1.0
        lo = (idx >= self.lower_offset) & (idx < self.overflow_index)
        y[lo] = -self.ymax + (idx[lo] - self.lower_offset + 0.5) * dy
        z[lo] = -1.0
        of = idx == self.overflow_index
        y[of] = self.ymax
        z[of] = 0.0
        return y, z


class EmpiricalMeasure:
    def __init__(self, cfg: MeasureConfig = MeasureConfig(), counts=None):
        self.cfg = cfg
        if counts is None:
            counts = np.zeros(cfg.n_bins, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (cfg.n_bins,):
            raise PreconditionError(f"expected {cfg.n_bins} bins, got shape {counts.shape}")
        self.counts = counts

    @classmethod
    def from_samples(cls, y, z, cfg: MeasureConfig = MeasureConfig()) -> "EmpiricalMeasure":
        idx = cfg.bin_index(np.ravel(y), np.ravel(z))
        return cls(cfg, np.bincount(idx, minlength=cfg.n_bins))

    def add(self, y, z) -> None:
        self.counts += np.bincount(self.cfg.bin_index(np.ravel(y), np.ravel(z)), minlength=self.cfg.n_bins)

    def __add__(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        _check_compatible(self, other)
        return EmpiricalMeasure(self.cfg, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def overflow(self) -> int:
        return int(self.counts[self.cfg.overflow_index])

    @property
    def overflow_fraction(self) -> float:
        return self.overflow / self.total if self.total else 0.0

    @property
    def interior(self) -> np.ndarray:
        c = self.cfg
        return self.counts[: c.upper_offset].reshape(c.ny, c.nz)

    @property
    def upper_line(self) -> np.ndarray:
        return self.counts[self.cfg.upper_offset: self.cfg.lower_offset]

    @property
    def lower_line(self) -> np.ndarray:
        return self.counts[self.cfg.lower_offset: self.cfg.overflow_index]

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.counts))

    def masses(self) -> np.ndarray:
        n = self.total
        if n == 0:
            raise PreconditionError("empty measure has no normalised masses")
        return self.counts / n

    def mirrored(self) -> "EmpiricalMeasure":
        out = np.zeros_like(self.counts)
        out[self.cfg.mirror_permutation()] = self.counts
        return EmpiricalMeasure(self.cfg, out)

    def to_csv(self, path) -> None:
        c = self.cfg
        m = self.masses()
        dy = 2 * c.ymax / c.ny
        dz = 2.0 / c.nz
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y_lo", "y_hi", "z_lo", "z_hi", "mass"])
            for iy in range(c.ny):
                for iz in range(c.nz):
                    w.writerow([fmt(-c.ymax + iy * dy), fmt(-c.ymax + (iy + 1) * dy),
                                fmt(-1 + iz * dz), fmt(-1 + (iz + 1) * dz), fmt(m[iy * c.nz + iz])])
            for line, off in ((1.0, c.upper_offset), (-1.0, c.lower_offset)):
                for iy in range(c.ny):
                    w.writerow([fmt(-c.ymax + iy * dy), fmt(-c.ymax + (iy + 1) * dy),
                                fmt(line), fmt(line), fmt(m[off + iy])])
            w.writerow(["-inf", "inf", fmt(-1.0), fmt(1.0), fmt(m[c.overflow_index])])


def _check_compatible(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> None:
    if m1.cfg != m2.cfg:
        raise PreconditionError(f"bin configurations differ: {m1.cfg} vs {m2.cfg}")


def tv_masses(p: np.ndarray, q: np.ndarray) -> float:
    return float(min(1.0, 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum()))


def tv_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Total variation on the bin sigma-algebra, 1/2 sum |p - q|."""
    _check_compatible(m1, m2)
    return tv_masses(m1.masses(), m2.masses())


def split_floor(y, z, cfg: MeasureConfig, n1: int | None = None, n2: int | None = None) -> float:
    """Sampling floor of the histogram TV estimator from one sample.

    The sample is split in halves and their TV taken; since the estimator
    noise scales as sqrt(1/n1 + 1/n2), the result is rescaled to a comparison
    between samples of sizes n1 and n2 (both default to the full sample size).
    """
    y = np.ravel(y)
    z = np.ravel(z)
    n = y.size
    if n < 4:
        raise PreconditionError("need at least 4 samples for a split-sample floor")
    half = n // 2
    a = EmpiricalMeasure.from_samples(y[:half], z[:half], cfg)
    b = EmpiricalMeasure.from_samples(y[half: 2 * half], z[half: 2 * half], cfg)
    raw = tv_distance(a, b)
    n1 = n if n1 is None else n1
    n2 = n if n2 is None else n2
    return raw * math.sqrt((1.0 / n1 + 1.0 / n2) / (2.0 / half))
