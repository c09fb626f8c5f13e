"""Synthetic abdominal phantoms with planted, measurable findings.

Each case is a small voxel grid with body, abdominal cavity, free fluid,
liver, spleen, gallbladder, kidney (optionally with a cyst) and aorta.
Positive cases receive one planted effect expressed in a single descriptor
family; everything else is drawn from the same seeded distributions for both
classes. Case ``i`` depends only on ``(seed, i)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import substream
from .volume_io import AnatomyCatalog, CaseRecord, save_nifti, write_manifest

CLASSES = (
    (1, "body"),
    (2, "abdominal_cavity"),
    (3, "free_fluid"),
    (4, "liver"),
    (5, "spleen"),
    (6, "gallbladder"),
    (7, "kidney"),
    (8, "kidney_cyst"),
    (9, "aorta"),
)
IDS = {name: cid for cid, name in CLASSES}

# effect name -> (finding column, planted descriptor)
EFFECTS = {
    "gallstone": ("gallstones", "gallbladder.atten.max"),
    "steatosis": ("hepatic_steatosis", "liver_spleen.atten.delta_mean"),
    "cyst": ("renal_cyst", "kidney_cyst.burden.occupancy"),
    "aaa": ("aortic_aneurysm", "aorta.morph.slice_diam_p90"),
    "ascites": ("ascites", "free_fluid.burden.occupancy"),
}

CYST_DETECTION_FLOOR_MM3 = 400.0


def default_catalog() -> AnatomyCatalog:
    return AnatomyCatalog(
        classes=CLASSES,
        containment=(("free_fluid", "abdominal_cavity"), ("kidney_cyst", "kidney")),
        body_class="body",
        tubular=(("aorta", "z"),),
        burden_thresholds=(130.0, 200.0, 300.0),
        contrasts=(("liver", "spleen", "mean"),),
        composites=(("kidney_cyst.morph.volume_mm3", "kidney.morph.volume_mm3",
                     "kidney_cyst.composite.kidney_fraction"),),
    )


@dataclass(frozen=True)
class PhantomPlan:
    n: int = 200
    prevalence: float = 0.2
    effect: str = "gallstone"
    noise: float = 1.0
    seed: int = 0
    shape: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.5, 1.5, 3.0)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("cohort size must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie strictly between 0 and 1")
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}; choose from {sorted(EFFECTS)}")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")

    @property
    def finding(self) -> str:
        return EFFECTS[self.effect][0]

    @property
    def planted_descriptor(self) -> str:
        return EFFECTS[self.effect][1]


@dataclass
class PhantomCase:
    case_id: str
    label: int
    hu: np.ndarray       # int16
    labels: np.ndarray   # uint8
    truth: dict


def positive_flags(plan: PhantomPlan) -> np.ndarray:
    n_pos = int(round(plan.n * plan.prevalence))
    flags = np.zeros(plan.n, dtype=int)
    flags[substream(plan.seed, 1_000_003).permutation(plan.n)[:n_pos]] = 1
    return flags


class _Grid:
    def __init__(self, shape, spacing):
        self.shape = tuple(shape)
        self.spacing = tuple(spacing)
        ax = [(np.arange(n) + 0.5) * s for n, s in zip(shape, spacing)]
        self.x, self.y, self.z = np.meshgrid(*ax, indexing="ij", sparse=True)
        self.extent = tuple(n * s for n, s in zip(shape, spacing))

    def ellipsoid(self, centre, radii):
        cx, cy, cz = centre
        rx, ry, rz = radii
        return ((self.x - cx) / rx) ** 2 + ((self.y - cy) / ry) ** 2 + ((self.z - cz) / rz) ** 2 <= 1.0

    def frac(self, fx, fy, fz):
        return fx * self.extent[0], fy * self.extent[1], fz * self.extent[2]


def make_case(plan: PhantomPlan, index: int, label: int, grid: _Grid | None = None) -> PhantomCase:
    g = grid or _Grid(plan.shape, plan.spacing)
    rng = substream(plan.seed, index)
    ex, ey, ez = g.extent

    def jitter(v, rel):
        return v * (1.0 + rel * rng.uniform(-1.0, 1.0))

    labels = np.zeros(g.shape, dtype=np.uint8)
    truth: dict = {}

    body = (((g.x - ex / 2) / jitter(0.46 * ex, 0.05)) ** 2
            + ((g.y - ey / 2) / jitter(0.40 * ey, 0.05)) ** 2 <= 1.0) & (g.z >= 0)
    labels[np.broadcast_to(body, g.shape)] = IDS["body"]
    cavity = g.ellipsoid((ex / 2, ey / 2, ez / 2), (0.38 * ex, 0.31 * ey, 0.44 * ez))
    labels[cavity] = IDS["abdominal_cavity"]

    if plan.effect == "ascites" and label:
        fluid_frac = rng.uniform(0.25, 0.6)
    else:
        fluid_frac = rng.uniform(0.0, 0.08)
    fluid = cavity & (g.z < ez / 2 - 0.44 * ez * (1 - 2 * fluid_frac))
    if fluid_frac > 0.02:
        labels[fluid] = IDS["free_fluid"]

    liver = g.ellipsoid((0.30 * ex + rng.uniform(-2, 2), 0.48 * ey, 0.62 * ez),
                        (jitter(0.22 * ex, 0.1), jitter(0.20 * ey, 0.1), jitter(0.22 * ez, 0.1)))
    labels[liver] = IDS["liver"]
    spleen = g.ellipsoid((0.72 * ex, 0.58 * ey, 0.64 * ez),
                         (jitter(0.11 * ex, 0.1), jitter(0.10 * ey, 0.1), jitter(0.14 * ez, 0.1)))
    labels[spleen] = IDS["spleen"]
    gb_centre = (0.40 * ex, 0.34 * ey, 0.50 * ez)
    gallbladder = g.ellipsoid(gb_centre, (jitter(0.09 * ex, 0.1), jitter(0.09 * ey, 0.1),
                                          jitter(0.10 * ez, 0.1)))
    labels[gallbladder] = IDS["gallbladder"]
    k_centre = (0.70 * ex, 0.66 * ey, 0.40 * ez)
    kidney = g.ellipsoid(k_centre, (jitter(0.16 * ex, 0.08), jitter(0.16 * ey, 0.08),
                                    jitter(0.21 * ez, 0.08)))
    labels[kidney] = IDS["kidney"]

    if plan.effect == "aaa" and label:
        radius = rng.uniform(15.0, 24.0)
    else:
        radius = rng.uniform(8.0, 12.0)
    truth["aorta_radius_mm"] = radius
    ax_c = (0.52 * ex, 0.68 * ey)
    aorta = (((g.x - ax_c[0]) ** 2 + (g.y - ax_c[1]) ** 2 <= radius ** 2)
             & (g.z > 0.10 * ez) & (g.z < 0.90 * ez))
    labels[aorta] = IDS["aorta"]

    cyst_mask = None
    if plan.effect == "cyst" and label:
        vol = math.exp(rng.uniform(math.log(50.0), math.log(8000.0)))
        r = (3.0 * vol / (4.0 * math.pi)) ** (1.0 / 3.0)
        truth["cyst_volume_mm3"] = vol
        if vol >= CYST_DETECTION_FLOOR_MM3:
            cyst_mask = g.ellipsoid((k_centre[0], k_centre[1], k_centre[2] + rng.uniform(-10, 10)),
                                    (r, r, r))
            labels[cyst_mask] = IDS["kidney_cyst"]

    # attenuation
    sigma = rng.uniform(8.0, 20.0) * plan.noise
    spleen_mean = rng.normal(48.0, 4.0)
    if plan.effect == "steatosis" and label:
        delta = rng.uniform(-35.0, -12.0)
    else:
        delta = rng.uniform(-5.0, 15.0)
    truth["liver_spleen_delta"] = delta
    means = {
        0: -1000.0,
        IDS["body"]: rng.normal(-60.0, 8.0),
        IDS["abdominal_cavity"]: rng.normal(15.0, 5.0),
        IDS["free_fluid"]: rng.normal(8.0, 3.0),
        IDS["liver"]: spleen_mean + delta,
        IDS["spleen"]: spleen_mean,
        IDS["gallbladder"]: rng.normal(10.0, 3.0),
        IDS["kidney"]: rng.normal(150.0, 10.0),
        IDS["kidney_cyst"]: rng.normal(6.0, 3.0),
        IDS["aorta"]: rng.normal(170.0, 12.0),
    }
    lut = np.zeros(256)
    for cid, m in means.items():
        lut[cid] = m
    hu = lut[labels] + sigma * rng.standard_normal(g.shape)
    hu[labels == 0] = -1000.0 + 5.0 * rng.standard_normal(int((labels == 0).sum()))

    if plan.effect == "gallstone" and label and (labels == IDS["gallbladder"]).any():
        gb = np.argwhere(labels == IDS["gallbladder"])
        centre = gb[rng.integers(0, gb.shape[0])]
        m = min(int(rng.integers(1, 31)), gb.shape[0])
        d2 = (((gb - centre) * np.asarray(g.spacing)) ** 2).sum(axis=1)
        stone = gb[np.argsort(d2, kind="stable")[:m]]
        peak = rng.uniform(350.0, 450.0)
        vals = peak * rng.uniform(0.6, 1.0, size=m)
        vals[0] = peak
        hu[stone[:, 0], stone[:, 1], stone[:, 2]] = vals
        truth["stone_peak_hu"] = peak
        truth["stone_voxels"] = m

    hu = np.clip(np.rint(hu), -1024, 3071).astype(np.int16)
    return PhantomCase(f"case{index:04d}", int(label), hu, labels, truth)


def generate(plan: PhantomPlan):
    """Yield every case of the plan in index order (in memory)."""
    grid = _Grid(plan.shape, plan.spacing)
    for i, lab in enumerate(positive_flags(plan)):
        yield make_case(plan, i, int(lab), grid)


def write_cohort(plan: PhantomPlan, out_dir) -> Path:
    """Write NIfTI volumes, label maps, catalog and manifest; return the manifest path."""
    out = Path(out_dir)
    (out / "cases").mkdir(parents=True, exist_ok=True)
    records = []
    for case in generate(plan):
        cdir = out / "cases" / case.case_id
        cdir.mkdir(exist_ok=True)
        vpath, lpath = cdir / "ct.nii.gz", cdir / "labels.nii.gz"
        save_nifti(vpath, case.hu, plan.spacing, compresslevel=1)
        save_nifti(lpath, case.labels, plan.spacing, compresslevel=1)
        records.append(CaseRecord(case.case_id, vpath, lpath, {plan.finding: case.label}))
    (out / "catalog.json").write_text(json.dumps(default_catalog().to_dict(), indent=2) + "\n")
    manifest = out / "manifest.csv"
    write_manifest(manifest, records, [plan.finding])
    return manifest
