"""Synthetic OCT cohorts matching published zone-level summary statistics.

Each subject draws a standard-normal latent per zone and layer. An eye
mixes the subject latent with its own draw so the two eyes of a subject
correlate with ``rho_eye`` while each keeps the group mean and sd. Cells
get zone-centered Gaussian noise, so the zone average of a generated eye
equals the eye's zone value exactly (before the clamp at zero).

Zones are independent of each other and of the other layer.

With ``match_moments`` the eye zone values of each (layer, group, zone) are
finally shifted and scaled so their sample mean and sd equal the spec
exactly, which removes cohort-to-cohort drift in the group effect sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import GROUPS, LAYERS, N_ZONES, EyeSample, ZoneMap, default_zone_map

# (mean, sd) per zone Z1..Z6, micrometers
TABLE1 = {
    ("GCL", "HC"): ((41.78, 2.89), (49.22, 3.68), (28.52, 2.36), (27.23, 2.46), (28.46, 2.35), (28.39, 2.62)),
    ("GCL", "MS"): ((36.70, 6.62), (43.50, 7.71), (27.56, 3.40), (25.42, 2.55), (26.38, 2.87), (27.13, 3.43)),
    ("RNFL", "HC"): ((31.87, 4.26), (28.32, 2.99), (63.94, 10.25), (80.37, 12.93), (30.46, 4.38), (22.39, 2.73)),
    ("RNFL", "MS"): ((30.12, 5.69), (26.66, 4.17), (60.58, 12.09), (72.40, 13.40), (28.63, 4.88), (22.91, 5.66)),
}


@dataclass(frozen=True)
class GroupSpec:
    subjects: int
    left_eyes: int
    right_eyes: int
    age_mean: float
    age_sd: float
    males: int

    @property
    def both(self) -> int:
        return self.left_eyes + self.right_eyes - self.subjects


@dataclass(frozen=True)
class CohortSpec:
    zones: dict  # (layer, group) -> ((mean, sd), ...) for Z1..Z6
    groups: dict  # group -> GroupSpec
    rho_eye: float = 0.8
    cell_sd_fraction: float = 0.5
    seed: int = 0
    layers: tuple[str, ...] = field(default=LAYERS)
    match_moments: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho_eye <= 1.0:
            raise ValueError("rho_eye must lie in [0, 1]")
        if self.cell_sd_fraction < 0:
            raise ValueError("cell_sd_fraction must be >= 0")
        for layer in self.layers:
            for g in GROUPS:
                stats = self.zones[(layer, g)]
                if len(stats) != N_ZONES or any(sd <= 0 for _, sd in stats):
                    raise ValueError(f"{layer}/{g}: need six zones with positive sd")
        for g, gs in self.groups.items():
            if gs.subjects < 1:
                raise ValueError(f"{g}: need at least one subject")
            if not (0 <= gs.both and gs.left_eyes <= gs.subjects and gs.right_eyes <= gs.subjects):
                raise ValueError(f"{g}: eye counts inconsistent with subject count")
            if not 0 <= gs.males <= gs.subjects:
                raise ValueError(f"{g}: male count out of range")

    def mean_sd(self, layer: str, group: str, zone: int) -> tuple[float, float]:
        """``zone`` is 1-based."""
        return self.zones[(layer, group)][zone - 1]

    def to_dict(self) -> dict:
        return {
            "zones": {f"{l}/{g}": [list(ms) for ms in v] for (l, g), v in self.zones.items()},
            "groups": {g: vars(gs).copy() for g, gs in self.groups.items()},
            "rho_eye": self.rho_eye,
            "cell_sd_fraction": self.cell_sd_fraction,
            "seed": self.seed,
            "layers": list(self.layers),
            "match_moments": self.match_moments,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        zones = {tuple(k.split("/")): tuple(tuple(ms) for ms in v) for k, v in d["zones"].items()}
        groups = {g: GroupSpec(**v) for g, v in d["groups"].items()}
        return cls(zones, groups, d.get("rho_eye", 0.8), d.get("cell_sd_fraction", 0.5),
                   d.get("seed", 0), tuple(d.get("layers", LAYERS)), bool(d.get("match_moments", False)))


def default_paper_spec(seed: int = 0, rho_eye: float = 0.8, cell_sd_fraction: float = 0.5,
                       match_moments: bool = True) -> CohortSpec:
    """Published counts and zone statistics; ``rho_eye`` and the cell noise are our knobs."""
    groups = {
        "HC": GroupSpec(subjects=111, left_eyes=109, right_eyes=107, age_mean=44.74, age_sd=11.09, males=25),
        "MS": GroupSpec(subjects=59, left_eyes=50, right_eyes=50, age_mean=41.94, age_sd=13.85, males=10),
    }
    return CohortSpec(dict(TABLE1), groups, rho_eye, cell_sd_fraction, seed, LAYERS, match_moments)


def _eye_pattern(gs: GroupSpec, rng: np.random.Generator) -> list[tuple[str, ...]]:
    pattern = [("L", "R")] * gs.both + [("L",)] * (gs.subjects - gs.right_eyes) + [("R",)] * (gs.subjects - gs.left_eyes)
    return [pattern[i] for i in rng.permutation(len(pattern))]


def generate_cohort(spec: CohortSpec, zones: ZoneMap | None = None) -> list[EyeSample]:
    zones = zones if zones is not None else default_zone_map()
    zone_idx = zones.assignment - 1
    layout = np.random.default_rng(spec.seed)
    subjects = []
    for g in ("HC", "MS"):
        gs = spec.groups[g]
        eyes = _eye_pattern(gs, layout)
        male = np.zeros(gs.subjects, dtype=bool)
        male[layout.permutation(gs.subjects)[: gs.males]] = True
        for i in range(gs.subjects):
            subjects.append((f"{g}{i + 1:03d}", g, eyes[i], "M" if male[i] else "F"))
    seeds = np.random.SeedSequence(spec.seed).spawn(len(subjects))
    a, b = np.sqrt(spec.rho_eye), np.sqrt(1.0 - spec.rho_eye)
    counts = np.bincount(zone_idx.ravel(), minlength=N_ZONES)
    eyes_out = []
    for (sid, g, eyes, sex), ss in zip(subjects, seeds):
        rng = np.random.default_rng(ss)
        gs = spec.groups[g]
        age = float(np.clip(rng.normal(gs.age_mean, gs.age_sd), 18.0, 90.0))
        for layer in spec.layers:
            stats = np.array(spec.zones[(layer, g)])
            mu, sd = stats[:, 0], stats[:, 1]
            latent = rng.standard_normal(N_ZONES)
            for eye in ("L", "R"):
                own = rng.standard_normal(N_ZONES)
                noise = rng.standard_normal((8, 8)) * (spec.cell_sd_fraction * sd[zone_idx])
                if eye not in eyes:
                    continue
                zone_value = mu + sd * (a * latent + b * own)
                centred = noise - (np.bincount(zone_idx.ravel(), weights=noise.ravel(), minlength=N_ZONES)
                                   / counts)[zone_idx]
                quality = float(np.round(rng.uniform(25.0, 40.0), 1))
                eyes_out.append([sid, g, age, sex, eye, layer, zone_value, centred, quality])
    if spec.match_moments:
        _match_moments(eyes_out, spec)
    return [EyeSample(sid, g, age, sex, eye, layer, np.maximum(zv[zone_idx] + centred, 0.0), quality)
            for sid, g, age, sex, eye, layer, zv, centred, quality in eyes_out]


def _match_moments(eyes_out, spec: CohortSpec) -> None:
    """Affine-map zone values in place so each (layer, group) has the spec's sample mean and sd."""
    for layer in spec.layers:
        for g in GROUPS:
            rows = [e for e in eyes_out if e[5] == layer and e[1] == g]
            if len(rows) < 2:
                continue
            V = np.array([e[6] for e in rows])
            stats = np.array(spec.zones[(layer, g)])
            V = (V - V.mean(axis=0)) / V.std(axis=0, ddof=1) * stats[:, 1] + stats[:, 0]
            for e, v in zip(rows, V):
                e[6] = v
