"""Per-step observation bundle shared by the filter, the simulator and recordings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry.transforms import Pose
from .sensing import ContactPatch, OrientedContact

MODALITIES = ("ft", "gs", "fs")
MASKS = {
    "ft": frozenset({"ft"}),
    "ft+gs": frozenset({"ft", "gs"}),
    "ft+fs": frozenset({"ft", "fs"}),
    "all": frozenset({"ft", "gs", "fs"}),
}


def parse_mask(mask) -> frozenset:
    if isinstance(mask, (set, frozenset)):
        m = frozenset(mask)
    elif mask in MASKS:
        m = MASKS[mask]
    else:
        m = frozenset(part.strip() for part in str(mask).split("+"))
        if m == {"ft", "gs", "fs"}:
            m = MASKS["all"]
    if not m or not m <= set(MODALITIES):
        raise ValueError(f"invalid modality mask {mask!r}")
    return m


def mask_name(mask) -> str:
    m = parse_mask(mask)
    for name, value in MASKS.items():
        if value == m:
            return name
    return "+".join(x for x in MODALITIES if x in m)


@dataclass(eq=False)
class StepObservation:
    step: int
    gelsight_patches: list = field(default_factory=list)
    ft_contacts: list = field(default_factory=list)
    freed_voxels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    probe_path: list = field(default_factory=list)

    def masked(self, mask) -> "StepObservation":
        m = parse_mask(mask)
        return StepObservation(
            self.step,
            list(self.gelsight_patches) if "gs" in m else [],
            list(self.ft_contacts) if "ft" in m else [],
            self.freed_voxels if "fs" in m else np.zeros(0, dtype=np.int64),
            list(self.probe_path),
        )

    @property
    def gelsight_contacts(self):
        return [c for p in self.gelsight_patches for c in p.contacts]

    def all_contacts(self):
        return self.gelsight_contacts + list(self.ft_contacts)

    def to_dict(self):
        return {
            "step": self.step,
            "gelsight_patches": [p.to_dict() for p in self.gelsight_patches],
            "ft_contacts": [c.to_dict() for c in self.ft_contacts],
            "freed_voxels": np.asarray(self.freed_voxels, dtype=np.int64).tolist(),
            "probe_path": [p.to_list() for p in self.probe_path],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["step"]),
            [ContactPatch.from_dict(p) for p in d["gelsight_patches"]],
            [OrientedContact.from_dict(c) for c in d["ft_contacts"]],
            np.asarray(d["freed_voxels"], dtype=np.int64),
            [Pose.from_list(p) for p in d["probe_path"]],
        )
