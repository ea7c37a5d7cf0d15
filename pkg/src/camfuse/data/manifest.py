"""Tab-separated dataset manifest: ``subject_id  mri_path  pet_path  label``."""
from __future__ import annotations

import os
from pathlib import Path

from .nifti import load_volume, write_nifti
from .synth import VolumePair


def write_manifest(path, rows) -> None:
    with open(path, "w") as fh:
        for sid, mri, pet, label in rows:
            fh.write(f"{sid}\t{mri}\t{pet}\t{int(label)}\n")


def read_manifest(path) -> list[tuple[str, str, str, int]]:
    base = Path(path).parent
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            sid, mri, pet, label = parts
            rows.append((sid, str(base / mri), str(base / pet), int(label)))
    return rows


def load_manifest(path) -> list[VolumePair]:
    return [VolumePair(sid, load_volume(m), load_volume(p), label) for sid, m, p, label in read_manifest(path)]


def save_dataset(subjects: list[VolumePair], out_dir) -> Path:
    """Write every volume as NIfTI plus ``manifest.tsv`` with relative paths."""
    out = Path(out_dir)
    (out / "mri").mkdir(parents=True, exist_ok=True)
    (out / "pet").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in subjects:
        mri = os.path.join("mri", f"{s.subject_id}.nii")
        pet = os.path.join("pet", f"{s.subject_id}.nii")
        write_nifti(out / mri, s.mri)
        write_nifti(out / pet, s.pet)
        rows.append((s.subject_id, mri, pet, s.label))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, rows)
    return manifest
