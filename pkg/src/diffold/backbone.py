"""Backbone structure ingestion and geometric annotations.

Proteins arrive as one JSON document each: backbone atom coordinates (N, CA,
C, O) per residue, a one-letter sequence, a B-factor, and optional
precomputed SASA / secondary-structure labels.  This module parses that
format and derives the geometric quantities the featurizer needs: phi/psi
dihedrals, solvent-accessible surface area, and a coarse secondary-structure
class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# Canonical 20-letter alphabet, alphabetical by one-letter code (A=0 ... Y=19).
AA_LETTERS = "ACDEFGHIKLMNPQRSTVWY"
AA_INDEX = {c: i for i, c in enumerate(AA_LETTERS)}
N_AA_TYPES = 20

ATOM_NAMES = ("N", "CA", "C", "O")

# Van der Waals radii (Angstrom) for the backbone atom elements.
VDW_RADII = {"N": 1.55, "CA": 1.70, "C": 1.70, "O": 1.52}
DEFAULT_PROBE_RADIUS = 1.4

# Secondary-structure classes.  Three are assigned by the dihedral heuristic;
# the remaining slots of the 8-class space are reserved for richer inputs.
SS_HELIX, SS_STRAND, SS_COIL = 0, 1, 2
N_SS_CLASSES = 8

_COLLINEAR_TOL = 1e-8


class BackboneParseError(ValueError):
    """Raised when a backbone file violates the input format."""


@dataclass(eq=False)
class Residue:
    """One residue: four backbone atom positions plus per-residue scalars."""

    n_xyz: np.ndarray
    ca_xyz: np.ndarray
    c_xyz: np.ndarray
    o_xyz: np.ndarray
    b_factor: float
    aa_type: int
    sasa: float | None = None
    ss_class: int | None = None

    def atom(self, name: str) -> np.ndarray:
        return getattr(self, f"{name.lower()}_xyz")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Residue):
            return NotImplemented
        return (
            all(np.array_equal(self.atom(a), other.atom(a)) for a in ATOM_NAMES)
            and self.b_factor == other.b_factor
            and self.aa_type == other.aa_type
            and self.sasa == other.sasa
            and self.ss_class == other.ss_class
        )


@dataclass(eq=False)
class ProteinBackbone:
    """Ordered residues of one protein plus chain-break bookkeeping.

    ``chain_breaks`` lists residue indices that start a new segment, i.e. the
    peptide bond between residue ``b - 1`` and ``b`` is absent.
    """

    id: str
    residues: list[Residue]
    chain_breaks: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.residues)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProteinBackbone):
            return NotImplemented
        return (
            self.id == other.id
            and self.chain_breaks == other.chain_breaks
            and self.residues == other.residues
        )

    @property
    def sequence(self) -> str:
        return "".join(AA_LETTERS[r.aa_type] for r in self.residues)

    @property
    def true_types(self) -> np.ndarray:
        return np.array([r.aa_type for r in self.residues], dtype=np.int64)

    def ca_coords(self) -> np.ndarray:
        return np.stack([r.ca_xyz for r in self.residues])

    def atom_coords(self, name: str) -> np.ndarray:
        return np.stack([r.atom(name) for r in self.residues])

    def has_bond_before(self, i: int) -> bool:
        """Whether residue ``i`` is peptide-bonded to residue ``i - 1``."""
        return i > 0 and i not in self.chain_breaks

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ProteinBackbone":
        """Copy with every atom mapped through ``x -> R x + v``."""
        res = [
            Residue(
                n_xyz=rotation @ r.n_xyz + translation,
                ca_xyz=rotation @ r.ca_xyz + translation,
                c_xyz=rotation @ r.c_xyz + translation,
                o_xyz=rotation @ r.o_xyz + translation,
                b_factor=r.b_factor,
                aa_type=r.aa_type,
                sasa=r.sasa,
                ss_class=r.ss_class,
            )
            for r in self.residues
        ]
        return ProteinBackbone(id=self.id, residues=res, chain_breaks=list(self.chain_breaks))


def _parse_xyz(raw, residue_idx: int, atom: str) -> np.ndarray:
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise BackboneParseError(
            f"residue {residue_idx}: atom {atom} must be a 3-vector, got {raw!r}"
        )
    vec = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise BackboneParseError(f"residue {residue_idx}: non-finite coordinate for atom {atom}")
    return vec


def parse_backbone(text: str) -> ProteinBackbone:
    """Parse one backbone JSON document.

    Raises ``BackboneParseError`` naming the offending residue index on any
    malformed record, unknown sequence letter, missing atom, or non-finite
    coordinate.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BackboneParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BackboneParseError("top-level document must be an object")

    for key in ("id", "seq", "residues"):
        if key not in doc:
            raise BackboneParseError(f"missing required field {key!r}")
    seq = doc["seq"]
    records = doc["residues"]
    if not isinstance(records, list) or not records:
        raise BackboneParseError("'residues' must be a non-empty list")
    if not isinstance(seq, str) or len(seq) != len(records):
        raise BackboneParseError(
            f"sequence length {len(seq) if isinstance(seq, str) else '?'} does not match "
            f"{len(records)} residue records"
        )

    residues = []
    for idx, (letter, rec) in enumerate(zip(seq, records)):
        if letter not in AA_INDEX:
            raise BackboneParseError(f"residue {idx}: unknown amino-acid letter {letter!r}")
        if not isinstance(rec, dict):
            raise BackboneParseError(f"residue {idx}: record must be an object")
        coords = {}
        for atom in ATOM_NAMES:
            if atom not in rec:
                raise BackboneParseError(f"residue {idx}: missing atom {atom!r}")
            coords[atom] = _parse_xyz(rec[atom], idx, atom)
        if "bfactor" not in rec:
            raise BackboneParseError(f"residue {idx}: missing 'bfactor'")
        b_factor = float(rec["bfactor"])
        if not math.isfinite(b_factor) or b_factor < 0:
            raise BackboneParseError(f"residue {idx}: bfactor must be finite and >= 0")
        sasa_val = rec.get("sasa")
        if sasa_val is not None:
            sasa_val = float(sasa_val)
            if not math.isfinite(sasa_val) or sasa_val < 0:
                raise BackboneParseError(f"residue {idx}: sasa must be finite and >= 0")
        ss_val = rec.get("ss")
        if ss_val is not None:
            ss_val = int(ss_val)
            if not 0 <= ss_val < N_SS_CLASSES:
                raise BackboneParseError(
                    f"residue {idx}: ss class {ss_val} outside [0, {N_SS_CLASSES})"
                )
        residues.append(
            Residue(
                n_xyz=coords["N"],
                ca_xyz=coords["CA"],
                c_xyz=coords["C"],
                o_xyz=coords["O"],
                b_factor=b_factor,
                aa_type=AA_INDEX[letter],
                sasa=sasa_val,
                ss_class=ss_val,
            )
        )

    breaks = doc.get("breaks", [])
    if not isinstance(breaks, list):
        raise BackboneParseError("'breaks' must be a list of residue indices")
    breaks = sorted(int(b) for b in breaks)
    for b in breaks:
        if not 1 <= b < len(residues):
            raise BackboneParseError(f"chain break index {b} outside [1, {len(residues)})")
    if len(set(breaks)) != len(breaks):
        raise BackboneParseError("duplicate chain break indices")

    return ProteinBackbone(id=str(doc["id"]), residues=residues, chain_breaks=breaks)


def serialize_backbone(backbone: ProteinBackbone) -> str:
    """Inverse of :func:`parse_backbone`; round-trips exactly."""
    records = []
    for r in backbone.residues:
        rec = {name: list(r.atom(name)) for name in ATOM_NAMES}
        rec["bfactor"] = r.b_factor
        if r.sasa is not None:
            rec["sasa"] = r.sasa
        if r.ss_class is not None:
            rec["ss"] = r.ss_class
        records.append(rec)
    doc = {
        "id": backbone.id,
        "seq": backbone.sequence,
        "residues": records,
        "breaks": list(backbone.chain_breaks),
    }
    return json.dumps(doc)


def load_backbone(path) -> ProteinBackbone:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_backbone(fh.read())


def dihedral_angle(p0, p1, p2, p3) -> tuple[float, bool]:
    """Signed torsion angle (radians) of four points; flags degeneracy.

    Returns ``(angle, ok)``.  ``ok`` is False when three consecutive atoms
    are collinear within tolerance, in which case the angle is undefined.
    """
    b0 = np.asarray(p0, dtype=np.float64) - np.asarray(p1, dtype=np.float64)
    b1 = np.asarray(p2, dtype=np.float64) - np.asarray(p1, dtype=np.float64)
    b2 = np.asarray(p3, dtype=np.float64) - np.asarray(p2, dtype=np.float64)
    nb1 = np.linalg.norm(b1)
    if nb1 < _COLLINEAR_TOL:
        return 0.0, False
    b1u = b1 / nb1
    v = b0 - np.dot(b0, b1u) * b1u
    w = b2 - np.dot(b2, b1u) * b1u
    if np.linalg.norm(v) < _COLLINEAR_TOL or np.linalg.norm(w) < _COLLINEAR_TOL:
        return 0.0, False
    x = np.dot(v, w)
    y = np.dot(np.cross(b1u, v), w)
    return float(math.atan2(y, x)), True


def backbone_dihedral_angles(backbone: ProteinBackbone):
    """Per-residue (phi, psi) in radians plus defined-ness masks.

    phi_i is the C(i-1)-N(i)-CA(i)-C(i) torsion, psi_i the
    N(i)-CA(i)-C(i)-N(i+1) torsion.  Angles across chain termini or breaks
    are undefined.
    """
    n = len(backbone)
    phi = np.zeros(n)
    psi = np.zeros(n)
    phi_ok = np.zeros(n, dtype=bool)
    psi_ok = np.zeros(n, dtype=bool)
    res = backbone.residues
    for i in range(n):
        if backbone.has_bond_before(i):
            phi[i], phi_ok[i] = dihedral_angle(
                res[i - 1].c_xyz, res[i].n_xyz, res[i].ca_xyz, res[i].c_xyz
            )
        if i + 1 < n and backbone.has_bond_before(i + 1):
            psi[i], psi_ok[i] = dihedral_angle(
                res[i].n_xyz, res[i].ca_xyz, res[i].c_xyz, res[i + 1].n_xyz
            )
    return phi, psi, phi_ok, psi_ok


def dihedrals(backbone: ProteinBackbone, with_flags: bool = False):
    """N x 4 matrix of (sin phi, cos phi, sin psi, cos psi).

    Undefined angles (termini, chain breaks, degenerate geometry) encode as
    (sin, cos) = (0, 1), the zero-angle convention.  With ``with_flags`` the
    degenerate-geometry mask (N x 2 bool, phi then psi) is also returned.
    """
    if len(backbone) < 2:
        raise ValueError("dihedrals require at least 2 residues")
    phi, psi, phi_ok, psi_ok = backbone_dihedral_angles(backbone)
    feats = np.zeros((len(backbone), 4))
    feats[:, 0] = np.where(phi_ok, np.sin(phi), 0.0)
    feats[:, 1] = np.where(phi_ok, np.cos(phi), 1.0)
    feats[:, 2] = np.where(psi_ok, np.sin(psi), 0.0)
    feats[:, 3] = np.where(psi_ok, np.cos(psi), 1.0)
    if with_flags:
        # Flag only true geometric degeneracies, not ordinary termini/breaks.
        n = len(backbone)
        degen = np.zeros((n, 2), dtype=bool)
        for i in range(n):
            if backbone.has_bond_before(i) and not phi_ok[i]:
                degen[i, 0] = True
            if i + 1 < n and backbone.has_bond_before(i + 1) and not psi_ok[i]:
                degen[i, 1] = True
        return feats, degen
    return feats


def residue_frame(residue: Residue, strict: bool = False) -> np.ndarray:
    """Right-handed orthonormal frame (rows e1, e2, e3) of one residue.

    Gram-Schmidt on (C - CA, N - CA).  With ``strict`` a degenerate
    (collinear) construction raises; otherwise a deterministic completion is
    used, which keeps SASA total while staying local to the residue.
    """
    v1 = residue.c_xyz - residue.ca_xyz
    v2 = residue.n_xyz - residue.ca_xyz
    n1 = np.linalg.norm(v1)
    if n1 < _COLLINEAR_TOL:
        if strict:
            raise ValueError("degenerate frame: C and CA coincide")
        v1 = np.array([1.0, 0.0, 0.0])
        n1 = 1.0
    e1 = v1 / n1
    u = v2 - np.dot(v2, e1) * e1
    nu = np.linalg.norm(u)
    if nu < _COLLINEAR_TOL:
        if strict:
            raise ValueError("degenerate frame: N, CA, C collinear")
        # Complete from e1 alone: axis least aligned with e1.
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(e1)))] = 1.0
        u = axis - np.dot(axis, e1) * e1
        nu = np.linalg.norm(u)
    e2 = u / nu
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3])


def _sphere_points(n: int) -> np.ndarray:
    """Deterministic quasi-uniform unit-sphere points (golden spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    az = golden * i
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)


def sasa(
    backbone: ProteinBackbone,
    n_sphere_points: int = 128,
    probe_radius: float = DEFAULT_PROBE_RADIUS,
) -> np.ndarray:
    """Shrake-Rupley SASA over the four backbone atoms per residue (A^2).

    Each atom's test-point grid is oriented in its residue's local frame,
    which makes the estimate exactly rigid-motion invariant (the grid
    co-rotates with the structure), local (far-away atoms change nothing),
    and monotone under adding occluders (the grid never moves).
    """
    if n_sphere_points < 16:
        raise ValueError("n_sphere_points must be >= 16")
    if probe_radius <= 0:
        raise ValueError("probe_radius must be > 0")

    n_res = len(backbone)
    centers = np.concatenate([backbone.atom_coords(a) for a in ATOM_NAMES])
    radii = np.concatenate(
        [np.full(n_res, VDW_RADII[a]) for a in ATOM_NAMES]
    )
    residue_of = np.tile(np.arange(n_res), len(ATOM_NAMES))
    frames = [residue_frame(r) for r in backbone.residues]

    unit = _sphere_points(n_sphere_points)
    expanded = radii + probe_radius
    max_reach = expanded.max()
    tree = cKDTree(centers)

    out = np.zeros(n_res)
    for a in range(centers.shape[0]):
        rad = expanded[a]
        pts = centers[a] + (unit @ frames[residue_of[a]]) * rad
        cand = tree.query_ball_point(centers[a], rad + max_reach)
        exposed = np.ones(n_sphere_points, dtype=bool)
        for j in cand:
            if j == a:
                continue
            d2 = np.sum((pts - centers[j]) ** 2, axis=1)
            exposed &= d2 >= expanded[j] ** 2
        area = 4.0 * math.pi * rad * rad * (exposed.sum() / n_sphere_points)
        out[residue_of[a]] += area
    return out


def residue_sasa(
    backbone: ProteinBackbone,
    n_sphere_points: int = 128,
    probe_radius: float = DEFAULT_PROBE_RADIUS,
) -> np.ndarray:
    """Per-residue SASA, preferring values supplied in the input file.

    The estimator runs only when at least one residue lacks a precomputed
    value; file-supplied values always win for their residues.
    """
    supplied = [r.sasa for r in backbone.residues]
    if all(s is not None for s in supplied):
        return np.array(supplied, dtype=np.float64)
    computed = sasa(backbone, n_sphere_points=n_sphere_points, probe_radius=probe_radius)
    return np.array(
        [s if s is not None else c for s, c in zip(supplied, computed)], dtype=np.float64
    )


def secondary_structure(backbone: ProteinBackbone) -> np.ndarray:
    """Per-residue class in [0, 8): file value if present, else heuristic.

    The heuristic works off the Ramachandran region: helix for
    phi in (-100, -30) and psi in (-80, -5) degrees, strand for
    phi in (-180, -80) and psi in (80, 180), coil otherwise (including any
    residue with an undefined angle).
    """
    phi, psi, phi_ok, psi_ok = backbone_dihedral_angles(backbone)
    phi_deg = np.degrees(phi)
    psi_deg = np.degrees(psi)
    out = np.full(len(backbone), SS_COIL, dtype=np.int64)
    for i, r in enumerate(backbone.residues):
        if r.ss_class is not None:
            out[i] = r.ss_class
            continue
        if not (phi_ok[i] and psi_ok[i]):
            continue
        if -100.0 < phi_deg[i] < -30.0 and -80.0 < psi_deg[i] < -5.0:
            out[i] = SS_HELIX
        elif -180.0 < phi_deg[i] < -80.0 and 80.0 < psi_deg[i] < 180.0:
            out[i] = SS_STRAND
    return out
