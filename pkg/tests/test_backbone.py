import json
import math

import numpy as np
import pytest

from diffold.backbone import (
    AA_LETTERS,
    BackboneParseError,
    ProteinBackbone,
    Residue,
    backbone_dihedral_angles,
    dihedral_angle,
    dihedrals,
    parse_backbone,
    residue_frame,
    residue_sasa,
    sasa,
    secondary_structure,
    serialize_backbone,
)
from diffold.synthetic import build_backbone_coords, make_helix_backbone

from conftest import random_rotation
from helpers import naive_atom_sasa


def make_doc(n=2, seq=None, **overrides):
    seq = seq or "AG"[:n]
    residues = []
    for i in range(n):
        base = 10.0 * i
        residues.append(
            {
                "N": [base, 0.0, 0.0],
                "CA": [base + 1.4, 0.0, 0.0],
                "C": [base + 2.0, 1.2, 0.0],
                "O": [base + 2.0, 2.4, 0.1],
                "bfactor": 12.5,
            }
        )
    doc = {"id": "test", "seq": seq, "residues": residues, "breaks": []}
    doc.update(overrides)
    return doc


class TestParse:
    def test_two_residue_decoding(self):
        bb = parse_backbone(json.dumps(make_doc()))
        assert len(bb) == 2
        # Alphabetical one-letter order: A=0, G=5.
        assert bb.true_types.tolist() == [0, 5]
        assert bb.sequence == "AG"

    def test_missing_atom_names_residue(self):
        doc = make_doc(n=6, seq="AAAAAA")
        del doc["residues"][5]["O"]
        with pytest.raises(BackboneParseError, match="residue 5"):
            parse_backbone(json.dumps(doc))

    def test_unknown_letter(self):
        doc = make_doc(seq="AX")
        with pytest.raises(BackboneParseError, match="unknown amino-acid letter"):
            parse_backbone(json.dumps(doc))

    def test_non_finite_coordinate(self):
        doc = make_doc()
        doc["residues"][1]["CA"] = [float("nan"), 0.0, 0.0]
        with pytest.raises(BackboneParseError, match="residue 1"):
            parse_backbone(json.dumps(doc))

    def test_sequence_length_mismatch(self):
        doc = make_doc(seq="AGA")
        with pytest.raises(BackboneParseError, match="does not match"):
            parse_backbone(json.dumps(doc))

    def test_bad_break_index(self):
        doc = make_doc(breaks=[5])
        with pytest.raises(BackboneParseError, match="chain break"):
            parse_backbone(json.dumps(doc))

    def test_round_trip_identity(self, helix12):
        text = serialize_backbone(helix12)
        again = parse_backbone(text)
        assert again == helix12
        assert serialize_backbone(again) == text

    def test_round_trip_preserves_optional_fields(self):
        doc = make_doc()
        doc["residues"][0]["sasa"] = 42.25
        doc["residues"][1]["ss"] = 1
        doc["breaks"] = [1]
        bb = parse_backbone(json.dumps(doc))
        assert parse_backbone(serialize_backbone(bb)) == bb


class TestDihedrals:
    def test_planar_trans_is_pi(self):
        p = [np.array(v, dtype=float) for v in
             [(0, 1, 0), (0, 0, 0), (1, 0, 0), (1, -1, 0)]]
        angle, ok = dihedral_angle(*p)
        assert ok
        assert abs(abs(angle) - math.pi) < 1e-12

    def test_mirror_negates_sin(self, helix12):
        feats = dihedrals(helix12)
        flip = np.diag([-1.0, 1.0, 1.0])
        mirrored = helix12.transformed(flip, np.zeros(3))
        mfeats = dihedrals(mirrored)
        assert np.allclose(mfeats[:, 0], -feats[:, 0], atol=1e-9)  # sin phi
        assert np.allclose(mfeats[:, 1], feats[:, 1], atol=1e-9)   # cos phi
        assert np.allclose(mfeats[:, 2], -feats[:, 2], atol=1e-9)  # sin psi
        assert np.allclose(mfeats[:, 3], feats[:, 3], atol=1e-9)   # cos psi

    def test_rigid_motion_invariance(self, helix12, rng):
        feats = dihedrals(helix12)
        for _ in range(5):
            moved = helix12.transformed(random_rotation(rng), rng.normal(size=3) * 50)
            assert np.allclose(dihedrals(moved), feats, atol=1e-9)

    def test_unit_norm_pairs(self, helix12):
        feats = dihedrals(helix12)
        assert np.allclose(feats[:, 0] ** 2 + feats[:, 1] ** 2, 1.0, atol=1e-12)
        assert np.allclose(feats[:, 2] ** 2 + feats[:, 3] ** 2, 1.0, atol=1e-12)

    def test_terminal_encoding(self, helix12):
        feats = dihedrals(helix12)
        assert feats[0, 0] == 0.0 and feats[0, 1] == 1.0       # phi undefined at start
        assert feats[-1, 2] == 0.0 and feats[-1, 3] == 1.0     # psi undefined at end

    def test_chain_break_masks_angles(self, helix12):
        broken = ProteinBackbone(
            id="b", residues=helix12.residues, chain_breaks=[6]
        )
        phi, psi, phi_ok, psi_ok = backbone_dihedral_angles(broken)
        assert not phi_ok[6]
        assert not psi_ok[5]

    def test_degenerate_geometry_flagged(self):
        # Collinear N, CA, C makes psi/phi torsions ill-defined.
        residues = []
        for i in range(2):
            x = 3.0 * i
            residues.append(
                Residue(
                    n_xyz=np.array([x, 0.0, 0.0]),
                    ca_xyz=np.array([x + 1.0, 0.0, 0.0]),
                    c_xyz=np.array([x + 2.0, 0.0, 0.0]),
                    o_xyz=np.array([x + 2.0, 1.0, 0.0]),
                    b_factor=1.0,
                    aa_type=0,
                )
            )
        bb = ProteinBackbone(id="line", residues=residues)
        feats, degen = dihedrals(bb, with_flags=True)
        assert degen.any()
        assert feats[degen.nonzero()[0][0], 2 * degen.nonzero()[1][0]] == 0.0


def isolated_residue(offset):
    return Residue(
        n_xyz=np.array([0.0, 0.0, 0.0]) + offset,
        ca_xyz=np.array([200.0, 0.0, 0.0]) + offset,
        c_xyz=np.array([0.0, 200.0, 0.0]) + offset,
        o_xyz=np.array([0.0, 0.0, 200.0]) + offset,
        b_factor=1.0,
        aa_type=0,
    )


class TestSasa:
    def test_isolated_atoms_full_sphere(self):
        bb = ProteinBackbone(id="iso", residues=[isolated_residue(np.zeros(3))])
        total = sasa(bb, n_sphere_points=64)[0]
        expected = sum(
            4.0 * math.pi * (r + 1.4) ** 2 for r in (1.55, 1.70, 1.70, 1.52)
        )
        assert total == pytest.approx(expected, rel=1e-12)
        # The carbon sphere alone: 4 pi (1.7 + 1.4)^2 ~ 120.76 A^2.
        assert 4.0 * math.pi * 3.1**2 == pytest.approx(120.76, abs=0.01)

    def test_locality_of_distant_copies(self, helix12):
        alone = sasa(helix12, n_sphere_points=64)
        far = helix12.transformed(np.eye(3), np.array([1000.0, 0.0, 0.0]))
        combined = ProteinBackbone(
            id="both", residues=helix12.residues + far.residues
        )
        both = sasa(combined, n_sphere_points=64)
        n = len(helix12)
        assert np.allclose(both[:n], alone, atol=1e-9)
        assert np.allclose(both[n:], alone, atol=1e-9)

    def test_buried_atom_contributes_zero(self):
        # O placed 0.1 A from CA: fully inside the carbon solvent sphere
        # (|c1 - c2| + r_O <= r_C reduces to 0.1 <= 1.70 - 1.52 = 0.18).
        res = Residue(
            n_xyz=np.array([3.0, 0.0, 0.0]),
            ca_xyz=np.array([0.0, 0.0, 0.0]),
            c_xyz=np.array([0.0, 3.0, 0.0]),
            o_xyz=np.array([0.1, 0.0, 0.0]),
            b_factor=1.0,
            aa_type=0,
        )
        bb = ProteinBackbone(id="buried", residues=[res])
        centers = np.concatenate([bb.atom_coords(a) for a in ("N", "CA", "C", "O")])
        radii = np.array([1.55, 1.70, 1.70, 1.52])
        frames = [residue_frame(res)]
        per_atom = naive_atom_sasa(centers, radii, frames, [0, 0, 0, 0], 10000, 1.4)
        assert per_atom[3] == 0.0
        # Residue total matches the main implementation at the same grid.
        assert sasa(bb, n_sphere_points=10000)[0] == pytest.approx(
            per_atom.sum(), abs=4 * math.pi * 3.1**2 / 10000
        )

    def test_matches_all_pairs_oracle(self, helix12):
        mine = sasa(helix12, n_sphere_points=48)
        centers = np.concatenate(
            [helix12.atom_coords(a) for a in ("N", "CA", "C", "O")]
        )
        n = len(helix12)
        radii = np.concatenate(
            [np.full(n, r) for r in (1.55, 1.70, 1.70, 1.52)]
        )
        frames = [residue_frame(r) for r in helix12.residues]
        frame_of = list(range(n)) * 4
        per_atom = naive_atom_sasa(centers, radii, frames, frame_of, 48, 1.4)
        per_res = np.zeros(n)
        for a, area in enumerate(per_atom):
            per_res[a % n] += area
        assert np.allclose(mine, per_res, atol=1e-9)

    def test_rigid_motion_invariance(self, helix12, rng):
        base = sasa(helix12, n_sphere_points=64)
        for _ in range(3):
            moved = helix12.transformed(random_rotation(rng), rng.normal(size=3) * 30)
            assert np.allclose(sasa(moved, n_sphere_points=64), base, atol=1e-8)

    def test_monotone_under_added_residue(self, helix12):
        base = sasa(helix12, n_sphere_points=48)
        # Drop a residue next to the helix; existing SASA must not grow.
        extra = make_helix_backbone(2, seed=11).residues
        grown = ProteinBackbone(id="grown", residues=helix12.residues + extra)
        after = sasa(grown, n_sphere_points=48)
        assert np.all(after[: len(helix12)] <= base + 1e-12)

    def test_supplied_values_win(self, helix12):
        for r in helix12.residues:
            r.sasa = 7.0
        try:
            vals = residue_sasa(helix12)
            assert np.all(vals == 7.0)
        finally:
            for r in helix12.residues:
                r.sasa = None

    def test_parameter_validation(self, helix12):
        with pytest.raises(ValueError):
            sasa(helix12, n_sphere_points=8)
        with pytest.raises(ValueError):
            sasa(helix12, probe_radius=0.0)


class TestSecondaryStructure:
    def build(self, phi_deg, psi_deg):
        n = 5
        phi = np.radians(np.full(n, phi_deg))
        psi = np.radians(np.full(n, psi_deg))
        N, CA, C, O = build_backbone_coords(phi, psi)
        residues = [
            Residue(n_xyz=N[i], ca_xyz=CA[i], c_xyz=C[i], o_xyz=O[i],
                    b_factor=1.0, aa_type=0)
            for i in range(n)
        ]
        return ProteinBackbone(id="ramachandran", residues=residues)

    def test_helix_region(self):
        ss = secondary_structure(self.build(-60.0, -45.0))
        assert list(ss[1:-1]) == [0, 0, 0]

    def test_strand_region(self):
        ss = secondary_structure(self.build(-120.0, 130.0))
        assert list(ss[1:-1]) == [1, 1, 1]

    def test_terminals_are_coil(self):
        ss = secondary_structure(self.build(-60.0, -45.0))
        assert ss[0] == 2 and ss[-1] == 2

    def test_file_value_passes_through(self):
        bb = self.build(-60.0, -45.0)
        bb.residues[2].ss_class = 7
        assert secondary_structure(bb)[2] == 7

    def test_rigid_motion_invariance(self, rng):
        bb = self.build(-60.0, -45.0)
        base = secondary_structure(bb)
        moved = bb.transformed(random_rotation(rng), rng.normal(size=3))
        assert np.array_equal(secondary_structure(moved), base)


def test_alphabet_is_alphabetical():
    assert AA_LETTERS == "".join(sorted(AA_LETTERS))
    assert len(AA_LETTERS) == 20
