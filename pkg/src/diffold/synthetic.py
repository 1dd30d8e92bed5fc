"""Synthetic backbone generator for tests and desk-scale experiments.

Builds idealized helical backbones by internal-coordinate chain extension
(standard bond lengths/angles, trans peptide bonds) with per-residue
phi/psi jitter so every residue has a distinct geometric signature.
"""

from __future__ import annotations

import math

import numpy as np

from .backbone import AA_LETTERS, ProteinBackbone, Residue

BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
BOND_C_O = 1.231

ANGLE_N_CA_C = math.radians(111.2)
ANGLE_CA_C_N = math.radians(116.2)
ANGLE_C_N_CA = math.radians(121.7)
ANGLE_CA_C_O = math.radians(120.8)
OMEGA_TRANS = math.pi

HELIX_PHI_DEG = -57.0
HELIX_PSI_DEG = -47.0


def extend_chain(a, b, c, bond: float, angle: float, torsion: float) -> np.ndarray:
    """Place atom D given A, B, C, the B-C-D angle, and the A-B-C-D torsion."""
    bc = c - b
    bc_u = bc / np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n_u = n / np.linalg.norm(n)
    m = np.cross(n_u, bc_u)
    d = np.array(
        [
            -bond * math.cos(angle),
            bond * math.sin(angle) * math.cos(torsion),
            bond * math.sin(angle) * math.sin(torsion),
        ]
    )
    return c + d[0] * bc_u + d[1] * m + d[2] * n_u


def build_backbone_coords(phi: np.ndarray, psi: np.ndarray):
    """N/CA/C/O coordinate arrays for given torsions (radians).

    ``phi[0]`` is unused (no preceding carbonyl); ``psi[-1]`` orients the
    final carbonyl oxygen only.
    """
    n_res = len(phi)
    N = np.zeros((n_res, 3))
    CA = np.zeros((n_res, 3))
    C = np.zeros((n_res, 3))
    O = np.zeros((n_res, 3))

    N[0] = (0.0, 0.0, 0.0)
    CA[0] = (BOND_N_CA, 0.0, 0.0)
    C[0] = CA[0] + BOND_CA_C * np.array(
        [math.cos(math.pi - ANGLE_N_CA_C), math.sin(math.pi - ANGLE_N_CA_C), 0.0]
    )
    for i in range(n_res - 1):
        N[i + 1] = extend_chain(N[i], CA[i], C[i], BOND_C_N, ANGLE_CA_C_N, psi[i])
        CA[i + 1] = extend_chain(CA[i], C[i], N[i + 1], BOND_N_CA, ANGLE_C_N_CA, OMEGA_TRANS)
        C[i + 1] = extend_chain(C[i], N[i + 1], CA[i + 1], BOND_CA_C, ANGLE_N_CA_C, phi[i + 1])
    for i in range(n_res):
        # Carbonyl O is anti to the next N within the peptide plane.
        O[i] = extend_chain(N[i], CA[i], C[i], BOND_C_O, ANGLE_CA_C_O, psi[i] + math.pi)
    return N, CA, C, O


def make_helix_backbone(
    n_residues: int,
    protein_id: str = "helix",
    seed: int = 0,
    jitter_deg: float = 6.0,
) -> ProteinBackbone:
    """Jittered alpha-helical backbone with a random sequence."""
    if n_residues < 2:
        raise ValueError("need at least 2 residues")
    rng = np.random.default_rng(seed)
    phi = np.radians(HELIX_PHI_DEG + rng.normal(0.0, jitter_deg, n_residues))
    psi = np.radians(HELIX_PSI_DEG + rng.normal(0.0, jitter_deg, n_residues))
    N, CA, C, O = build_backbone_coords(phi, psi)
    types = rng.integers(0, len(AA_LETTERS), n_residues)
    bfac = rng.uniform(5.0, 50.0, n_residues)
    residues = [
        Residue(
            n_xyz=N[i],
            ca_xyz=CA[i],
            c_xyz=C[i],
            o_xyz=O[i],
            b_factor=float(bfac[i]),
            aa_type=int(types[i]),
        )
        for i in range(n_residues)
    ]
    return ProteinBackbone(id=protein_id, residues=residues)


def make_toy_dataset(
    n_proteins: int = 5,
    min_len: int = 20,
    max_len: int = 40,
    seed: int = 0,
) -> list[ProteinBackbone]:
    """Small set of distinct helical proteins for overfit experiments."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_proteins):
        length = int(rng.integers(min_len, max_len + 1))
        out.append(
            make_helix_backbone(
                length, protein_id=f"toy{i:02d}", seed=int(rng.integers(0, 2**31))
            )
        )
    return out
