"""Independent oracles used by the unit and acceptance tests.

These deliberately reimplement the quantities under test by a different
route (full path enumeration, all-pairs occlusion) so the main code paths
are checked against something they do not share.
"""

import itertools

import numpy as np


def mix_matrix(retention: float, d: int) -> np.ndarray:
    return retention * np.eye(d) + (1.0 - retention) * np.ones((d, d)) / d


def brute_posterior(alphas, d: int, s0_hat, st_index: int, t: int) -> np.ndarray:
    """Bayes posterior over S_{t-1} by enumerating every path s_0..s_t.

    joint(s_0..s_t) = s0_hat[s_0] * prod_u Q_u[s_{u-1}, s_u]; condition on
    S_t = st_index and marginalize everything but s_{t-1}.
    """
    qs = [mix_matrix(a, d) for a in alphas]
    probs = np.zeros(d)
    for inner in itertools.product(range(d), repeat=t - 1):  # s_1 .. s_{t-1}
        for s0 in range(d):
            path = (s0,) + inner + (st_index,)
            p = s0_hat[s0]
            for u in range(1, t + 1):
                p *= qs[u - 1][path[u - 1], path[u]]
            probs[path[t - 1]] += p
    return probs / probs.sum()


def naive_atom_sasa(centers, radii, frames, frame_of, n_points, probe):
    """All-pairs Shrake-Rupley per atom, sharing the grid construction.

    Independent of the KD-tree candidate logic in the main implementation.
    """
    from diffold.backbone import _sphere_points

    unit = _sphere_points(n_points)
    expanded = radii + probe
    out = np.zeros(len(centers))
    for a in range(len(centers)):
        pts = centers[a] + (unit @ frames[frame_of[a]]) * expanded[a]
        exposed = np.ones(n_points, dtype=bool)
        for j in range(len(centers)):
            if j == a:
                continue
            exposed &= np.sum((pts - centers[j]) ** 2, axis=1) >= expanded[j] ** 2
        out[a] = 4.0 * np.pi * expanded[a] ** 2 * exposed.sum() / n_points
    return out
