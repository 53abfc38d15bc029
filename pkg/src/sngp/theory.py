"""Numerical checks of the minimax, exact-GP and bi-Lipschitz claims.

Every ``check_*`` function returns a verdict dict
``{claim, parameters, observed, bound, pass}`` consumed by ``sngp theory``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import datasets, network
from .errors import NotOnSimplex, ShapeMismatch
from .linalg import Rng, sample_gaussian, spd_solve

SIMPLEX_EPS = 1e-6


@dataclass(frozen=True)
class BregmanScore:
    """Separable Bregman score generated by ``psi``.

    ``kind="log"`` uses ``psi(p) = p log p`` and ``kind="brier"`` uses
    ``psi(p) = p^2 - 1/K``. Both generators are strictly convex, which makes
    ``score(p, p_star)`` (forecast ``p``, truth ``p_star``) strictly proper.
    """

    kind: str
    K: int

    def __post_init__(self):
        if self.kind not in ("log", "brier"):
            raise ValueError(f"unknown Bregman score {self.kind!r}")
        if self.K < 2:
            raise ValueError("need K >= 2")

    def psi(self, p):
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "log":
            return p * np.log(p)
        return p * p - 1.0 / self.K

    def dpsi(self, p):
        p = np.asarray(p, dtype=np.float64)
        if self.kind == "log":
            return np.log(p) + 1.0
        return 2.0 * p

    def entropy(self, p):
        return -np.sum(self.psi(p), axis=-1)


def _check_simplex(p, K, name):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != K:
        raise ShapeMismatch(f"{name} must have {K} entries")
    if np.any(p <= 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise NotOnSimplex(f"{name} must be strictly positive and sum to 1")
    return p


def bregman_score(score: BregmanScore, p, p_star) -> float:
    """Expected score of forecast ``p`` when labels follow ``p_star``.

    ``sum_k (p_k - p*_k) psi'(p_k) - psi(p_k)``; with ``p = p_star`` this is
    the generalized entropy ``-sum_k psi(p*_k)``.
    """
    p = _check_simplex(p, score.K, "p")
    q = _check_simplex(p_star, score.K, "p_star")
    return float(np.sum((p - q) * score.dpsi(p) - score.psi(p)))


def score_matrix(score: BregmanScore, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``S[i, j] = score(P[i], Q[j])`` for whole grids at once."""
    a = np.sum(P * score.dpsi(P) - score.psi(P), axis=1)
    return a[:, None] - score.dpsi(P) @ Q.T


def simplex_grid(K: int, step: float, eps: float = SIMPLEX_EPS) -> np.ndarray:
    """Regular simplex grid shrunk by ``eps`` toward the interior."""
    if not 0 < step <= 0.1:
        raise ValueError("grid step must be in (0, 0.1]")
    n = int(round(1.0 / step))
    rows = [c + (n - sum(c),) for c in itertools.product(range(n + 1), repeat=K - 1)
            if sum(c) <= n]
    counts = np.array(rows, dtype=np.float64)
    return eps + (1.0 - K * eps) * counts / n


def worst_case_risk(score: BregmanScore, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return score_matrix(score, P, Q).max(axis=1)


def minimax_verify(score: BregmanScore, grid_step: float) -> np.ndarray:
    """Brute-force ``argmin_p max_{p*} score(p, p*)`` over a simplex grid."""
    grid = simplex_grid(score.K, grid_step)
    risk = worst_case_risk(score, grid, grid)
    return grid[np.argmin(risk)]


def mixture_risks(score: BregmanScore, grid_step: float, p_ind, ind_mass: float):
    """Two-region toy problem: a known in-domain region and an adversarial OOD region.

    Returns the worst-case risk of the mixture predictor (``p_ind`` in-domain,
    uniform out of domain) and the risks of every grid predictor pair.
    """
    grid = simplex_grid(score.K, grid_step)
    p_ind = np.asarray(p_ind, dtype=np.float64)
    uniform = np.full(score.K, 1.0 / score.K)
    r_ind = score_matrix(score, grid, p_ind[None])[:, 0]
    r_ood = worst_case_risk(score, grid, grid)
    alternatives = ind_mass * r_ind[:, None] + (1 - ind_mass) * r_ood[None, :]
    mix = (ind_mass * score_matrix(score, p_ind[None], p_ind[None])[0, 0]
           + (1 - ind_mass) * worst_case_risk(score, uniform[None], grid)[0])
    return float(mix), alternatives


# -- exact GP ------------------------------------------------------------------

def rbf_kernel(a: np.ndarray, b: np.ndarray, amplitude: float = 1.0,
               length_scale: float = 1.0) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T)
    return amplitude * np.exp(-np.maximum(sq, 0.0) / (2 * length_scale ** 2))


class ExactGp:
    """GP regression with an RBF kernel and Gaussian noise variance ``noise``."""

    def __init__(self, x: np.ndarray, y: np.ndarray, amplitude: float = 1.0,
                 length_scale: float = 1.0, noise: float = 0.1):
        self.x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if len(self.x) == 0:
            raise ValueError("ExactGp needs at least one training point")
        self.amplitude = amplitude
        self.length_scale = length_scale
        self.noise = noise
        gram = rbf_kernel(self.x, self.x, amplitude, length_scale)
        self._system = gram + noise * np.eye(len(self.x))
        self._alpha = spd_solve(self._system, self.y)

    def posterior(self, x_test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
        ks = rbf_kernel(x_test, self.x, self.amplitude, self.length_scale)
        mean = ks @ self._alpha
        var = self.amplitude - np.sum(ks * spd_solve(self._system, ks.T).T, axis=1)
        return mean, np.clip(var, 0.0, self.amplitude)


def exact_gp_posterior(gp: ExactGp, x_test):
    return gp.posterior(x_test)


def rff_dual_posterior(phi_train: np.ndarray, y: np.ndarray, phi_test: np.ndarray,
                       ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-space (N x N) predictive mean and variance of the random-feature model.

    ``m = k*^T (K + r I)^-1 y`` and ``v = (k(x,x) - k*^T (K + r I)^-1 k*) / r``
    with ``K = Phi Phi^T``; ``r`` is the prior precision of the output weights.
    """
    gram = phi_train @ phi_train.T
    system = gram + ridge * np.eye(len(gram))
    ks = phi_test @ phi_train.T
    mean = ks @ spd_solve(system, np.asarray(y, dtype=np.float64))
    kxx = np.sum(phi_test * phi_test, axis=1)
    var = (kxx - np.sum(ks * spd_solve(system, ks.T).T, axis=1)) / ridge
    return mean, var


# -- bi-Lipschitz --------------------------------------------------------------

def scaled_to_norm(w: np.ndarray, target: float) -> np.ndarray:
    return w * (target / np.linalg.svd(w, compute_uv=False)[0])


def lipschitz_network(width: int, depth: int, alpha: float, rng: Rng,
                      activation: str = "identity") -> network.ResidualNetwork:
    """Residual stack whose every block weight has spectral norm exactly ``alpha``."""
    blocks = []
    for i in range(depth):
        w = sample_gaussian(rng.child("block", i), width, width)
        b = rng.child("bias", i).generator.standard_normal(width)
        blocks.append(network.Block(scaled_to_norm(w, alpha) if alpha > 0 else 0 * w, b))
    return network.ResidualNetwork(None, None, blocks, activation)


def bilipschitz_probe(net: network.ResidualNetwork, pairs: int, rng: Rng,
                      box: tuple[float, float] = (-2.0, 2.0)) -> dict:
    """Sample distance ratios ``||h(z1) - h(z2)|| / ||z1 - z2||`` of the residual stack."""
    alpha = max((float(np.linalg.svd(b.W, compute_uv=False)[0]) for b in net.blocks), default=0.0)
    g = rng.generator
    z1 = g.uniform(*box, size=(pairs, net.width))
    z2 = g.uniform(*box, size=(pairs, net.width))
    num = np.linalg.norm(network.forward_blocks(net, z1) - network.forward_blocks(net, z2), axis=1)
    ratios = num / np.linalg.norm(z1 - z2, axis=1)
    n = net.depth
    return {"min_ratio": float(ratios.min()), "max_ratio": float(ratios.max()),
            "alpha": alpha, "L": n + 1,
            "lower": (1 - alpha) ** n, "upper": (1 + alpha) ** n}


# -- claims --------------------------------------------------------------------

def _verdict(claim, parameters, observed, bound, ok):
    return {"claim": claim, "parameters": parameters, "observed": observed,
            "bound": bound, "pass": bool(ok)}


def check_minimax(K: int, kind: str, step: float) -> dict:
    p = minimax_verify(BregmanScore(kind, K), step)
    dist = float(np.max(np.abs(p - 1.0 / K)))
    return _verdict("minimax_uniform", {"K": K, "score": kind, "grid_step": step},
                    {"argmin": p.tolist(), "max_abs_distance_to_uniform": dist},
                    {"max_abs_distance_to_uniform": step}, dist <= step)


def check_mixture(K: int, kind: str, step: float, ind_mass: float = 0.7,
                  p_ind=None) -> dict:
    if p_ind is None:
        p_ind = np.linspace(1.0, 2.0, K)
        p_ind /= p_ind.sum()
    mix, alts = mixture_risks(BregmanScore(kind, K), step, p_ind, ind_mass)
    best = float(alts.min())
    return _verdict("mixture_optimal", {"K": K, "score": kind, "grid_step": step,
                                        "ind_mass": ind_mass, "p_ind": list(map(float, p_ind))},
                    {"mixture_risk": mix, "best_grid_risk": best},
                    {"mixture_risk_at_most": best + 1e-12}, mix <= best + 1e-12)


def check_propriety(K: int, kind: str, step: float, rng: Rng) -> dict:
    score = BregmanScore(kind, K)
    grid = simplex_grid(K, step)
    truths = grid[rng.generator.choice(len(grid), size=20, replace=False)]
    hits = np.argmin(score_matrix(score, grid, truths), axis=0)
    err = float(np.max(np.abs(grid[hits] - truths)))
    return _verdict("strict_propriety", {"K": K, "score": kind, "grid_step": step},
                    {"max_abs_argmin_error": err}, {"max_abs_argmin_error": 0.0}, err == 0.0)


def check_bilipschitz(alpha: float, depth: int, activation: str = "identity",
                      pairs: int = 1000, width: int = 16, seed: int = 0) -> dict:
    rng = Rng(seed).child("bilipschitz", activation, depth, int(round(alpha * 1000)))
    net = lipschitz_network(width, depth, alpha, rng.child("net"), activation)
    probe = bilipschitz_probe(net, pairs, rng.child("pairs"))
    ok = probe["max_ratio"] <= probe["upper"]
    if activation == "identity":
        ok = ok and probe["min_ratio"] >= probe["lower"]
    bound = {"upper": probe["upper"]}
    if activation == "identity":
        bound["lower"] = probe["lower"]
    return _verdict("bilipschitz", {"alpha": alpha, "blocks": depth, "activation": activation,
                                    "pairs": pairs},
                    {"min_ratio": probe["min_ratio"], "max_ratio": probe["max_ratio"],
                     "measured_alpha": probe["alpha"]}, bound, ok)


FAR_FIELD_OFFSET = 4.0
# |mean| may wiggle through zero at the 1e-6 level far out; the slack ignores that
FAR_FIELD_MEAN_SLACK = 1e-5


def far_field_profile(gp: ExactGp, direction: int = 1, offset: float = FAR_FIELD_OFFSET,
                      stop: float = 12.0, num: int = 60):
    """Posterior along a ray leaving 1-D training data, sorted by distance.

    The ray starts ``offset`` length scales past the outermost training input;
    closer in, the mean may still cross zero between kernel bumps.
    """
    edge = gp.x.max() if direction > 0 else gp.x.min()
    start = edge + direction * offset * gp.length_scale
    end = direction * max(stop, direction * start + 1.0)
    xs = np.linspace(start, end, num)
    mean, var = gp.posterior(xs[:, None])
    return xs, mean, var


def check_far_field(seed: int = 0, length_scale: float = 1.0) -> dict:
    data = datasets.bimodal_regression_1d(Rng(seed).child("regression"), 200)
    gp = ExactGp(data.inputs, data.labels, amplitude=1.0, length_scale=length_scale, noise=0.05)
    mono_mean = mono_var = True
    far_mean, far_var = 0.0, np.inf
    for direction in (1, -1):
        xs, mean, var = far_field_profile(gp, direction)
        abs_mean = np.abs(mean)
        mono_mean &= bool(np.all(np.diff(abs_mean) <= FAR_FIELD_MEAN_SLACK))
        mono_var &= bool(np.all(np.diff(var) >= -1e-15))
        far = np.abs(xs) >= 10.0 * length_scale
        far_mean = max(far_mean, float(abs_mean[far].max()))
        far_var = min(far_var, float(var[far].min()))
    ok = mono_mean and mono_var and far_mean <= 1e-3 and far_var >= 0.95 * gp.amplitude
    return _verdict("far_field", {"length_scale": length_scale, "amplitude": 1.0, "noise": 0.05,
                                  "offset_length_scales": FAR_FIELD_OFFSET, "seed": seed,
                                  "mean_slack": FAR_FIELD_MEAN_SLACK},
                    {"abs_mean_nonincreasing": mono_mean, "variance_nondecreasing": mono_var,
                     "max_abs_mean_far": far_mean, "min_variance_far": far_var},
                    {"max_abs_mean_far": 1e-3, "min_variance_far": 0.95}, ok)


CLAIMS = ("minimax", "mixture", "propriety", "bilipschitz", "far_field")


def run_claims(selector: str | None = None, seed: int = 0) -> list[dict]:
    chosen = CLAIMS if not selector or selector == "all" else tuple(selector.split(","))
    unknown = set(chosen) - set(CLAIMS)
    if unknown:
        raise ValueError(f"unknown claims {sorted(unknown)}; choose from {CLAIMS}")
    out = []
    steps = {2: 0.01, 3: 0.02}
    for claim in chosen:
        if claim == "minimax":
            out += [check_minimax(K, kind, steps[K]) for K in (2, 3) for kind in ("brier", "log")]
        elif claim == "mixture":
            out += [check_mixture(K, kind, steps[K]) for K in (2, 3) for kind in ("brier", "log")]
        elif claim == "propriety":
            out += [check_propriety(K, kind, steps[K], Rng(seed).child("propriety", K))
                    for K in (2, 3) for kind in ("brier", "log")]
        elif claim == "bilipschitz":
            out += [check_bilipschitz(a, n, seed=seed) for a in (0.3, 0.5, 0.9) for n in (2, 4, 6)]
            out += [check_bilipschitz(0.9, n, "relu", seed=seed) for n in (2, 4, 6)]
        elif claim == "far_field":
            out.append(check_far_field(seed))
    return out
