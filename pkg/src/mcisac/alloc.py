"""Power and subcarrier allocation between sensing and communication.

The sequential learning formulation is reduced to its single-slot
oracle-state problem: maximise the sensing MI subject to a communication MI
floor, a power budget and an interference cap. All logs are base 2.
"""

import json
from dataclasses import dataclass

import numpy as np

from .kpi import mi_reward

LN2 = np.log(2.0)


def _level_uncapped(g, total_power):
    """Exact water level over the sorted active set."""
    gs = np.sort(g[g > 0])[::-1]
    inv_cum = np.cumsum(1.0 / gs)
    k = np.arange(1, len(gs) + 1)
    mu = (total_power + inv_cum) / k
    valid = mu > 1.0 / gs
    return mu[np.flatnonzero(valid)[-1]]


def waterfilling(gains, total_power, caps=None, rtol=1e-13):
    """Rate-maximising powers ``p_n = clip(mu - 1/g_n, 0, cap_n)`` with ``sum p = total_power``.

    Without caps the level ``mu`` is exact (sorted active set); with caps it is
    found by bisection. If the caps sum to less than the budget every
    subcarrier is filled to its cap.

    Raises
    ------
    ValueError
        If all gains are zero or the budget is negative.
    """
    g = np.asarray(gains, dtype=float)
    if np.any(g < 0):
        raise ValueError("gains must be >= 0")
    if total_power < 0:
        raise ValueError("total_power must be >= 0")
    if not np.any(g > 0):
        raise ValueError("all gains are zero")
    if total_power == 0:
        return np.zeros_like(g)
    inv = 1.0 / np.where(g > 0, g, np.nan)
    if caps is None or np.all(np.isinf(caps)):
        mu = _level_uncapped(g, total_power)
        return np.where(g > 0, np.maximum(mu - np.nan_to_num(inv, nan=np.inf), 0.0), 0.0)
    cap = np.where(g > 0, np.asarray(caps, dtype=float), 0.0)
    if np.sum(cap) <= total_power:
        return cap.copy()
    inv = np.nan_to_num(inv, nan=np.inf)

    def fill(mu):
        return np.clip(mu - inv, 0.0, cap)

    lo, hi = 0.0, total_power + np.min(inv)
    while fill(hi).sum() < total_power:
        hi *= 2.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if fill(mid).sum() < total_power:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    p = fill(hi)
    return p * (total_power / p.sum())


def rate_bits(gains, powers):
    return float(np.sum(np.log2(1.0 + np.asarray(gains) * np.asarray(powers))))


def min_power_for_rate(gains, rate):
    """Smallest budget whose waterfilling reaches ``rate`` bits (``inf`` with no usable gain).

    On an active set of the ``k`` best gains the rate is
    ``sum log2(g_i mu)``, which fixes the level in closed form.
    """
    g = np.asarray(gains, dtype=float)
    if rate <= 0:
        return 0.0
    gs = np.sort(g[g > 0])[::-1]
    if len(gs) == 0:
        return np.inf
    log_cum = np.cumsum(np.log2(gs))
    for k in range(1, len(gs) + 1):
        mu = 2.0 ** ((rate - log_cum[k - 1]) / k)
        nxt = gs[k] if k < len(gs) else 0.0
        if mu * nxt <= 1.0:
            return float(np.sum(mu - 1.0 / gs[:k]))
    return np.inf


def edge_weights(n):
    """Squared distance of each subcarrier from the band centre."""
    return (np.arange(n) - (n - 1) / 2.0) ** 2


def rms_bandwidth(powers, subcarrier_spacing=1.0):
    """Power-weighted RMS frequency spread around the band centre (Hz)."""
    p = np.asarray(powers, dtype=float)
    if p.sum() <= 0:
        return 0.0
    return float(subcarrier_spacing * np.sqrt(np.sum(p * edge_weights(len(p))) / p.sum()))


def crb_aware_scale(gains, total_power):
    """Normalisation ``kappa`` making the edge term peak at the waterfilling rate."""
    n = len(gains)
    return rate_bits(gains, waterfilling(gains, total_power)) / (total_power * edge_weights(n).max())


def crb_aware_allocation(n, total_power, weight, gains, kappa=None):
    """Trade rate against RMS bandwidth over ``n`` subcarriers.

    Maximises ``(1-w) sum log2(1 + g p) + w kappa sum p d^2`` with
    ``d = index - (n-1)/2`` over the simplex ``sum p = total_power, p >= 0``.
    The objective is concave, so the KKT conditions are sufficient: for a
    multiplier ``mu`` every active subcarrier has
    ``p = (1-w) / (ln2 (mu - w kappa d^2)) - 1/g``; ``mu`` is found by bisection.

    ``weight=1`` splits the budget over the two band edges, ``weight=0`` is
    waterfilling.
    """
    if not 0 <= weight <= 1:
        raise ValueError("weight must be in [0, 1]")
    g = np.asarray(gains, dtype=float)
    if len(g) != n:
        raise ValueError("gains length must equal n")
    if weight == 0:
        return waterfilling(g, total_power)
    d2 = edge_weights(n)
    if weight == 1:
        p = np.zeros(n)
        edges = np.flatnonzero(d2 == d2.max())
        p[edges] = total_power / len(edges)
        return p
    kappa = crb_aware_scale(g, total_power) if kappa is None else kappa
    lin = weight * kappa * d2
    a = (1.0 - weight) / LN2

    def powers(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = a / (mu - lin) - np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)
        return np.where(mu > lin, np.maximum(p, 0.0), np.inf)

    lo = lin.max()
    hi = np.max(a * g + lin) + 1.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        s = powers(mid).sum()
        if s > total_power:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    p = powers(hi)
    return p * (total_power / p.sum()) if p.sum() > 0 else p


@dataclass
class AllocationProblem:
    """Single-slot sensing/communication allocation instance.

    Attributes
    ----------
    g_u, g_s : ndarray
        Per-subcarrier SINR-per-watt toward the user and the sensing receiver.
    total_power : float
    rate_floor : float
        Minimum communication MI (bits).
    interference : ndarray, optional
        ``J x N`` interference map applied to sensing powers.
    interference_cap : ndarray, optional
        Length ``J`` caps (linear power).
    weight : float
        Scalarisation weight on sensing.
    """

    g_u: np.ndarray
    g_s: np.ndarray
    total_power: float
    rate_floor: float = 0.0
    interference: np.ndarray = None
    interference_cap: np.ndarray = None
    weight: float = 0.5

    def __post_init__(self):
        self.g_u = np.asarray(self.g_u, dtype=float)
        self.g_s = np.asarray(self.g_s, dtype=float)
        if self.g_u.shape != self.g_s.shape or self.g_u.ndim != 1:
            raise ValueError("g_u and g_s must be 1-D of equal length")
        if np.any(self.g_u < 0) or np.any(self.g_s < 0):
            raise ValueError("gains must be >= 0")
        if self.total_power <= 0:
            raise ValueError("total_power must be > 0")
        if self.rate_floor < 0:
            raise ValueError("rate_floor must be >= 0")
        if not 0 <= self.weight <= 1:
            raise ValueError("weight must be in [0, 1]")
        if (self.interference is None) != (self.interference_cap is None):
            raise ValueError("interference and interference_cap go together")
        if self.interference is not None:
            self.interference = np.atleast_2d(np.asarray(self.interference, dtype=float))
            self.interference_cap = np.atleast_1d(np.asarray(self.interference_cap, dtype=float))
            if self.interference.shape != (len(self.interference_cap), self.n):
                raise ValueError("interference must be J x N with J caps")
            if np.any(self.interference < 0) or np.any(self.interference_cap < 0):
                raise ValueError("interference entries and caps must be >= 0")

    @property
    def n(self):
        return len(self.g_u)

    def replace(self, **kw):
        d = dict(g_u=self.g_u, g_s=self.g_s, total_power=self.total_power, rate_floor=self.rate_floor,
                 interference=self.interference, interference_cap=self.interference_cap,
                 weight=self.weight)
        d.update(kw)
        return AllocationProblem(**d)


@dataclass
class AllocationResult:
    powers: np.ndarray
    assignment: np.ndarray
    m_s: float
    m_u: float
    feasible: bool

    def to_json(self, path=None):
        d = {"powers": self.powers.tolist(), "assignment": self.assignment.tolist(),
             "m_s_bits": self.m_s, "m_u_bits": self.m_u, "feasible": self.feasible}
        text = json.dumps(d, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _interference_caps(problem, mask):
    """Per-subcarrier caps from rows touching a single sensing subcarrier; ``None`` if no map."""
    if problem.interference is None:
        return None
    caps = np.full(problem.n, np.inf)
    for row, c in zip(problem.interference, problem.interference_cap):
        support = np.flatnonzero((row > 0) & mask)
        if len(support) == 1:
            k = support[0]
            caps[k] = min(caps[k], c / row[k])
    return caps


def _enforce_interference(problem, p_s):
    """Scale sensing powers down row by row until every coupled constraint holds."""
    if problem.interference is None:
        return p_s
    p = p_s.copy()
    for _ in range(1000):
        load = problem.interference @ p
        viol = load > problem.interference_cap * (1 + 1e-12)
        if not np.any(viol):
            break
        for j in np.flatnonzero(viol):
            support = problem.interference[j] > 0
            p[support] *= problem.interference_cap[j] / load[j]
    return p


def _allocate(problem, comm_mask):
    """Powers for a fixed assignment; ``None`` when the rate floor is unreachable."""
    n = problem.n
    p = np.zeros(n)
    g_u = np.where(comm_mask, problem.g_u, 0.0)
    p_u = min_power_for_rate(g_u, problem.rate_floor)
    if p_u > problem.total_power * (1 + 1e-12):
        return None
    if p_u > 0:
        p += waterfilling(g_u, min(p_u, problem.total_power))
    rest = problem.total_power - p.sum()
    sense = ~comm_mask & (problem.g_s > 0)
    if rest > 0 and np.any(sense):
        g_s = np.where(sense, problem.g_s, 0.0)
        caps = _interference_caps(problem, sense)
        p_s = waterfilling(g_s, rest, caps)
        p += _enforce_interference(problem, p_s)
    return p


def _result(problem, comm_mask, p, feasible):
    w = np.where(comm_mask, "u", "s")
    m_s, m_u = mi_reward(w, p, np.vstack([problem.g_s, problem.g_u]))
    return AllocationResult(p, w, m_s, m_u, feasible)


def evaluate_assignment(problem, comm_mask):
    """Allocate powers for a given assignment (exhaustive-search building block)."""
    comm_mask = np.asarray(comm_mask, dtype=bool)
    p = _allocate(problem, comm_mask)
    if p is None:
        return _result(problem, comm_mask, np.zeros(problem.n), False)
    return _result(problem, comm_mask, p, True)


def greedy_mi_allocation(problem: AllocationProblem):
    """Greedy assignment plus waterfilling for the single-slot MI problem.

    Communication takes a prefix of the subcarriers ranked by ``g_u`` (and,
    as a second candidate ranking, by ``g_u / g_s``) with the least power that
    meets the rate floor; the rest goes to sensing with capped waterfilling.
    The best feasible prefix over both rankings is returned; if even all
    subcarriers and the full budget cannot meet the floor the result is
    flagged infeasible.
    """
    n = problem.n
    if problem.rate_floor == 0:
        mask = np.zeros(n, dtype=bool)
        return _result(problem, mask, _allocate(problem, mask), True)
    if rate_bits(problem.g_u, waterfilling(problem.g_u, problem.total_power)
                 if np.any(problem.g_u > 0) else np.zeros(n)) < problem.rate_floor * (1 - 1e-12):
        return _result(problem, np.ones(n, dtype=bool), np.zeros(n), False)
    with np.errstate(divide="ignore"):
        ratio = np.where(problem.g_s > 0, problem.g_u / np.where(problem.g_s > 0, problem.g_s, 1), np.inf)
    best = None
    for key in (problem.g_u, ratio):
        order = np.argsort(-key, kind="stable")
        for k in range(1, n + 1):
            mask = np.zeros(n, dtype=bool)
            mask[order[:k]] = True
            p = _allocate(problem, mask)
            if p is None:
                continue
            res = _result(problem, mask, p, True)
            if best is None or res.m_s > best.m_s + 1e-12:
                best = res
    if best is None:
        return _result(problem, np.ones(n, dtype=bool), np.zeros(n), False)
    return best


def _non_dominated(points):
    pts = sorted(set(points), key=lambda t: (-t[0], -t[1]))
    out = []
    best_u = -np.inf
    for s, u in pts:
        if u > best_u + 1e-12:
            out.append((s, u))
            best_u = u
    return sorted(out)


def scalarized_pareto(problem: AllocationProblem, weights, n_floors=25):
    """Non-dominated ``(M_s, M_u)`` points from linear scalarisation.

    For each weight ``w`` the rate floor is swept over ``n_floors`` values in
    ``[0, max rate]`` and the greedy solution maximising
    ``w M_s + (1-w) M_u`` is kept. Returns points sorted by ``M_s``.
    """
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if np.any((weights < 0) | (weights > 1)):
        raise ValueError("weights must be in [0, 1]")
    c_max = rate_bits(problem.g_u, waterfilling(problem.g_u, problem.total_power))
    floors = np.linspace(0.0, c_max, n_floors)
    sols = [greedy_mi_allocation(problem.replace(rate_floor=c)) for c in floors]
    sols = [s for s in sols if s.feasible]
    points = []
    for w in weights:
        scores = [w * s.m_s + (1 - w) * s.m_u for s in sols]
        s = sols[int(np.argmax(scores))]
        points.append((s.m_s, s.m_u))
    return _non_dominated(points)


def frontier_area(points, ref=(0.0, 0.0)):
    """Area dominated by a staircase frontier relative to ``ref``."""
    pts = sorted(points)
    area = 0.0
    prev_s = ref[0]
    for i, (s, _) in enumerate(pts):
        u_max = max(u for _, u in pts[i:])
        area += (s - prev_s) * max(u_max - ref[1], 0.0)
        prev_s = s
    return area
