"""Dense, brute-force solvers for the two graph-regularized problems behind
the layers, used to check the layer formulas on small instances.

GCL problem:  min_E ||E - H W||_F^2 + Tr(E^T L E)
GEL problem:  min_H Tr(H^T L H) + ||X - H P||_F^2 + theta * ||H||_1
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from agnn.autodiff import Tape
from agnn.graph import build_graph, normalize
from agnn.layers import MsreluParams, gel_forward, soft_threshold

log = logging.getLogger(__name__)

MAX_DENSE_N = 500


def _dense(m) -> np.ndarray:
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m, dtype=np.float64)


def solve_gcl_exact(h: np.ndarray, w: np.ndarray, l_tilde) -> np.ndarray:
    """Closed-form minimizer E = (I + L)^-1 H W."""
    lap = _dense(l_tilde)
    n = lap.shape[0]
    if n > MAX_DENSE_N:
        raise ValueError(f"dense oracle limited to n <= {MAX_DENSE_N}, got {n}")
    system = np.eye(n) + lap
    cond = np.linalg.cond(system)
    if cond > 1e12:
        log.warning("I + L is ill-conditioned (cond ~ %.3g)", cond)
    return np.linalg.solve(system, h @ w)


def gcl_objective(e: np.ndarray, hw: np.ndarray, l_tilde) -> float:
    lap = _dense(l_tilde)
    return float(np.sum((e - hw) ** 2) + np.trace(e.T @ lap @ e))


def gcl_stationarity_residual(e: np.ndarray, hw: np.ndarray, l_tilde) -> float:
    """Frobenius norm of 2(E - HW) + 2 L E."""
    lap = _dense(l_tilde)
    return float(np.linalg.norm(2.0 * (e - hw) + 2.0 * lap @ e))


def taylor_error(l_tilde, order: int) -> float:
    """Spectral norm of (I + L)^-1 minus its Neumann series truncated at ``order``."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    lap = _dense(l_tilde)
    n = lap.shape[0]
    exact = np.linalg.inv(np.eye(n) + lap)
    series = np.zeros((n, n))
    term = np.eye(n)
    for k in range(order + 1):
        series += term
        term = -term @ lap
    resid = exact - series
    resid = 0.5 * (resid + resid.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(resid))))


@dataclass
class GelProblem:
    x: np.ndarray
    p: np.ndarray
    l_tilde: np.ndarray
    tau: float
    theta: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        self.l_tilde = _dense(self.l_tilde)
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        n, m = self.x.shape
        if self.p.shape[1] != m or self.l_tilde.shape != (n, n):
            raise ValueError(f"inconsistent shapes: x {self.x.shape}, p {self.p.shape}, "
                             f"l_tilde {self.l_tilde.shape}")

    @property
    def lipschitz(self) -> float:
        """2 (||L||_2 + ||P P^T||_2), the gradient Lipschitz constant of the smooth part."""
        return 2.0 * (np.linalg.norm(self.l_tilde, 2) + np.linalg.norm(self.p @ self.p.T, 2))

    def smooth(self, h: np.ndarray) -> float:
        return float(np.trace(h.T @ self.l_tilde @ h) + np.sum((self.x - h @ self.p) ** 2))

    def grad(self, h: np.ndarray) -> np.ndarray:
        return 2.0 * self.l_tilde @ h + 2.0 * (h @ self.p - self.x) @ self.p.T

    def objective(self, h: np.ndarray) -> float:
        return self.smooth(h) + self.theta * float(np.sum(np.abs(h)))

    def prox_step(self, h: np.ndarray) -> np.ndarray:
        return soft_threshold(h - self.grad(h) / self.tau, self.theta / self.tau)


def solve_gel_pgd(prob: GelProblem, h0: np.ndarray, iters: int = 500, tol: float = 0.0):
    """Proximal gradient (ISTA) with step 1/tau; returns (h_star, objective trace).

    Stops early once an iterate stops moving (max abs change <= ``tol``).
    """
    if prob.tau < prob.lipschitz * (1.0 - 1e-12):
        raise ValueError(f"tau={prob.tau} is below the Lipschitz bound {prob.lipschitz}")
    h = np.asarray(h0, dtype=np.float64).copy()
    trace = [prob.objective(h)]
    for _ in range(iters):
        nxt = prob.prox_step(h)
        moved = float(np.max(np.abs(nxt - h))) if h.size else 0.0
        h = nxt
        trace.append(prob.objective(h))
        if moved <= tol:
            break
    return h, np.array(trace)


def fixed_point_residual(prob: GelProblem, h: np.ndarray) -> float:
    return float(np.linalg.norm(h - prob.prox_step(h)))


def verify_gel_layer_form(prob: GelProblem, h: np.ndarray, lam: float | None = None) -> float:
    """Max abs deviation between one PGD step and the GEL layer with
    W_e1 = I - (2/tau) P P^T, W_e2 = (2/tau) P^T, lambda = 2/tau.

    Both sides use exact soft thresholding with threshold theta/tau.
    """
    tau = prob.tau
    lam = 2.0 / tau if lam is None else lam
    d = prob.p.shape[0]
    step = prob.prox_step(h)

    tape = Tape()
    w_e1 = np.eye(d) - (2.0 / tau) * prob.p @ prob.p.T
    w_e2 = (2.0 / tau) * prob.p.T
    thr = prob.theta / tau
    # MsreluParams only carries the threshold here; prox='soft_threshold' reads theta1
    params = MsreluParams(thr, thr) if thr > 0 else MsreluParams(1e-300, 1e-300)
    layer = gel_forward(tape, tape.const(h), tape.const(prob.x), prob.l_tilde, tape.const(w_e1),
                        tape.const(w_e2), lam, params, prox="soft_threshold")
    return float(np.max(np.abs(step - layer.value))) if h.size else 0.0


# ---------------------------------------------------------------------------
# random instances and the verification report


def random_graph(rng: np.random.Generator, n: int, p_edge: float = 0.3):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p_edge
    return build_graph(np.column_stack([iu[keep], ju[keep]]), n)


def random_gel_problem(rng: np.random.Generator, n: int = 6, d: int = 3, m: int = 5,
                       theta: float = 0.1) -> GelProblem:
    lap = normalize(random_graph(rng, n)).l_tilde.toarray()
    x = rng.standard_normal((n, m))
    p = rng.standard_normal((d, m)) / np.sqrt(m)
    prob = GelProblem(x=x, p=p, l_tilde=lap, tau=1.0, theta=theta)
    prob.tau = prob.lipschitz * 1.01
    return prob


def _check(name, seed, metric, threshold):
    return {"check": name, "seed": int(seed), "metric": float(metric), "threshold": threshold,
            "pass": bool(metric < threshold)}


def run_checks(seed: int = 0, instances: int = 20, theta: float = 0.1) -> list[dict]:
    """Run every oracle check on seeded random instances; ``theta`` weights the l1 term."""
    report = []
    for k in range(instances):
        s = seed * 1000 + k
        rng = np.random.default_rng(s)
        n = int(rng.integers(2, 51))
        ops = normalize(random_graph(rng, n, p_edge=float(rng.uniform(0.05, 0.5))))
        lap = ops.l_tilde.toarray()
        h = rng.standard_normal((n, 4))
        w = rng.standard_normal((4, 3))
        e = solve_gcl_exact(h, w, lap)
        report.append(_check("gcl_stationarity", s, gcl_stationarity_residual(e, h @ w, lap), 1e-8))
        report.append(_check("first_order_propagator", s,
                             float(np.max(np.abs((np.eye(n) - lap) - ops.a_hat.toarray()))), 1e-12))
        mu = np.linalg.eigvalsh(lap)
        by_eigs = float(np.max(np.abs(1.0 / (1.0 + mu) - (1.0 - mu))))
        report.append(_check("taylor_order1_vs_eigen", s, abs(taylor_error(lap, 1) - by_eigs), 1e-10))
        first_order = ops.a_hat.toarray() @ h @ w
        gap = gcl_objective(e, h @ w, lap) - gcl_objective(first_order, h @ w, lap)
        report.append(_check("exact_beats_first_order", s, max(gap, 0.0), 1e-10))

        prob = random_gel_problem(rng, theta=theta)
        h0 = rng.standard_normal((prob.x.shape[0], prob.p.shape[0]))
        report.append(_check("gel_layer_form", s, verify_gel_layer_form(prob, h0), 1e-10))
        h_star, trace = solve_gel_pgd(prob, h0, iters=20000, tol=1e-14)
        report.append(_check("pgd_monotone", s, max(float(np.max(np.diff(trace))), 0.0), 1e-12))
        report.append(_check("pgd_fixed_point", s, fixed_point_residual(prob, h_star), 1e-8))
    return report


def report_json(report: list[dict]) -> str:
    return json.dumps({"checks": report, "all_pass": all(r["pass"] for r in report)},
                      indent=2, sort_keys=True) + "\n"
