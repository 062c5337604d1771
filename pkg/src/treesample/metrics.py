"""Approximation-error metrics: the budget-free KL surrogate (entropy plus
expected unnormalized density), the exact KL when an oracle supplies log Z,
and the energy/entropy split of the gap.

Atom approximations are scored exactly from their weights; samplers are
scored by Monte Carlo with a reported standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .logmath import NEG_INF
from .model import FactorGraph


@dataclass
class EvalReport:
    method: str
    delta_kl: float
    num_samples: int
    stderr: float | None = None
    kl: float | None = None
    log_z: float | None = None
    delta_energy: float | None = None
    delta_entropy: float | None = None
    budget: int | None = None
    budget_spent: int | None = None
    oracle: str | None = None
    wall_clock_s: float | None = None  # telemetry only, excluded from determinism

    def to_json_dict(self) -> dict:
        def enc(v):
            if v is None or isinstance(v, (int, str)):
                return v
            if math.isnan(v):
                return "nan"
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        return {k: enc(v) for k, v in self.__dict__.items()}


def delta_kl_atoms(atoms, graph: FactorGraph) -> float:
    """Exact surrogate for an atom approximation:
    sum_i p_i log p_i - sum_i p_i * log-density(x_i). No sampling involved."""
    total = 0.0
    for x, w in zip(atoms.atoms, atoms.weights):
        ld = graph.log_unnormalized_density(x)
        if ld == NEG_INF:
            return math.inf
        total += w * (math.log(w) - ld)
    return total


def delta_kl_sampler(sampler, graph: FactorGraph, num_samples: int, seed: int = 0):
    """(estimate, stderr) of E[log P_X(X) - log-density(X)] over the sampler."""
    rng = np.random.default_rng(seed)
    terms = np.empty(num_samples)
    for i in range(num_samples):
        x = sampler.sample(rng)
        terms[i] = sampler.log_density(x) - graph.log_unnormalized_density(x)
    stderr = float(np.std(terms, ddof=1) / math.sqrt(num_samples)) if num_samples > 1 else 0.0
    return float(np.mean(terms)), stderr


def _approx_energy_entropy(approx, graph: FactorGraph, num_samples: int, seed: int):
    """(E_approx[sum psi], H[approx]) exactly for atoms, by MC for samplers."""
    atoms = getattr(approx, "atoms", None)
    if atoms is not None:
        energy = 0.0
        entropy = 0.0
        for x, w in zip(atoms, approx.weights):
            ld = graph.log_unnormalized_density(x)
            energy = energy + w * ld if ld > NEG_INF else NEG_INF
            entropy -= w * math.log(w)
        return energy, entropy
    rng = np.random.default_rng(seed)
    e_terms = np.empty(num_samples)
    h_terms = np.empty(num_samples)
    for i in range(num_samples):
        x = approx.sample(rng)
        e_terms[i] = graph.log_unnormalized_density(x)
        h_terms[i] = -approx.log_density(x)
    return float(np.mean(e_terms)), float(np.mean(h_terms))


def energy_entropy_deltas(approx, oracle, graph: FactorGraph, num_samples: int = 10_000, seed: int = 0):
    """(delta_energy, delta_entropy) against an exact oracle.

    delta_energy = E*[sum psi] - E_approx[sum psi] (lower is better);
    delta_entropy = H[approx] - H[P*] (higher is better).
    """
    e_star = oracle.expected_log_density()
    h_star = oracle.entropy()
    e_approx, h_approx = _approx_energy_entropy(approx, graph, num_samples, seed)
    delta_energy = e_star - e_approx if e_approx > NEG_INF else math.inf
    return delta_energy, h_approx - h_star


def evaluate_method(
    method: str,
    approx,
    graph: FactorGraph,
    oracle=None,
    num_samples: int = 10_000,
    seed: int = 0,
    budget: int | None = None,
) -> EvalReport:
    """Full report for one finished approximation; exact KL and the
    energy/entropy split are filled in only when an oracle is available."""
    atoms = getattr(approx, "atoms", None)
    if atoms is not None:
        delta_kl = delta_kl_atoms(approx, graph)
        stderr = 0.0
        num = len(atoms)
    else:
        delta_kl, stderr = delta_kl_sampler(approx, graph, num_samples, seed)
        num = num_samples
    spent = getattr(approx, "budget_spent", None)
    if spent is None:
        spent = getattr(getattr(approx, "ledger", None), "spent", None)
    report = EvalReport(
        method=method,
        delta_kl=delta_kl,
        num_samples=num,
        stderr=stderr,
        budget=budget,
        budget_spent=spent,
    )
    if oracle is not None:
        report.log_z = oracle.log_z
        report.kl = delta_kl + oracle.log_z
        de, dh = energy_entropy_deltas(approx, oracle, graph, num_samples, seed + 1)
        report.delta_energy = de
        report.delta_entropy = dh
        report.oracle = type(oracle).__name__
    return report
