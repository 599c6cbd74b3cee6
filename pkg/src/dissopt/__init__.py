"""Friction-Hamiltonian optimization dynamics, simulated classically.

Modules: numerics, objective, oscillator (closed forms), quantum_sim
(wavefunction propagation), kvn_sim (phase-space densities), nose
(extended-system global averages), baselines (gradient descent, bounds,
Wishart experiment), invariants and cli.
"""

__version__ = "0.1.0"
