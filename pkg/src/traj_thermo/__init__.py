"""Biased quantum-trajectory ensembles of a qubit collision model.

Build the collision model, reweight its trajectory ensemble with an
Ising-like energy, construct the physical dynamics that samples the
reweighted ensemble, dilate it to a circuit and sample it.
"""

from .bias import EnergySpec, marginal_energy_histogram, mgf, reweight
from .collision import (
    KET0,
    KET1,
    KrausPair,
    ModelParams,
    TrajectoryDistribution,
    enumerate_ensemble,
    model_kraus,
    trajectory_prob,
)
from .dilation import CircuitIR, build_circuit, dilate, export_ir, import_ir
from .doob import BiasedDynamics, biased_dynamics, biased_ensemble, biased_trajectory_prob
from .simulate import run_circuit, sample_kraus, tv_distance

__all__ = [
    "KET0",
    "KET1",
    "BiasedDynamics",
    "CircuitIR",
    "EnergySpec",
    "KrausPair",
    "ModelParams",
    "TrajectoryDistribution",
    "biased_dynamics",
    "biased_ensemble",
    "biased_trajectory_prob",
    "build_circuit",
    "dilate",
    "enumerate_ensemble",
    "export_ir",
    "import_ir",
    "marginal_energy_histogram",
    "mgf",
    "model_kraus",
    "reweight",
    "run_circuit",
    "sample_kraus",
    "trajectory_prob",
    "tv_distance",
]
