"""Length-direction decoupled optimization: least squares, halfspaces and shallow networks."""
from .gdnp import GdnpConfig, NormState, bisection, gdnp_run
from .harness import ExperimentConfig, run_experiment, synth_model
from .losses import ExpectationEngine, LossSpec
from .mlp import McEngine, MlpParams, UnitConfig, train_mlp_gdnp
from .model import EmpiricalDataset, SpdModel, load_libsvm
from .probe import DeepNetProbe, cross_dependency, train_probe
from .rayleigh import rayleigh_step, solve_ols_gdnp
from .sgeom import SpdMatrix

__all__ = [
    "DeepNetProbe", "EmpiricalDataset", "ExpectationEngine", "ExperimentConfig", "GdnpConfig",
    "LossSpec", "McEngine", "MlpParams", "NormState", "SpdMatrix", "SpdModel", "UnitConfig",
    "bisection", "cross_dependency", "gdnp_run", "load_libsvm", "rayleigh_step", "run_experiment",
    "solve_ols_gdnp", "synth_model", "train_mlp_gdnp", "train_probe",
]
