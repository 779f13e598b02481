"""Numerical simulator for slow quenches of the Dicke model in trapped-ion crystals."""

from .hilbert import (
    FockSpace,
    ProductSpace,
    SpinSector,
    TruncationError,
    build_fock_space,
    build_product_space,
    build_spin_sector,
    displaced_fock_state,
    embed,
    spin_x_eigenstate,
)
from .model import (
    ConstantRamp,
    DickeConfig,
    ExponentialRamp,
    LinearRamp,
    alpha0,
    critical_field,
    dicke_hamiltonian,
    field_at,
    khz_to_angular,
    lipkin_hamiltonian,
    experiment_config,
    parity_operator,
)

__version__ = "0.1.0"
