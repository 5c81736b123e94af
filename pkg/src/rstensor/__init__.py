"""Range-separated canonical/Tucker tensor toolkit for grid-based summation
of N-particle interaction potentials."""

from .assembly import (
    AssemblyConfig,
    AssemblyResult,
    assemble_long,
    assemble_short,
    build_rs,
    reference_for,
    window_slice,
)
from .errors import (
    CapabilityError,
    CapacityError,
    ConfigError,
    DomainError,
    NumericalError,
    PackingError,
    ParseError,
    ResolutionError,
    RsTensorError,
    SeparationError,
    SingularityError,
    SolverError,
)
from .formats import (
    CCT,
    CanonicalTensor,
    RSCanonical,
    RSTucker,
    StorageReport,
    TuckerTensor,
    canonical_inner,
    dense_cct,
    dense_rs,
    eval_canonical,
    eval_cct,
    eval_rs,
    eval_tucker,
    lookup_short,
    scalar_product_rs,
    storage_report,
)
from .kernels import (
    DEFAULT_R_RANGE,
    QuadratureRule,
    RadialKernel,
    ReferenceCanonical,
    build_quadrature,
    effective_support,
    eval_expansion,
    project_kernel,
    split_rank,
    split_tensor,
)
from .observables import (
    EnergyReport,
    ForceVector,
    direct_energy,
    direct_force,
    force_fd,
    grad_long,
    reference_energy,
    rs_energy,
)
from .particles import (
    Box3,
    Grid3,
    IndexedParticleSystem,
    ParticleSystem,
    generate_lattice,
    generate_random_cluster,
    load_particles,
    save_particles,
    separation_distance,
    snap_to_grid,
)
from .rankred import (
    ReductionConfig,
    SvdSpectrum,
    c2t_als,
    rhosvd,
    rhosvd_error_bound,
    side_svd,
    tucker_to_canonical,
)
from .scattered import (
    InterpolationProblem,
    RSOperator,
    build_rs_operator,
    rs_matvec,
    solve_interpolation,
)

__version__ = "0.1.0"
