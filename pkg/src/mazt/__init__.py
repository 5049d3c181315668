"""Regularized curvature envelopes on the flat torus.

The package discretizes potentials on a periodic grid and provides, in
layers: the grid toolkit (:mod:`mazt.grid`), background/volume/divisor data
(:mod:`mazt.forms`), the obstacle-problem envelope solver
(:mod:`mazt.envelope`), the finite-temperature curvature equation solver
(:mod:`mazt.ma_solver`), the variational functionals
(:mod:`mazt.functionals`), the zero-temperature limit study
(:mod:`mazt.zero_temp`), the weighted-domain family
(:mod:`mazt.hele_shaw`), geodesic rays from envelopes
(:mod:`mazt.geodesic`), and the scenario front end (:mod:`mazt.scenario`,
:mod:`mazt.cli`).
"""

from .constants import EXP_MAX, EXP_MIN, KAPPA, VOLUME_FLOOR
from .envelope import (
    EnvelopeSolution,
    FreeBoundary,
    LcpOptions,
    Obstacle,
    envelope_divisor,
    envelope_theta,
    free_boundary,
    lcp_residual,
    project,
    zero_obstacle,
)
from .errors import (
    BadMass,
    BadReference,
    ConcavityViolation,
    EmptyBoundary,
    EmptyRegion,
    InfeasibleClass,
    MaztError,
    NoConvergence,
    NonKahler,
    NonZeroMean,
    NotClassifiable,
    ParseError,
    SeshadriViolation,
    ValidationError,
    WrongRegime,
)
from .forms import (
    BackgroundForm,
    DivisorData,
    SeshadriBound,
    VolumeDensity,
    ma_density,
    make_background,
    make_divisor,
    make_divisor_from_points,
    make_volume,
    seshadri_bound,
    twist,
)
from .functionals import (
    energy,
    energy_report,
    g_beta,
    g_beta_stationarity,
    l_beta,
    relative_entropy,
)
from .geodesic import (
    RayFamily,
    build_psi_family,
    double_legendre_gap,
    energy_slope_check,
    legendre_ray,
    subgeodesic,
)
from .grid import (
    TorusGrid,
    dump_field,
    grad_sup_norm,
    helmholtz_solve,
    integrate,
    laplacian,
    load_field,
    poisson_solve,
    validate_field,
)
from .hele_shaw import (
    HeleShawFamily,
    exhaustion_check,
    nesting_report,
    run_family,
)
from .ma_solver import (
    BetaSolution,
    SolveOptions,
    check_comparison,
    laplacian_bound_report,
    solve_beta,
    solve_beta_divisor,
)
from .scenario import Scenario, parse_scenario, run_scenario
from .zero_temp import (
    SweepReport,
    calibrate_grid_slack,
    ma_decay_check,
    refined_bound_check,
    sweep_beta,
)

__version__ = "0.1.0"
