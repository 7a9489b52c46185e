"""Price impact on interest-rate term structures.

Impacted zero-coupon and coupon bonds under instantaneous plus transient
impact, the impact-adjusted pricing measure as a parameter transform,
endogenous cross-impact across maturities, impacted futures pricing with
Monte-Carlo oracles, forward-curve drift-condition checks, and a
linear-feedback optimal-execution solver with a brute-force certificate.
"""

from .bonds import (
    BondCoeffs,
    CouponSchedule,
    affine_coeffs,
    coupon_bond_price,
    riccati_solve,
    yield_from_price,
    zcb_drift_vol,
    zcb_price,
)
from .curves import (
    CurveExperimentConfig,
    CurveResult,
    CurveSnapshot,
    cross_impact_drift,
    first_crossing_time,
    mean_reversion_sweep,
    rho_sweep,
    simulate_impacted_curve,
)
from .execution import (
    ExecutionProblem,
    ExecutionSolution,
    brute_force_qp,
    check_admissibility,
    foc_residual,
    objective,
    solve_execution,
)
from .grids import ForwardCurve, TimeGrid
from .hjm import (
    ForwardLattice,
    forward_impact_density,
    hjm_condition_residual,
    reconstruct_bond_from_forwards,
)
from .impact import (
    ImpactSpec,
    SpeedSchedule,
    impact_density,
    impacted_zcb,
    inventory,
    overall_impact,
    transient_impact,
)
from .pricing import (
    MprConfig,
    eurodollar_closed_form,
    eurodollar_mc,
    impacted_libor,
    impacted_mpr,
    impacted_zcb_expectation_mc,
    market_price_of_risk,
)
from .rates import (
    GenericAffineModel,
    HullWhiteModel,
    PathSet,
    VasicekModel,
    analytic_moments,
    apply_impacted_measure,
    hull_white_theta,
    simulate_short_rate,
)

__version__ = "0.1.0"
