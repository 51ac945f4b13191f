"""Super-replication under linear price impact and a gamma constraint."""
__version__ = "0.1.0"

from .model import (
    Coefficient,
    FaceLiftedPayoff,
    GammaCap,
    ImpactMarket,
    Payoff,
    closed_form_face_lift,
    concave_envelope,
    face_lift,
    gamma_antiderivative,
    growth_bounds,
)
from .pde import Grid, PriceSurface, heat_price_oracle, node_solve, refine_and_estimate, solve_surface
from .dynamics import (
    ControlProcess,
    SimPath,
    convergence_study,
    simulate_continuous,
    simulate_discrete,
    simulate_resilience,
)
from .hedging import HedgeReport, controls_from_surface, gamma_of_a, mollify_surface, verify_superhedge

__all__ = [
    "Coefficient", "FaceLiftedPayoff", "GammaCap", "ImpactMarket", "Payoff", "closed_form_face_lift",
    "concave_envelope", "face_lift", "gamma_antiderivative", "growth_bounds", "Grid", "PriceSurface",
    "heat_price_oracle", "node_solve", "refine_and_estimate", "solve_surface", "ControlProcess", "SimPath",
    "convergence_study", "simulate_continuous", "simulate_discrete", "simulate_resilience", "HedgeReport",
    "controls_from_surface", "gamma_of_a", "mollify_surface", "verify_superhedge",
]
