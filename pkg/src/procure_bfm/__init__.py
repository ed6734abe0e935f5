"""Budget-feasible clock auctions for submodular procurement."""
from .market import CostModel, Market, gen_costs
from .mechanisms import MechanismParams, MechanismResult, bfm_swm, bfm_vm, preset
from .valuation import (
    CoverageValuation,
    SimilarityDiversityValuation,
    TableValuation,
    build_similarity_valuation,
    load_coverage_graph,
)

__version__ = "0.1.0"
