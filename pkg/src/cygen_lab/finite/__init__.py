"""Exact compatibility analysis of finite conditional pairs."""

from .io import read_p, read_q, read_table, report_to_dict, report_to_json, write_p, write_q, write_table
from .oracles import (
    LpResult,
    OracleNonConvergence,
    conditional_tv,
    gibbs_kernel_z,
    gibbs_stationary,
    gibbs_stationary_oracle,
    lp_compatibility,
)
from .theory import (
    CompatReport,
    FactorizationWitness,
    FiniteCond,
    JointMatrix,
    SupportSet,
    analyze,
    candidate_sets,
    check_determinacy,
    check_factorization,
    construct_joint,
    dirac_compatible,
    dirac_cond,
    dirac_joint,
    enumerate_complete_supports,
    is_complete_component,
    positive_regions,
    stretch,
)

__all__ = [
    "CompatReport",
    "FactorizationWitness",
    "FiniteCond",
    "JointMatrix",
    "LpResult",
    "OracleNonConvergence",
    "SupportSet",
    "analyze",
    "candidate_sets",
    "check_determinacy",
    "check_factorization",
    "conditional_tv",
    "construct_joint",
    "dirac_compatible",
    "dirac_cond",
    "dirac_joint",
    "enumerate_complete_supports",
    "gibbs_kernel_z",
    "gibbs_stationary",
    "gibbs_stationary_oracle",
    "is_complete_component",
    "lp_compatibility",
    "positive_regions",
    "read_p",
    "read_q",
    "read_table",
    "report_to_dict",
    "report_to_json",
    "stretch",
    "write_p",
    "write_q",
    "write_table",
]
