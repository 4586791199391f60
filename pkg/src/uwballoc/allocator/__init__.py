from .control import (hqos_reduction_cap, interference_control, interference_ledger,
                      min_overlap_power)
from .kkt import assign_subbands, compute_H, waterfill_power
from .model import (AllocationResult, LagrangeState, RateModel, SolverConfig, achieved_rate,
                    band_rate, sqos_sum_rate, user_rates)
from .optimal import optimal_allocate, optimal_joint_allocation
from .oracle import compare_with_oracle, oracle_exhaustive, random_instance
from .suboptimal import (equal_power_allocation, finish_suboptimal, qos_power_refinement,
                         suboptimal_allocate)

__all__ = [
    "AllocationResult", "LagrangeState", "RateModel", "SolverConfig", "achieved_rate",
    "assign_subbands", "band_rate", "compare_with_oracle", "compute_H", "equal_power_allocation", "finish_suboptimal",
    "hqos_reduction_cap", "interference_control", "interference_ledger", "min_overlap_power",
    "optimal_allocate", "optimal_joint_allocation", "oracle_exhaustive", "qos_power_refinement",
    "random_instance", "sqos_sum_rate", "suboptimal_allocate", "user_rates", "waterfill_power",
]
