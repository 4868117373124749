from .bench import IseReport, compare_ise, ise_bench
from .samplers import FAMILIES, MARGINS, SimSpec, joe_tau, sample
from .truth import ise, naive_kernel_conditional, true_conditional, truth_grid

__all__ = ["FAMILIES", "MARGINS", "IseReport", "SimSpec", "compare_ise", "ise", "ise_bench",
           "joe_tau", "naive_kernel_conditional", "sample", "true_conditional", "truth_grid"]
