"""tetherfem: C0 interior-penalty finite elements for a higher-gradient
regularized multi-well elastic energy, with contracting-cell experiments
and a verification battery for the discrete estimates."""

from .geometry import (Cell, DomainSpec, EdgeSet, Mesh, build_edges,
                       generate_mesh, read_mesh, refine_uniform,
                       shape_metrics, write_mesh)
from .space import (BrokenField, Field, Quadrature, Space, cell_rule,
                    edge_rule, eval_field, eval_grad, eval_hess, interpolate,
                    reconstruct, to_broken, zero_field)
from .material import (DefGrad, MaterialModel, angular_average_energy,
                       coercivity_margin, coercivity_scan, fiber_energy,
                       penalty, penalty_dF, strain_energy, strain_energy_dF)
from .energy import (EnergyAssembler, EnergyBreakdown, EnergyParams,
                     assemble_energy, assemble_gradient, broken_h2_seminorm,
                     discrete_gradient, estimate_CR, lifting)
from .solver import (BoundaryData, SolveConfig, SolveResult, apply_dirichlet,
                     continuation_solve, minimize, ncg_minimize,
                     write_history_csv)
from .verify import (RateReport, consistency_decay_study, interp_rate_study,
                     jump_decay_study, natural_bc_residual, poincare_probe,
                     trace_constant_probe)
from .cli_io import (RunConfig, format_config, parse_config, run_experiment,
                     write_vtk)

__version__ = "0.1.0"
