"""Space-time trace FEM for transport-diffusion on evolving level-set surfaces."""

from .cutgeom import (CutQuadrature, SlabGeometry, SliceQuadrature,
                      SpaceTimeSimplex, build_slab_geometry, build_slice,
                      cut_simplex, decompose_prism, monte_carlo_measure_oracle,
                      slice_quadrature, st_surface_quadrature,
                      triangulate_polytope)
from .driver import (Discretization, SigmaPolicy, SolutionTrajectory,
                     SolverOptions, convergence_study, error_norms,
                     eval_solution, march, mass, mass_conservation_check)
from .errors import (ConfigError, EmptyCutError, SingularGeometryError,
                     SolverError)
from .fespace import (FEFunctionSlab, SlabDofMap, TimeSlab, build_dof_map,
                      eval_basis, eval_fe_function)
from .mesh import (SpatialMesh, TimePartition, kuhn_box_mesh, point_locate,
                   refine_near_interface)
from .problems import (AnalysisConstants, ProblemDefinition, builtin_problems,
                       check_condition_ass7, default_sigma, get_problem,
                       surface_divergence_wind, wind_from_levelset)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
