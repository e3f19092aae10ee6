from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Base directory
BASE_DIR = Path(__file__).parent.parent

# Run archive
DATABASE_URL = os.getenv('SUPNORM_DATABASE_URL', f"sqlite:///{BASE_DIR}/data/supnorm_runs.db")

# Worker cap for node-parallel stages (pointwise fields, independent transforms)
SUPNORM_THREADS = int(os.getenv('SUPNORM_THREADS', '1'))

LOG_LEVEL = os.getenv('SUPNORM_LOG_LEVEL', 'INFO')

# Hamiltonian evaluation
HAMILTONIAN_SETTINGS = {
    'n_dirs': 64,
    'tol_rho_rel': 1e-10,  # bisection width relative to M(lambda)
    'membership_slack': 1e-12,
    'plateau_breakpoints': (0.5, 0.75),
}

# Grid discretization
GRID_SETTINGS = {
    'stencil_k': 16,
    'allowed_stencils': (8, 16, 32),
    'segment_checks': 3,  # interior membership probes per stencil edge
}

# Finsler distances
DISTANCE_SETTINGS = {
    'n_quad': 3,
    'reference_lambda': 1.0,
}

# Optimal value and minimizers
SOLVER_SETTINGS = {
    'tol_lambda_rel': 1e-4,
    'tol_feas': 1e-9,
    'initial_lambda': 1.0,
    'lambda_cap': 1e6,
    'patch_radius_h': 4,
    'n_sweeps': 5,
    'tol_fix': 1e-9,
    'max_step_halvings': 3,
    'rng_seed': 20240611,
    'tol_field': 1e-9,
}

# Pointwise representative, attainment sets, chains
POINTWISE_SETTINGS = {
    'radii_h': (5, 3),
    'min_radius_h': 2,
    'tau_rel': 0.05,
    'tau_fat_factor': 2.0,
    'chain_rel_tol': 0.05,
    'chain_abs_tol': 1e-6,
    'n_chain_seeds': 3,
    'max_chain_steps': 10000,
}

OUTPUT_SETTINGS = {
    'prefix': 'out/run',
    'emit_heatmaps': False,
    'record': False,
    'float_format': '%.17g',
}

VERIFY_SETTINGS = {
    'schema_version': 1,
    'fixtures': (
        'eikonal-1d',
        'eikonal-2d',
        'metric-equivalence',
        'monotonicity',
        'envelope',
        'pointwise-consistency',
        'plateau',
        'two-arc',
        'local-optimality',
        'chains',
        'determinism',
    ),
    'h_scale': 1.0,
    'check_tolerance_scale': 1.0,
    # fixture grids before h_scale
    'h_fine': 1 / 64,
    'h_coarse': 1 / 32,
    'h_plateau': 1 / 16,
    'n_sweeps_2d': 2,
    'n_sweeps_residual': 3,
    'n_cone_patches': 8,
    'n_cone_vertices': 3,
    'lambdas_metric': (0.5, 1.0, 2.0),
    'lambdas_monotone': (0.25, 0.5, 1.0, 2.0),
    'left_delta': 0.01,
    'n_pairs_metric': 200,
    'n_pairs_monotone': 50,
    'n_pairs_certificate': 500,
}
