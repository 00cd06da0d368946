import copy
import json
import os
from typing import Any, Dict, List, Optional

# Application Settings
SETTINGS = {
    # Application Configuration
    'app_name': 'rectify',
    'version': '1.0.0',
    'debug': os.getenv('DEBUG', 'False').lower() == 'true',

    # Dense linear algebra / LP kernels
    'numerics': {
        'eq_tol': 1e-9,
        'rank_tol': 1e-9,
        'pinv_rcond': 1e-12,
        'simplex_max_pivots': 50000,
        'exact_tol': 1e-6,  # "exact recovery" after matching
    },

    # Instance generation
    'model': {
        'm': 3,
        'k': 2,
        'd': 4,
        'n': 30,
        'activation': 'relu',
        'noise': 'none',
        'target_kappa': 1.0,
        'orthonormal_u': False,
        'orthonormal_v': False,
        'lipschitz_grid': 10001,
    },

    # Sign-pattern enumeration
    'signpat': {
        'max_subsets': 10_000_000,
    },

    # Worst-case exact algorithm
    'worstcase': {
        'max_patterns': 1_000_000,
        'functional_tol': 1e-6,
    },

    # Moment / ICA initializers
    'init': {
        'order': 4,
        'restarts': 30,
        'iters': 100,
        'power_tol': 1e-10,
        'psd_tol': 1e-9,
        'max_theta_draws': None,  # None -> 2**(k+5)
        'smooth': False,
        'smooth_sigma': 1e-3,
        'whiten_ratio': 0.02,
        'theta2_draws': 3,
        'block': 65536,
        'ica_max_iter': 1000,
        'ica_tol': 1e-8,
        'ica_restarts': 5,
    },

    # Finishing stages
    'recover': {
        'tau_scale': 1e-6,  # tau = tau_scale * median positive entry
        'ell': None,  # None -> min(n, 200*d*k*ceil(kappa)^2)
        'zero_tol': 1e-8,
        'margin': 0.0,
        'init_margin': 0.3,  # margin used after approximate initializers
        'tol_match': 1e-8,
        'ransac_trials': 500,
        'whiten': False,  # whiten X by its sample covariance; forced on when the instance has one
    },

    # Arbitrary-noise FPT and sparse noise
    'robust': {
        'sketch_rows': None,  # None -> max(k+1, 8)
        'eps': 0.25,
        'max_exponent': 4,
        'grid_signs': False,
        'grid_budget': 10_000_000,
        'noise_guesses': 8,
        'eta_constant': 100.0,
        'refine': True,
        'refine_quantile': 0.5,
        'rpca_tol': 1e-9,
        'rpca_max_iters': 1000,
        'rpca_rho': 1.5,
        'sparse_init_order': 2,
        'sparse_zero_tol': 1e-6,
    },

    # Reduction tooling
    'hardness': {
        'witness_tol': 1e-9,
        'brute_force_budget': 100_000,
        'max_dim': 5,
    },

    # Metrics
    'eval': {
        'brute_force_max_k': 8,
        'output_diff_tol': 1e-12,
    },

    # Acceptance suite
    'bench': {
        'default_criteria': ['AC-1', 'AC-2', 'AC-3', 'AC-4', 'AC-5', 'AC-6',
                             'AC-7', 'AC-8', 'AC-9', 'AC-10', 'AC-11'],
        'selftest_criteria': ['AC-1', 'AC-2', 'AC-9'],
        'table_name': 'bench.csv',
    },

    # Performance Settings
    'performance': {
        'threads': 1,
    },

    # Output files
    'storage': {
        'manifest_name': 'manifest.json',
        'report_name': 'report.txt',
        'matrix_suffix': '.mat',
    },

    # Logging Configuration
    'logging': {
        'level': os.getenv('LOG_LEVEL', 'INFO'),
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    },
}

# Environment-specific overrides
if SETTINGS['debug']:
    SETTINGS['logging']['level'] = 'DEBUG'


# Validation functions
def validate_settings(settings: Optional[Dict] = None) -> List[str]:
    """Validate critical settings"""
    settings = SETTINGS if settings is None else settings
    errors = []

    num = settings['numerics']
    if num['eq_tol'] <= 0 or num['rank_tol'] <= 0:
        errors.append("numerics tolerances must be positive")

    rec = settings['recover']
    if rec['tau_scale'] <= 0:
        errors.append("recover.tau_scale must be positive")
    if rec['ell'] is not None and rec['ell'] < 1:
        errors.append("recover.ell must be at least 1")
    if rec['margin'] < 0 or rec['init_margin'] < 0:
        errors.append("recover margins must be nonnegative")

    rob = settings['robust']
    if rob['eps'] > 0.25 or rob['eps'] <= 0:
        errors.append("robust.eps must lie in (0, 1/4]")
    if not 0 < rob['refine_quantile'] < 1:
        errors.append("robust.refine_quantile must lie in (0, 1)")

    if settings['init']['order'] not in (2, 3, 4):
        errors.append("init.order must be 2, 3 or 4")

    if settings['performance']['threads'] < 1:
        errors.append("performance.threads must be at least 1")

    for section, values in settings.items():
        if isinstance(values, dict) and section in SETTINGS and isinstance(SETTINGS[section], dict):
            for key in values:
                if key not in SETTINGS[section]:
                    errors.append(f"Unknown setting: {section}.{key}")

    return errors


def update_setting(settings: Dict, path: str, value: Any) -> bool:
    """Update a setting value using dot notation (e.g., 'recover.margin')"""
    keys = path.split('.')
    current = settings

    # Navigate to the parent of the target key
    for key in keys[:-1]:
        if isinstance(current, dict) and key in current:
            current = current[key]
        else:
            return False

    if not isinstance(current, dict):
        return False
    current[keys[-1]] = value
    return True


def get_setting(settings: Dict, path: str, default: Any = None) -> Any:
    current = settings
    for key in path.split('.'):
        if not isinstance(current, dict) or key not in current:
            return default
        current = current[key]
    return current


def load_settings(config_path: Optional[str] = None,
                  overrides: Optional[Dict[str, Any]] = None) -> Dict:
    """Defaults, overlaid by a JSON config file, overlaid by flag overrides"""
    settings = copy.deepcopy(SETTINGS)

    if config_path:
        with open(config_path, 'r', encoding='utf-8') as fh:
            file_values = json.load(fh)
        for section, values in file_values.items():
            if isinstance(values, dict) and isinstance(settings.get(section), dict):
                settings[section].update(values)
            else:
                settings[section] = values

    for path, value in (overrides or {}).items():
        if value is not None:
            update_setting(settings, path, value)

    return settings
