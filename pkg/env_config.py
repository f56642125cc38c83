"""
Environment configuration module: loads `.env` overrides, the YAML solver
configuration and sets up logging for command-line runs
"""
import copy
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "config.yaml"

DEFAULTS: Dict[str, Any] = {
    'instance': {'truck_speed_kmh': 30, 'integer_times': True},
    'generator': {
        'n': 8, 'm': 3, 's': 2, 'grid_km': 10, 'truck_only_fraction': 0.2,
        'max_range_km': 12.0, 'drone_speed_kmh': 40.0, 'group_speedup': 0.25,
        'service_minutes': 1, 'min_group': 1, 'max_group': 3, 'max_weight_kg': 10.0,
    },
    'solution': {'depot_ready': 0},
    'scheduler': {'exact_cap': 14, 'node_limit': 200000},
    'exact': {
        'max_customers': 16, 'node_limit': 5000000, 'time_limit_ms': 600000,
        'warm_start_iterations': 200,
    },
    'heuristic': {
        'iterations': 500, 'ruin_fraction': 0.3, 'seed': 0,
        'time_limit_ms': 10000, 'sideways_tolerance': 0.0,
        'exact_schedule_cap': 8, 'scheduler_node_limit': 20000,
    },
    'emit': {
        'include_va': True, 'sec_mode': 'pairs_and_triples', 'sec_max': 3,
        'integer_flows': True,
    },
    'bench': {'workers': 2},
    'logging': {
        'level': 'INFO',
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    },
}


def load_environment() -> Dict[str, Optional[str]]:
    """Load environment variables from .env file and return the ones this project reads"""
    load_dotenv()

    env_vars = {
        'config_path': os.getenv('PDS_CONFIG_PATH'),
        'log_level': os.getenv('PDS_LOG_LEVEL'),
        'benchmark_dir': os.getenv('PDS_BENCHMARK_DIR'),
    }
    logger.debug(f"PDS_CONFIG_PATH: {env_vars['config_path'] or 'Not Set'}")
    logger.debug(f"PDS_BENCHMARK_DIR: {env_vars['benchmark_dir'] or 'Not Set'}")
    return env_vars


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load the solver configuration

    Args:
        path: YAML file to read (defaults to PDS_CONFIG_PATH, then config.yaml)

    Returns:
        Configuration dictionary with every section present
    """
    env_vars = load_environment()
    config_path = Path(path or env_vars['config_path'] or DEFAULT_CONFIG_PATH)

    file_config: Dict[str, Any] = {}
    if config_path.exists():
        try:
            with open(config_path, "r") as f:
                file_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.error(f"Failed to parse configuration {config_path}: {str(e)}")
            raise
        logger.debug(f"Loaded configuration from {config_path}")
    else:
        logger.warning(f"Configuration file {config_path} not found, using defaults")

    config = _deep_merge(DEFAULTS, file_config)
    if env_vars['log_level']:
        config['logging']['level'] = env_vars['log_level']
    return config


def get_section(name: str, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Return one configuration section, loading the configuration if needed"""
    config = config if config is not None else load_config()
    return dict(config.get(name, {}))


def get_benchmark_dir() -> Optional[Path]:
    """Directory holding converted benchmark instances, if configured"""
    benchmark_dir = load_environment()['benchmark_dir']
    return Path(benchmark_dir) if benchmark_dir else None


def setup_logging(config: Optional[Dict[str, Any]] = None) -> None:
    """Configure root logging to stderr so stdout stays machine readable"""
    log_config = get_section('logging', config)
    logging.basicConfig(
        level=getattr(logging, str(log_config.get('level', 'INFO')).upper(), logging.INFO),
        format=log_config.get('format'),
        stream=sys.stderr,
        force=True,
    )
