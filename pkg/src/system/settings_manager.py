"""
Settings Manager for AHGCN
Handles run configuration with dot-notation access, dataset profiles,
strict key/type checking and JSON storage.
"""

import copy
import json
import logging
import math
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Optional

from src.errors import ConfigError
from src.system.file_operations import atomic_write

logger = logging.getLogger(__name__)

# Dataset conventions overlaid on the defaults before the user file
PROFILES: Dict[str, Dict] = {
    'oiqa': {'training': {'k': 5, 'epochs': 40}, 'metrics': {'krasula_threshold': 0.5}},
    'cviqd': {'training': {'k': 0, 'epochs': 80}, 'metrics': {'krasula_threshold': 5.0}},
}

# Keys whose default is null and the type they take when set
NULLABLE = {
    'data.manifest': str,
    'data.profile': str,
    'data.centers_deg': list,
    'metrics.pair_labels': str,
}

CHOICES = {
    'data.profile': (None, 'oiqa', 'cviqd'),
    'data.feature_source': ('files', 'synthetic'),
    'data.pyramid_profile': ('resnet18', 'compact'),
    'model.hyperedges': ('both', 'location', 'content'),
    'model.structure': ('hypergraph', 'graph', 'none'),
    'model.residual': ('literal', 'identity'),
    'advanced.logging_level': ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'),
}


class SettingsManager:
    """Manages run settings layered as defaults, dataset profile, user file, overrides."""

    def __init__(self, settings_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        """
        Initialize settings manager.

        Args:
            settings_path: Optional path to a user settings JSON file
            overrides: Dot-path -> value pairs applied last (command-line flags)
        """
        self.settings_path = Path(settings_path) if settings_path else None
        self._settings: Dict = {}
        self._lock = Lock()
        self._defaults = self._get_default_settings()

        self.load()
        for path, value in (overrides or {}).items():
            if value is not None:
                self.set(path, value)

        logger.info(f"Settings manager initialized: {settings_path or '<defaults>'}")

    def _get_default_settings(self) -> Dict:
        """Get default settings structure."""
        return {
            'data': {
                'manifest': None,
                'profile': None,
                'feature_source': 'files',
                'pyramid_profile': 'resnet18',
                'n_viewports': 20,
                'centers_deg': None,
                'cache_samples': True,
                'cache_mb': 1024.0,
                'prefetch': 4
            },
            'geometry': {
                'fov_deg': 90.0,
                'resolution': 256,
                'delta_deg': 45.0
            },
            'model': {
                'layer_dims': [1024, 256, 128, 64, 32, 1],
                'dropout': 0.5,
                'levels': [0, 1, 2, 3],
                'hyperedges': 'both',
                'structure': 'hypergraph',
                'residual': 'literal',
                'bn_momentum': 0.1,
                'bn_epsilon': 1e-5,
                'reduced_channels': 16,
                'pool_grid': 8,
                'level_dim': 256
            },
            'training': {
                'batch_size': 16,
                'epochs': 40,
                'lr_predictor': 1e-3,
                'lr_decay': 0.25,
                'lr_decay_every': 40,
                'k': 5,
                'seed': 0,
                'mos_scale': 1.0,
                'checkpoint_every': 0,
                'beta1': 0.9,
                'beta2': 0.999,
                'adam_epsilon': 1e-8
            },
            'metrics': {
                'krasula_threshold': 0.5,
                'pair_labels': None
            },
            'advanced': {
                'debug_mode': False,
                'logging_level': 'INFO'
            }
        }

    def load(self) -> bool:
        """
        Load settings: defaults, then the selected profile, then the user file.

        Raises:
            ConfigError: unreadable file, unknown key, wrong type or invalid value
        """
        user: Dict = {}
        if self.settings_path is not None:
            if not self.settings_path.is_file():
                raise ConfigError(f"Settings file not found: {self.settings_path}")
            try:
                with open(self.settings_path, 'r', encoding='utf-8') as f:
                    user = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{self.settings_path}: invalid JSON ({e})") from e
            if not isinstance(user, dict):
                raise ConfigError(f"{self.settings_path}: top level must be an object")
            self._check_keys(user, self._defaults)

        profile = user.get('data', {}).get('profile', self._defaults['data']['profile'])
        base = copy.deepcopy(self._defaults)
        if profile is not None:
            if profile not in PROFILES:
                raise ConfigError(f"Unknown dataset profile {profile!r}; choose from {sorted(PROFILES)}")
            base = self._merge_dicts(base, PROFILES[profile])

        with self._lock:
            self._settings = self._merge_dicts(base, user)
        self.validate()

        logger.info(f"Settings loaded (profile: {profile or 'none'})")
        return True

    def _check_keys(self, values: Dict, reference: Dict, prefix: str = ''):
        """Reject keys absent from the defaults and values of the wrong type."""
        for key, value in values.items():
            path = f'{prefix}{key}'
            if key not in reference:
                raise ConfigError(f"Unknown setting '{path}'")
            expected = reference[key]
            if isinstance(expected, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"Setting '{path}' must be a section (object)")
                self._check_keys(value, expected, f'{path}.')
            else:
                self._check_type(path, value, expected)

    @staticmethod
    def _check_type(path: str, value: Any, default: Any):
        if value is None:
            if path in NULLABLE:
                return
            raise ConfigError(f"Setting '{path}' cannot be null")
        if path in NULLABLE:
            expected = NULLABLE[path]
        else:
            expected = type(default)
        if expected is bool:
            ok = isinstance(value, bool)
        elif expected is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif expected is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, expected)
        if not ok:
            raise ConfigError(f"Setting '{path}' must be {expected.__name__}, got {type(value).__name__}")

    def validate(self):
        """Range checks across the merged settings."""
        get = self.get
        for path, allowed in CHOICES.items():
            if get(path) not in allowed:
                raise ConfigError(f"Setting '{path}' must be one of {list(allowed)}, got {get(path)!r}")

        positive_ints = ['data.n_viewports', 'geometry.resolution', 'training.batch_size', 'training.epochs',
                         'training.lr_decay_every', 'model.reduced_channels', 'model.pool_grid',
                         'model.level_dim', 'data.prefetch']
        for path in positive_ints:
            if get(path) < 1:
                raise ConfigError(f"Setting '{path}' must be positive, got {get(path)}")
        for path in ('training.lr_predictor', 'training.mos_scale', 'model.bn_epsilon',
                     'training.adam_epsilon', 'geometry.delta_deg', 'data.cache_mb'):
            value = get(path)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"Setting '{path}' must be a positive number, got {value}")

        if not 0.0 < get('geometry.fov_deg') < 180.0:
            raise ConfigError(f"Setting 'geometry.fov_deg' must be in (0, 180), got {get('geometry.fov_deg')}")
        if not 0.0 < get('training.lr_decay') <= 1.0:
            raise ConfigError(f"Setting 'training.lr_decay' must be in (0, 1], got {get('training.lr_decay')}")
        if not 0.0 <= get('model.dropout') < 1.0:
            raise ConfigError(f"Setting 'model.dropout' must be in [0, 1), got {get('model.dropout')}")
        if not 0.0 < get('model.bn_momentum') <= 1.0:
            raise ConfigError(f"Setting 'model.bn_momentum' must be in (0, 1], got {get('model.bn_momentum')}")
        for path in ('training.beta1', 'training.beta2'):
            if not 0.0 <= get(path) < 1.0:
                raise ConfigError(f"Setting '{path}' must be in [0, 1), got {get(path)}")
        if get('training.k') < 0:
            raise ConfigError(f"Setting 'training.k' must be non-negative, got {get('training.k')}")
        if get('training.checkpoint_every') < 0:
            raise ConfigError("Setting 'training.checkpoint_every' must be non-negative")
        if get('metrics.krasula_threshold') < 0:
            raise ConfigError("Setting 'metrics.krasula_threshold' must be non-negative")

        dims = get('model.layer_dims')
        if len(dims) < 2 or any(isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in dims):
            raise ConfigError(f"Setting 'model.layer_dims' must list at least two positive integers, got {dims}")
        if dims[-1] != 1:
            raise ConfigError(f"Setting 'model.layer_dims' must end in 1, got {dims}")
        levels = get('model.levels')
        if not levels or any(isinstance(v, bool) or not isinstance(v, int) for v in levels):
            raise ConfigError(f"Setting 'model.levels' must be a non-empty list of level indices, got {levels}")
        if dims[0] != len(levels) * get('model.level_dim'):
            raise ConfigError(f"model.layer_dims[0] = {dims[0]} must equal len(model.levels) * model.level_dim "
                              f"= {len(levels) * get('model.level_dim')}")

        centers = get('data.centers_deg')
        if centers is not None:
            if len(centers) != get('data.n_viewports'):
                raise ConfigError(f"data.centers_deg has {len(centers)} entries, data.n_viewports is "
                                  f"{get('data.n_viewports')}")
            for entry in centers:
                if (not isinstance(entry, list) or len(entry) != 2
                        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry)):
                    raise ConfigError(f"data.centers_deg entries must be [lon_deg, lat_deg], got {entry!r}")

    def get(self, path: str, default: Any = None) -> Any:
        """
        Get setting value using dot notation.

        Args:
            path: Dot-separated path (e.g., 'training.k')
            default: Default value if not found

        Returns:
            Setting value or default
        """
        value = self._settings
        for part in path.split('.'):
            if isinstance(value, dict) and part in value:
                value = value[part]
            else:
                return default
        return value

    def set(self, path: str, value: Any):
        """
        Set setting value using dot notation.

        Args:
            path: Dot-separated path (e.g., 'training.seed')
            value: Value to set

        Raises:
            ConfigError: unknown path or wrong type
        """
        parts = path.split('.')
        reference = self._defaults
        for part in parts[:-1]:
            if not isinstance(reference.get(part), dict):
                raise ConfigError(f"Unknown setting '{path}'")
            reference = reference[part]
        if parts[-1] not in reference or isinstance(reference[parts[-1]], dict):
            raise ConfigError(f"Unknown setting '{path}'")
        self._check_type(path, value, reference[parts[-1]])

        with self._lock:
            current = self._settings
            for part in parts[:-1]:
                current = current[part]
            previous = current[parts[-1]]
            current[parts[-1]] = value
        try:
            self.validate()
        except ConfigError:
            with self._lock:
                current[parts[-1]] = previous
            raise
        logger.debug(f"Setting {path} = {value!r}")

    def get_section(self, section: str) -> Dict:
        """
        Get entire section of settings.

        Args:
            section: Section name (e.g., 'model', 'training')

        Returns:
            Copy of the section dictionary
        """
        return copy.deepcopy(self.get(section, {}))

    def _merge_dicts(self, base: Dict, override: Dict) -> Dict:
        """Recursively merge two dictionaries."""
        result = copy.deepcopy(base)

        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_dicts(result[key], value)
            else:
                result[key] = copy.deepcopy(value)

        return result

    def export_settings(self, export_path: str) -> bool:
        """Export the effective settings; the file loads back to the same configuration."""
        try:
            atomic_write(export_path, json.dumps(self._settings, indent=2, ensure_ascii=False) + '\n')
            logger.info(f"Settings exported to {export_path}")
            return True
        except OSError as e:
            logger.error(f"Failed to export settings: {e}")
            return False

    def get_all(self) -> Dict:
        """Get all settings."""
        return copy.deepcopy(self._settings)
