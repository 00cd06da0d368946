import json

import pytest

from config.settings import SETTINGS, get_setting, load_settings, update_setting, validate_settings


class TestValidation:

    def test_defaults_are_valid(self):
        assert validate_settings() == []

    @pytest.mark.parametrize("path,value,fragment", [
        ('numerics.eq_tol', 0.0, 'tolerances'),
        ('recover.tau_scale', -1.0, 'tau_scale'),
        ('recover.ell', 0, 'ell'),
        ('robust.eps', 0.5, 'eps'),
        ('init.order', 5, 'init.order'),
        ('performance.threads', 0, 'threads'),
    ])
    def test_bad_values(self, settings, path, value, fragment):
        update_setting(settings, path, value)
        errors = validate_settings(settings)
        assert any(fragment in e for e in errors), errors

    def test_unknown_key(self, settings):
        settings['recover']['tau'] = 1.0
        assert "Unknown setting: recover.tau" in validate_settings(settings)


class TestDotPaths:

    def test_update_and_get(self, settings):
        assert update_setting(settings, 'recover.margin', 0.2)
        assert get_setting(settings, 'recover.margin') == 0.2
        assert SETTINGS['recover']['margin'] == 0.0

    def test_missing_paths(self, settings):
        assert not update_setting(settings, 'nosuch.key', 1)
        assert not update_setting(settings, 'app_name.key', 1)
        assert get_setting(settings, 'recover.nosuch', 'fallback') == 'fallback'


class TestLoadSettings:

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps({'model': {'m': 7, 'k': 3}, 'debug': True}))
        settings = load_settings(str(path), {'model.k': 4, 'model.d': None})
        assert settings['model']['m'] == 7
        assert settings['model']['k'] == 4
        assert settings['model']['d'] == SETTINGS['model']['d']
        assert settings['debug'] is True
        assert SETTINGS['model']['m'] == 3

    def test_defaults_are_copied(self):
        settings = load_settings()
        settings['model']['m'] = 99
        assert SETTINGS['model']['m'] == 3
