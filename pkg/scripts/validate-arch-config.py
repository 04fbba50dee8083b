#!/usr/bin/env python3
import json
import sys

from seprank.audit import CONFIG_SCHEMA, collect_errors


def validate_arch_config(config_file):
    """Validate an architecture config against the audit schema"""

    try:
        with open(config_file, 'r') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        print(f"❌ Cannot read {config_file}: {e}")
        return False

    errors = [f"❌ {path}: {message}" for path, message in collect_errors(document)]

    # Optional fields left to their defaults are worth a mention, not a failure
    if isinstance(document, dict) and not errors:
        for key, spec in CONFIG_SCHEMA.items():
            if not spec['required'] and key not in document and spec['default']:
                errors.append(f"⚠️  {key} not set, defaults to {spec['default']}")
        if 'seq_len' not in document:
            errors.append("⚠️  seq_len not set, positional parameters are not counted")

    failed = [e for e in errors if e.startswith('❌')]
    if errors:
        print(f"{config_file}:")
        for error in errors:
            print(f"  {error}")
    if failed:
        print("Config validation failed")
        return False

    print(f"✅ {config_file} is a valid architecture config")
    return True


if __name__ == '__main__':
    if len(sys.argv) < 2:
        print("Usage: python3 validate-arch-config.py <config.json> [more.json ...]")
        sys.exit(1)

    results = [validate_arch_config(path) for path in sys.argv[1:]]
    sys.exit(0 if all(results) else 1)
