#!/usr/bin/env python3
"""
Config Inventory - audit every architecture config in a directory
Answers "which of the shipped models sit in a bottleneck regime" in one pass
"""
import json
import os
import sys

from seprank.audit import diagnose, load_config
from seprank.errors import InputError


def get_config_inventory(config_dir='configs'):
    """Audit every *.json config under config_dir"""
    inventory = {
        'config_dir': config_dir,
        'configs': [],
        'invalid': [],
    }

    for filename in sorted(os.listdir(config_dir)):
        if not filename.endswith('.json'):
            continue
        path = os.path.join(config_dir, filename)
        try:
            report = diagnose(load_config(path))
        except InputError as e:
            print(f"Warning: Could not audit {filename}: {e}")
            inventory['invalid'].append({'file': filename, 'error': str(e)})
            continue

        c = report.config
        inventory['configs'].append({
            'file': filename,
            'name': c.name,
            'V': c.V,
            'd_x': c.d_x,
            'L': c.L,
            'H': c.H,
            'r': c.r,
            'd_a': c.d_a,
            'vocab_bottleneck': report.vocab_bottleneck,
            'rank_ratio': report.rank_ratio,
            'attention_overhang': report.attention_overhang,
            'overhang_ratio': report.overhang_ratio,
            'regime': report.regime.regime,
            'params_total': report.params.total,
            'source': c.source or 'N/A',
        })

    return inventory


def print_inventory(inventory):
    """Print inventory in readable format"""
    print(f"\n{'='*80}")
    print(f"ARCHITECTURE CONFIG INVENTORY - {inventory['config_dir']}")
    print(f"{'='*80}\n")

    if not inventory['configs']:
        print("No configs found.")
        return

    for entry in inventory['configs']:
        print(f"📐 CONFIG: {entry['name']} ({entry['file']})")
        print(f"   V={entry['V']} d_x={entry['d_x']} L={entry['L']} H={entry['H']} "
              f"r={entry['r']} d_a={entry['d_a']}")
        mark = '⚠️ ' if entry['vocab_bottleneck'] else '✅'
        print(f"   {mark} vocab bottleneck: r/d_x = {entry['rank_ratio']:.6g}")
        mark = '⚠️ ' if entry['attention_overhang'] else '✅'
        print(f"   {mark} attention overhang: H*d_a/d_x = {entry['overhang_ratio']:.6g}")
        print(f"   Regime: {entry['regime']}")
        print(f"   Params: {entry['params_total']:,}")
        print(f"   Source: {entry['source']}")
        print(f"\n{'-'*80}\n")

    for bad in inventory['invalid']:
        print(f"❌ {bad['file']}: {bad['error']}")


def save_inventory(inventory, filename='config-inventory.json'):
    """Save inventory to JSON file"""
    with open(filename, 'w') as f:
        json.dump(inventory, f, indent=2, default=str)
    print(f"✅ Inventory saved to {filename}")


def flagged_configs(inventory):
    """Names of configs with any bottleneck flag"""
    return [
        entry['name'] for entry in inventory['configs']
        if entry['vocab_bottleneck'] or entry['attention_overhang']
    ]


if __name__ == '__main__':
    config_dir = sys.argv[1] if len(sys.argv) > 1 else 'configs'
    output = sys.argv[2] if len(sys.argv) > 2 else 'config-inventory.json'

    print(f"Auditing configs in {config_dir}...")
    inventory = get_config_inventory(config_dir)

    print_inventory(inventory)
    save_inventory(inventory, output)

    flagged = flagged_configs(inventory)
    print(f"\nFlagged: {', '.join(flagged) if flagged else 'none'}")
    sys.exit(1 if inventory['invalid'] else 0)
