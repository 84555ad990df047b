"""Regenerate the bundled golden records from configs/goldens/*.json.

Run after an intentional numerical change; review the diff before committing.
"""

import sys
from pathlib import Path

from orbent.cli import bundled_golden_dir, write_golden

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    dest = bundled_golden_dir()
    for cfg in sorted((ROOT / "configs" / "goldens").glob("*.json")):
        write_golden(cfg, dest / cfg.stem)
        print(f"pinned {cfg.stem}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
