"""Print the checks and headline metrics of finished run directories.

    python scripts/summarize.py runs/
"""
import json
import sys
from pathlib import Path


def show(run: Path) -> bool:
    summary = json.loads((run / "summary.json").read_text())
    print(f"{run.name}: {'passed' if summary['passed'] else 'FAILED'}")
    for name, ok in summary["checks"].items():
        print(f"  {'PASS' if ok else 'FAIL'} {name}")
    for key, val in summary["metrics"].items():
        if isinstance(val, (int, float, str)) or val is None:
            print(f"  {key} = {val}")
    return summary["passed"]


def main(argv):
    root = Path(argv[1] if len(argv) > 1 else "runs")
    runs = sorted(p for p in root.iterdir() if (p / "summary.json").exists())
    if not runs:
        print(f"no run directories under {root}")
        return 1
    return 0 if all([show(r) for r in runs]) else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
