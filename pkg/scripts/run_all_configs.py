"""Run every bundled config (or the named ones) through the CLI and print one line per run.

    python3 scripts/run_all_configs.py [--skip-limits] [--out DIR] [name ...]
"""
import argparse
import time

from seqlimits import cli
from seqlimits.config import bundled_config, bundled_names


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--skip-limits", action="store_true", help="drop the Monte Carlo stage")
    args = ap.parse_args()
    for name in args.names or bundled_names():
        argv = ["run", name, "--out", args.out]
        if args.skip_limits:
            import tempfile, yaml  # noqa: E401
            data = bundled_config(name).model_dump(mode="json")
            data["pipeline"] = [s for s in data["pipeline"] if s["stage"] != "limits"]
            f = tempfile.NamedTemporaryFile("w", suffix=".yaml", delete=False)
            yaml.safe_dump(data, f)
            f.close()
            argv[1] = f.name
        t0 = time.perf_counter()
        rc = cli.main(argv)
        print(f"== {name}: exit {rc} in {time.perf_counter() - t0:.1f} s", flush=True)


if __name__ == "__main__":
    main()
