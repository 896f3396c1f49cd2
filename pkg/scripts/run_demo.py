"""End-to-end synthetic pipeline with an editable configuration.

    python3 scripts/run_demo.py --out /tmp/demo [--seed 7] [--epochs 25] [--threads 1]

Any ``DemoConfig`` field can be overridden as ``--<field> value``.
"""

import argparse
import dataclasses
import json

from lsrkit.demo import DemoConfig, run_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--threads", type=int, default=1)
    for f in dataclasses.fields(DemoConfig):
        ap.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    args = vars(ap.parse_args())
    out, threads = args.pop("out"), args.pop("threads")
    summary = run_demo(out, DemoConfig(**args), threads)
    print(json.dumps({k: summary[k] for k in ("ndcg_star@10", "flops")}, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
