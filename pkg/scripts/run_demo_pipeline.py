#!/usr/bin/env python3
"""Drive the full CLI pipeline over a small generated corpus.

Writes a 20-warning report, labels, and package metadata into --workdir,
then runs: ingest, split, featurize, train, evaluate, report, importance,
fuzz-validate, and triage. Every file it produces stays in the workdir for
inspection.
"""

import argparse
import json
import sys
from pathlib import Path

from triagerl.cli import run_cli
from triagerl.synthetic import demo_corpus
from triagerl.warnings import write_label_sidecar

CONFIG = """\
seed = 7
cluster_radius = 10
backend = simulated
sim.p_crash_given_tp = 0.8
sim.p_crash_given_fp = 0.05
sim.seed = 11
train.epochs_max = 10
train.patience = 10
train.learning_rate = 0.001
"""


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--n", type=int, default=20)
    args = parser.parse_args()

    root = Path(args.workdir)
    root.mkdir(parents=True, exist_ok=True)
    report, labels, metadata = demo_corpus(n=args.n, seed=5)
    (root / "report.json").write_text(json.dumps(report, indent=1))
    (root / "labels.txt").write_bytes(write_label_sidecar(labels))
    (root / "meta.json").write_text(json.dumps(metadata, indent=1))
    (root / "run.cfg").write_text(CONFIG)

    cfg = ["--config", str(root / "run.cfg")]
    steps = [
        ["ingest", "--report", f"{root}/report.json", "--out", f"{root}/warnings.jsonl"],
        ["split", "--warnings", f"{root}/warnings.jsonl", "--labels", f"{root}/labels.txt",
         "--out", f"{root}/splits.txt"],
        ["featurize", "--warnings", f"{root}/warnings.jsonl", "--meta", f"{root}/meta.json",
         "--out", f"{root}/features.jsonl", "--export-manifest", f"{root}/manifest.txt"],
        ["train", "--warnings", f"{root}/warnings.jsonl", "--labels", f"{root}/labels.txt",
         "--splits", f"{root}/splits.txt", "--features", f"{root}/features.jsonl",
         "--out", f"{root}/model.ckpt", "--log", f"{root}/train.log"],
        ["evaluate", "--checkpoint", f"{root}/model.ckpt", "--warnings", f"{root}/warnings.jsonl",
         "--labels", f"{root}/labels.txt", "--splits", f"{root}/splits.txt",
         "--features", f"{root}/features.jsonl", "--split", "test",
         "--out", f"{root}/eval_report.txt", "--verdicts", f"{root}/verdicts.txt"],
        ["report", "--verdicts", f"{root}/verdicts.txt", "--labels", f"{root}/labels.txt",
         "--out", f"{root}/recomputed_report.txt"],
        ["importance", "--checkpoint", f"{root}/model.ckpt", "--warnings", f"{root}/warnings.jsonl",
         "--labels", f"{root}/labels.txt", "--splits", f"{root}/splits.txt",
         "--features", f"{root}/features.jsonl", "--split", "test", "--repeats", "2",
         "--out", f"{root}/importance.txt"],
        ["fuzz-validate", "--warnings", f"{root}/warnings.jsonl", "--labels", f"{root}/labels.txt",
         "--out", f"{root}/outcomes.txt"],
        ["triage", "--report", f"{root}/report.json", "--checkpoint", f"{root}/model.ckpt",
         "--meta", f"{root}/meta.json", "--backend", "recorded",
         "--recorded", f"{root}/outcomes.txt", "--out", f"{root}/triage_verdicts.txt"],
    ]
    for argv in steps:
        print(f"\n$ triagerl {' '.join(argv)}")
        code = run_cli(argv + cfg)
        if code != 0:
            print(f"step failed with exit code {code}", file=sys.stderr)
            return code
    print(f"\nall stages complete; outputs in {root}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
