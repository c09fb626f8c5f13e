"""
Command-line walkthrough
========================

The same pipeline driven through ``phenoct`` subcommands in a scratch
directory. Every artifact records its provenance (tool version, argv, config
hash, seed and input hashes), so each command can be rerun from its output.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())
(work / "cfg.json").write_text(json.dumps({"eval": {"n_bootstrap": 500, "seed": 0}}))


def phenoct(*argv):
    print("$ phenoct", " ".join(argv))
    res = subprocess.run([sys.executable, "-m", "phenoct.cli", *argv], cwd=work,
                         capture_output=True, text=True)
    if res.returncode:
        print(f"  exit {res.returncode}: {res.stderr.strip()}")
    return res.returncode


phenoct("synth", "--n", "60", "--prevalence", "0.3", "--effect", "gallstone", "--seed", "4",
        "--shape", "32,32,32", "--out", "cohort")
phenoct("extract", "cohort/manifest.csv", "--out", "table.csv", "--parallelism", "4")
phenoct("fit", "table.csv", "--labels", "cohort/manifest.csv", "--out", "model")
phenoct("predict", "model/spec_gallstones.json", "table.csv", "--labels", "cohort/manifest.csv",
        "--out", "preds.csv")
phenoct("evaluate", "preds.csv", "--config", "cfg.json", "--out", "eval.json")
print((work / "eval.txt").read_text())

phenoct("audit", "preds.csv", "--table", "table.csv", "--feature", "gallbladder.atten.max",
        "--thresholds", "0,380,420", "--config", "cfg.json", "--out", "audit.json")
for s in json.loads((work / "audit.json").read_text())["strata"]:
    print(f"  threshold {s['threshold']}: positives kept {s['n_positive_kept']}")

phenoct("curves", "model/spec_gallstones.json", "table.csv", "--grid-size", "5",
        "--out", "curves.json")
for d, c in json.loads((work / "curves.json").read_text())["curves"].items():
    print(f"  {d}: " + " ".join(f"{p:.2f}" for _, p in c["points"]))

# Errors are one line on stderr with a distinct exit code.
phenoct("predict", "missing.json", "table.csv", "--out", "p.csv")
print("provenance:", json.dumps(json.loads((work / "eval.json").read_text())["provenance"])[:160],
      "...")
