"""Builds a small simulated store through the CLI and validates the metric
JSON it emits against the published schema.

usage: validate_report_schema.py CLI SCHEMA ITEMS WORKDIR
"""

import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema


def run(cli, *args):
    proc = subprocess.run([cli, *args], capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr}")
    return proc.stdout


def main():
    cli, schema_path, items, workdir = sys.argv[1:5]
    work = pathlib.Path(workdir)
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    store = str(work / "store.jsonl")
    schema = json.loads(pathlib.Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    runs = []
    for k, (acc, sus) in enumerate([(0.9, 0.7), (0.5, 0.2)]):
        plan = work / f"plan{k}.ini"
        plan.write_text(
            f"run_id = m{k}\n"
            f"items = {items}\n"
            f"seed = {k + 1}\n"
            "simulate = true\n"
            f"model = sim{k}\n"
            f"sim_accuracy = {acc}\n"
            f"sim_susceptibility = {sus}\n"
            "sim_noise = 0.2\n"
            "sim_confidence = calibrated\n"
            "elicit_confidence = true\n"
            "samples = 4\n"
            "condition = explicit templates=TrueAnswer\n"
            "condition = C5\n"
        )
        for sub in ("baseline", "mislead"):
            run(cli, "--store", store, "--plan", str(plan), "run", sub)
        run(cli, "--store", store, "--plan", str(plan), "run", "consistency", "--run", f"m{k}-c")
        runs += ["--run", f"m{k}", "--run", f"m{k}-c"]

    documents = []
    for group_by in ("", "model", "model,condition", "task,question_type"):
        args = ["--store", store, "metrics", *runs, "--format", "json", "--items", items]
        if group_by:
            args += ["--group-by", group_by]
        documents.append((group_by or "none", json.loads(run(cli, *args))))

    out_dir = work / "report"
    run(cli, "--store", store, "report", *runs, "--out-dir", str(out_dir), "--format", "json,svg")
    documents.append(("report.json", json.loads((out_dir / "report.json").read_text())))

    failed = 0
    for name, doc in documents:
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
        for e in errors:
            print(f"{name}: {'/'.join(map(str, e.path))}: {e.message}")
        failed += bool(errors)
        print(f"{name}: {len(doc['groups'])} group(s), {'invalid' if errors else 'valid'}")
    if not documents[-1][1]["scatter"]:
        print("report.json: expected scatter points")
        failed += 1
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
