"""Run caprec estimate on the shipped inputs and validate each report against the schema."""
import json
import subprocess
import sys

import jsonschema

cli, root = sys.argv[1], sys.argv[2]
schema = json.load(open(f"{root}/schema/report.schema.json"))
jsonschema.Draft202012Validator.check_schema(schema)
validator = jsonschema.Draft202012Validator(schema)

runs = [
    ["-i", f"{root}/data/example_cells.csv"],
    ["-i", f"{root}/data/example_empty_cell.csv"],
    ["-i", f"{root}/data/example_records.csv", "--format", "records"],
    ["-i", f"{root}/data/example_cells.csv", "--assume", "loglinear",
     "--loglinear-variant", "npmle,lasso,lasso_cv,tmle,tmle_cv,m0,mt"],
]
failed = 0
for args in runs:
    proc = subprocess.run([cli, "estimate", "--json", *args], capture_output=True, text=True)
    if proc.returncode != 0:
        print(f"FAIL exit {proc.returncode}: {' '.join(args)}\n{proc.stderr}")
        failed += 1
        continue
    errors = list(validator.iter_errors(json.loads(proc.stdout)))
    for e in errors:
        print(f"FAIL {' '.join(args)}: {e.json_path}: {e.message}")
    failed += bool(errors)
    print(f"{'ok' if not errors else 'invalid'}: {' '.join(args)}")

# The schema must reject a report with a bad row.
bad = json.loads(subprocess.run([cli, "estimate", "--json", *runs[0]], capture_output=True, text=True).stdout)
bad["rows"][0]["status"] = "error"
if validator.is_valid(bad):
    print("FAIL schema accepted an error row without an error entry")
    failed += 1
sys.exit(1 if failed else 0)
