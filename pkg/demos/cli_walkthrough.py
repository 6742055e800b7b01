"""Drive the command-line interface end to end on the demo configs.

Everything the library does is reachable from the ``wavemin`` command:
solve a configured problem, validate a config without solving, evaluate
the tomography bound, run the polarization scheme, and tabulate the
comparison kernel.  Each run writes CSV tables plus a deterministic
JSON summary (identical configs give byte-identical records, so runs
are easy to diff).  This script shells the subcommands on the configs
next to it and prints the interesting parts of each summary.
"""

import json
import os
import subprocess
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))


def run(subcommand, config, out_dir, *extra):
    cmd = [sys.executable, "-m", "wavemin.cli", subcommand,
           "--config", os.path.join(HERE, config),
           "--out-dir", out_dir, *extra]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    print(f"$ wavemin {subcommand} --config demos/{config}  "
          f"->  exit {proc.returncode}")
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(proc.returncode)
    summary_path = proc.stdout.strip().splitlines()[-1]
    with open(summary_path) as fh:
        return json.load(fh)


with tempfile.TemporaryDirectory() as out:
    s = run("validate", "rod.toml", out)
    print(f"  status: {s['status']}, {len(s['errors'])} errors")

    s = run("solve", "rod.toml", out)
    print(f"  converged in {s['iterations']} iterations, functional value "
          f"{s['functional_value']:.10f}")
    print(f"  oracle flux error {s['oracle']['flux_error']:.2e}, power "
          f"balance gap {s['dissipation']['power_balance_gap']:.2e}")
    print(f"  artifacts: {len(s['artifacts'])} CSV tables")

    s = run("tomography", "rod.toml", out)
    print(f"  surface bound {s['bound_value']:.10f}, trial value "
          f"{s['trial_value']:.10f}, slack {s['slack']:+.2e}")

    s = run("hs-bound", "rod.toml", out)
    print(f"  bound direction {s['classification']}, equality gap "
          f"{s['equality_gap']:.2e}")
    print(f"  condensed value {s['condensed_value']:.10f} vs primal "
          f"{s['primal_value']:.10f}")

    s = run("greens-table", "kernel.toml", out)
    print(f"  {s['n_points']} kernel points, max imaginary residue "
          f"{s['max_imaginary_residue']:.2e}")
