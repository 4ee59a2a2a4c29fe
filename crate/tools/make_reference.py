"""Write the IEEE test cases as MATPOWER .m files and record reference
power-flow solutions computed with PYPOWER.

    pip install pypower
    python3 tools/make_reference.py
"""
import json
import os

import numpy as np
from pypower.api import case14, case39, case57, case118, ppoption, runpf

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "crates", "core", "data")
FIXTURES = os.path.join(ROOT, "crates", "core", "tests", "fixtures")

CASES = {"case14": case14, "case39": case39, "case57": case57, "case118": case118}


def fmt(v):
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_matrix(f, name, mat, header):
    f.write(f"%% {header}\n")
    f.write(f"mpc.{name} = [\n")
    for row in mat:
        f.write("\t" + "\t".join(fmt(v) for v in row) + ";\n")
    f.write("];\n\n")


def write_case(name, ppc):
    path = os.path.join(DATA, name + ".m")
    with open(path, "w") as f:
        f.write(f"function mpc = {name}\n")
        f.write(f"%{name.upper()}  IEEE test case, MATPOWER format.\n\n")
        f.write("%% MATPOWER Case Format : Version 2\n")
        f.write("mpc.version = '2';\n\n")
        f.write("%%-----  Power Flow Data  -----%%\n")
        f.write("%% system MVA base\n")
        f.write(f"mpc.baseMVA = {fmt(ppc['baseMVA'])};\n\n")
        write_matrix(f, "bus", ppc["bus"][:, :13],
                     "bus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin")
        write_matrix(f, "gen", ppc["gen"][:, :10],
                     "bus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin")
        write_matrix(f, "branch", ppc["branch"][:, :13],
                     "fbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax")


def reference(name, ppc, enforce_q):
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12, PF_MAX_IT=50,
                   ENFORCE_Q_LIMS=1 if enforce_q else 0)
    res, ok = runpf(ppc, opt)
    assert ok, name
    bus, branch = res["bus"], res["branch"]
    return {
        "case": name,
        "enforce_q_limits": enforce_q,
        "solver": "PYPOWER runpf (Newton, PF_TOL=1e-12)",
        "bus_id": [int(b) for b in bus[:, 0]],
        "vm": [float(v) for v in bus[:, 7]],
        "va_rad": [float(np.deg2rad(v)) for v in bus[:, 8]],
        "branch_pf_mw": [float(p) for p in branch[:, 13]],
        "bus_type_after": [int(t) for t in bus[:, 1]],
    }


def main():
    os.makedirs(DATA, exist_ok=True)
    os.makedirs(FIXTURES, exist_ok=True)
    for name, fn in CASES.items():
        write_case(name, fn())
        ref = reference(name, fn(), False)
        with open(os.path.join(FIXTURES, f"pf_{name}.json"), "w") as f:
            json.dump(ref, f, indent=1)


if __name__ == "__main__":
    main()
