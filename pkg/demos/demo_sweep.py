"""The full tracking pipeline on the shipped demo configuration.

Runs the eps sweep, prints the sweep checks and writes the report to
./out/demo (about a minute). Equivalent to
``minnaert-control sweep --config demo --out out/demo --dt-check``.
"""

import sys

from minnaert_control.harness import demo_config, emit_report, epsilon_sweep, validate_config


def main(out="out/demo"):
    report = epsilon_sweep(validate_config(demo_config()), dt_check=True)
    for rec in report.summary["records"]:
        print(f"eps={rec['eps']:<6g} realization={rec['realization_error']:.3e} "
              f"tracking={rec['tracking_error']:.3e} cost={rec['control_cost']:.4g}")
    for c in report.summary["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['criterion']}")
    print(emit_report(report, out)["summary"])


if __name__ == "__main__":
    main(*sys.argv[1:])
