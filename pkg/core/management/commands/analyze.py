import json
from pathlib import Path

import numpy as np

from core.cli import LabCommand, lab_config
from td_engine.exceptions import ConfigError, SingularSystemError
from td_engine.mdp import exact_solve, induced_dynamics, n_step_kernel, stationary_distribution
from td_engine.stability import analyze, eta_sweep, fixed_point, lipschitz_bound


class Command(LabCommand):
    help = 'Stability report of the n-step differential TD mean dynamics for one (n, eta)'

    def add_arguments(self, parser):
        self.add_source_arguments(parser)
        parser.add_argument("--n", type=int, default=1, help="Bootstrap horizon")
        parser.add_argument("--eta", type=float, help="Average-reward step-size multiplier")
        parser.add_argument("--eta-sweep", type=float, nargs="+", metavar="ETA",
                            help="Report min Re(lambda(A)) over these eta values")
        parser.add_argument("--out", help="Also write the report to this JSON file")
        parser.add_argument("--spectrum-csv", help="Write the eigenvalues of A (real, imag) to this CSV")

    def run(self, *args, **options):
        if options["eta"] is None and not options["eta_sweep"]:
            raise ConfigError("give --eta or --eta-sweep")
        config = lab_config()
        mdp, target, behavior = self.resolve_source(options)
        n = options["n"]
        chain = induced_dynamics(mdp, target)
        solution = exact_solve(chain, tol=config["SOLVER_TOL"])
        P_n, r_n = n_step_kernel(chain, n)
        d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P, tol=config["SOLVER_TOL"])

        output = {"n": n, "d_pi": solution.stationary.tolist(), "d_mu": d_mu.tolist()}
        if options["eta"] is not None:
            eta = options["eta"]
            report = analyze(
                P_n, d_mu, solution.stationary, eta, n=n,
                tol=config["STABILITY_TOL"],
                rank_rtol=config["RANK_RTOL"],
                kernel_tol=config["KERNEL_TOL"],
            )
            output["report"] = report.to_dict()
            if options["spectrum_csv"]:
                np.savetxt(
                    options["spectrum_csv"],
                    np.column_stack([report.spectrum.real, report.spectrum.imag]),
                    delimiter=",", header="real,imag", comments="", fmt="%.17g",
                )
            mu_min = float(behavior.probs[behavior.probs > 0].min())
            output["lipschitz_bound"] = lipschitz_bound(mu_min, n, eta, mdp.num_states)
            try:
                v_inf = fixed_point(P_n, r_n, eta)
                output["fixed_point"] = v_inf.tolist()
                output["fixed_point_offset"] = float(np.mean(v_inf - solution.bias))
            except SingularSystemError as e:
                self.stdout.write(self.style.WARNING(str(e)))
        if options["eta_sweep"]:
            output["eta_sweep"] = [
                {"eta": eta, "min_real_part": value}
                for eta, value in eta_sweep(P_n, d_mu, options["eta_sweep"])
            ]

        text = json.dumps(output, indent=2)
        self.stdout.write(text)
        if options["out"]:
            Path(options["out"]).write_text(text)
        if "report" in output:
            report = output["report"]
            if report["certified_stable"]:
                self.stdout.write(self.style.SUCCESS(
                    f"Certified stable ({', '.join(report['certificates'])})"
                ))
            elif report["strictly_positive_stable"]:
                self.stdout.write(self.style.WARNING("Stable by spectrum only, no certificate applies"))
            else:
                self.stdout.write(self.style.ERROR("A is not strictly positive stable"))
