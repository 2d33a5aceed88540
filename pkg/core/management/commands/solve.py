import json

from core.cli import LabCommand, lab_config
from td_engine.mdp import exact_solve, induced_dynamics


class Command(LabCommand):
    help = 'Exact gain, centered bias and stationary distribution of a policy'

    def add_arguments(self, parser):
        self.add_source_arguments(parser, with_behavior=False)

    def run(self, *args, **options):
        mdp, target, _ = self.resolve_source(options)
        solution = exact_solve(induced_dynamics(mdp, target), tol=lab_config()["SOLVER_TOL"])
        # json writes shortest round-trip reprs, i.e. full precision
        self.stdout.write(json.dumps({
            "gain": solution.gain,
            "bias": solution.bias.tolist(),
            "stationary": solution.stationary.tolist(),
        }, indent=2))
