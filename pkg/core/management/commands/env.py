from pathlib import Path

from core.cli import LabCommand, lab_config, parse_grid
from td_engine.environments import build_gridworld, gridworld_target_policy, random_ergodic_mdp
from td_engine.exceptions import ConfigError
from td_engine.mdp import save_mdp, save_policy


class Command(LabCommand):
    help = 'Environment utilities; `env dump` writes an MDP specification file'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="action", required=True)
        dump = subparsers.add_parser("dump", help="Write a gridworld or random ergodic MDP as JSON")
        dump.add_argument("--out", required=True, help="MDP file to write")
        dump.add_argument("--gridworld", metavar="WxH", default="5x5")
        dump.add_argument("--epsilon", type=float, default=0.1)
        dump.add_argument("--policy-out", help="Also write the epsilon-greedy target policy (gridworld only)")
        dump.add_argument("--random", nargs=2, type=int, metavar=("STATES", "ACTIONS"),
                          help="Random ergodic MDP instead of a gridworld")
        dump.add_argument("--seed", type=int, default=0, help="Seed for --random")

    def run(self, *args, **options):
        if options["action"] == "dump":
            self.dump(options)

    def dump(self, options):
        out = Path(options["out"])
        if options["random"]:
            if options["policy_out"]:
                raise ConfigError("--policy-out only applies to gridworlds")
            states, actions = options["random"]
            mdp = random_ergodic_mdp(
                states, actions, options["seed"], floor=lab_config()["TRANSITION_FLOOR"]
            )
        else:
            spec = parse_grid(options["gridworld"])
            mdp = build_gridworld(spec)
            if options["policy_out"]:
                save_policy(gridworld_target_policy(spec, options["epsilon"], mdp=mdp), options["policy_out"])
                self.stdout.write(f"Wrote target policy to {options['policy_out']}")
        save_mdp(mdp, out)
        self.stdout.write(self.style.SUCCESS(
            f"Wrote MDP with {mdp.num_states} states and {mdp.num_actions} actions to {out}"
        ))
