"""
Shared pieces of the lab's management commands: LabError translation and
the MDP / policy source options.
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from td_engine.environments import (
    GridworldSpec,
    build_gridworld,
    gridworld_target_policy,
    uniform_random_policy,
)
from td_engine.exceptions import ConfigError, LabError
from td_engine.mdp import load_mdp, load_policy

logger = logging.getLogger(__name__)


def lab_config():
    return settings.LAB_CONFIG


def parse_grid(value):
    """'5x5' -> GridworldSpec(width=5, height=5)."""
    try:
        width, height = (int(part) for part in value.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"gridworld size must look like WxH, got {value!r}") from e
    return GridworldSpec(width=width, height=height)


class LabCommand(BaseCommand):
    """BaseCommand whose `run` may raise LabError; it surfaces as CommandError."""

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except LabError as e:
            raise CommandError(f"{type(e).__name__}: {e}") from e
        except OSError as e:
            raise CommandError(str(e)) from e

    def run(self, *args, **options):
        raise NotImplementedError

    def add_source_arguments(self, parser, with_behavior=True):
        parser.add_argument("--mdp", help="MDP specification file (JSON)")
        parser.add_argument("--gridworld", metavar="WxH", help="Build a gridworld instead of loading an MDP")
        parser.add_argument("--policy", help="Target policy file (JSON)")
        parser.add_argument("--epsilon", type=float, default=0.1,
                            help="Epsilon of the gridworld's greedy target policy")
        if with_behavior:
            parser.add_argument("--behavior", help="Behavior policy file (JSON); default: on-policy, "
                                                   "or uniform for --gridworld")

    def resolve_source(self, options):
        """(mdp, target, behavior) from --mdp/--gridworld and the policy options."""
        if bool(options.get("mdp")) == bool(options.get("gridworld")):
            raise ConfigError("give exactly one of --mdp and --gridworld")
        if options.get("gridworld"):
            spec = parse_grid(options["gridworld"])
            mdp = build_gridworld(spec)
            if options.get("policy"):
                target = load_policy(options["policy"])
            else:
                target = gridworld_target_policy(spec, options["epsilon"], mdp=mdp)
            default_behavior = uniform_random_policy(mdp)
        else:
            mdp = load_mdp(options["mdp"])
            if not options.get("policy"):
                raise ConfigError("--mdp needs a --policy file")
            target = load_policy(options["policy"])
            default_behavior = target
        behavior = default_behavior
        if options.get("behavior"):
            behavior = load_policy(options["behavior"])
        return mdp, target, behavior
