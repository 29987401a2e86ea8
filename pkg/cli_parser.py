import argparse
from typing import List, NamedTuple, Optional, Sequence

from constants import COMMANDS, LOG_LEVELS


class CliArgs(NamedTuple):
    command: str
    config: Optional[str]
    seed: Optional[int]
    out: Optional[str]
    jobs: Optional[int]
    log_level: str
    schedule: Optional[str] = None
    heads: Optional[List[int]] = None
    exemplars: Optional[int] = None
    strategy: Optional[str] = None
    dataset: Optional[str] = None
    snapshot: Optional[str] = None
    sweep_config: Optional[str] = None
    num_classes: Optional[int] = None
    n_per_class: Optional[int] = None
    dim: Optional[int] = None
    separation: Optional[float] = None
    noise_sigma: Optional[float] = None


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise ValueError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(token) for token in text.split(",") if token.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


class CliParser:
    @staticmethod
    def build_parser() -> argparse.ArgumentParser:
        common = _ArgumentParser(add_help=False)
        common.add_argument("--config", "-c", type=str, help="Experiment configuration (YAML or JSON)")
        common.add_argument("--seed", type=int, help="Run a single seed instead of the configured list")
        common.add_argument("--out", "-o", type=str, help="Output directory")
        common.add_argument("--jobs", "-j", type=int, help="Concurrent sweep cells")
        common.add_argument(
            "--log-level",
            type=str.upper,
            choices=LOG_LEVELS,
            default="INFO",
            help="Logging verbosity",
        )
        common.add_argument("--schedule", type=str, help="Class schedule, e.g. 4-2-2-2")
        common.add_argument("--heads", type=_int_list, help="Decreasing head sizes, e.g. 5,4,3,2")
        common.add_argument("--exemplars", "-k", type=int, help="Exemplar budget K")
        common.add_argument("--strategy", choices=["random", "herding"], help="Exemplar selection")
        common.add_argument("--dataset", type=str, help="Dataset directory (manifest + binaries)")

        parser = _ArgumentParser(description="Class-incremental learning experiments")
        subparsers = parser.add_subparsers(dest="command", required=True)
        commands = {
            name: subparsers.add_parser(name, parents=[common], help=help_text)
            for name, help_text in COMMANDS.items()
        }
        commands["run-cil"].add_argument(
            "--snapshot", type=str, help="Base model snapshot from train-base"
        )
        for name in ("sweep-heads", "sweep-exemplars"):
            commands[name].add_argument(
                "--sweep-config", type=str, help="Sweep settings (YAML or JSON)"
            )
        synth = commands["synth"]
        synth.add_argument("--num-classes", type=int)
        synth.add_argument("--n-per-class", type=int)
        synth.add_argument("--dim", type=int)
        synth.add_argument("--separation", type=float)
        synth.add_argument("--noise-sigma", type=float)
        return parser

    @staticmethod
    def parse_arguments(argv: Optional[Sequence[str]] = None) -> CliArgs:
        """Parse command line arguments."""
        args = CliParser.build_parser().parse_args(argv)
        return CliArgs(
            command=args.command,
            config=args.config,
            seed=args.seed,
            out=args.out,
            jobs=args.jobs,
            log_level=args.log_level,
            schedule=args.schedule,
            heads=args.heads,
            exemplars=args.exemplars,
            strategy=args.strategy,
            dataset=args.dataset,
            snapshot=getattr(args, "snapshot", None),
            sweep_config=getattr(args, "sweep_config", None),
            num_classes=getattr(args, "num_classes", None),
            n_per_class=getattr(args, "n_per_class", None),
            dim=getattr(args, "dim", None),
            separation=getattr(args, "separation", None),
            noise_sigma=getattr(args, "noise_sigma", None),
        )

    @staticmethod
    def validate_args(args: CliArgs) -> None:
        """Reject flag values no command can use."""
        if args.jobs is not None and args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        if args.exemplars is not None and args.exemplars < 1:
            raise ValueError("--exemplars must be positive")
        if args.heads is not None and len(args.heads) == 0:
            raise ValueError("--heads needs at least one size")
