import argparse
import asyncio
import json
import sys

import yaml

from src.core.dispatch import CommandDispatcher
from src.core.registration import RunRegistration
from src.utils.config import Config
from src.utils.logger import get_logger, sea_logger
from version import __version__

# Get module logger
logger = get_logger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sea", description="SEA sparse linear attention engine")
    parser.add_argument("--config", help="config.yml to load instead of the repository default")
    parser.add_argument("--seed", type=int, help="base seed (config `seed`)")
    parser.add_argument("--log-level", help="console log level (config `logLevel`)")
    parser.add_argument("--json", action="store_true", help="print the full result as JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the verification suites")
    p.add_argument("--sizes", type=int_list, help="sequence lengths, e.g. 16,32")
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--suite", action="append", dest="suites", help="run only this suite (repeatable)")

    p = sub.add_parser("bench", help="work counters and timings against the dense reference")
    p.add_argument("--seq-lens", type=int_list, default=[256, 512, 1024, 2048])
    p.add_argument("--k", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train-toy", help="distill a SEA student from the copy-task teacher")
    p.add_argument("--steps", type=int)
    p.add_argument("--teacher-steps", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--lr-sea", type=float)
    p.add_argument("--lr-backbone", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--task-only", action="store_true", help="undistilled baseline: task loss only")
    p.add_argument("--out", help="training log CSV")
    p.add_argument("--save", help="weights file")

    p = sub.add_parser("dynamic-k", help="evaluate trained weights at several k")
    p.add_argument("--weights", required=True)
    p.add_argument("--k-list", type=int_list, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--out")

    p = sub.add_parser("dump-attn", help="PGM heatmaps of the intermediate attention buffers")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--tokens", type=int_list)
    return parser


def build_command(args: argparse.Namespace) -> dict:
    """Translate parsed flags into a dispatcher command; unset flags stay out of params."""
    if args.command == "verify":
        module, action = "bench", "verify"
        params = {"sizes": args.sizes, "trials": args.trials, "suites": args.suites}
    elif args.command == "bench":
        module, action = "bench", "bench"
        params = {"seq_lens": args.seq_lens, "k": args.k, "K": args.K, "reps": args.reps,
                  "threads": args.threads, "out": args.out}
    elif args.command == "train-toy":
        module, action = "distill", "train_toy"
        params = {"steps": args.steps, "teacher_steps": args.teacher_steps, "k": args.k, "K": args.K,
                  "optimizer": args.optimizer, "lr_sea": args.lr_sea, "lr_backbone": args.lr_backbone,
                  "batch_size": args.batch_size, "task_only": args.task_only,
                  "out": args.out, "save": args.save}
    elif args.command == "dynamic-k":
        module, action = "distill", "dynamic_k"
        params = {"weights": args.weights, "k_list": args.k_list, "batch_size": args.batch_size, "out": args.out}
    else:
        module, action = "bench", "dump_attn"
        params = {"weights": args.weights, "out": args.out, "layer": args.layer, "tokens": args.tokens}
    params["seed"] = args.seed
    return {"command_id": args.command, "module": module, "action": action,
            "params": {k: v for k, v in params.items() if v is not None}}


def print_result(command: str, result: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(result, indent=2, default=str))
        return
    if command == "verify" and "report" in result:
        for suite in result["report"]["suites"]:
            mark = "PASS" if suite["ok"] else "FAIL"
            print(f"  [{mark}] {suite['name']:<28} {suite['passed']:>4} passed {suite['failed']:>4} failed")
    elif "csv" in result and "out" not in result:
        print(result["csv"], end="")
    if not result.get("success"):
        print(f"Error: {result.get('error')}", file=sys.stderr)


async def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config(args.config)
    except (FileNotFoundError, yaml.YAMLError) as e:
        sea_logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    cfg = cfg.with_overrides(logLevel=args.log_level, seed=args.seed)
    sea_logger.set_console_level(cfg.log_level)

    dispatcher = CommandDispatcher(cfg)
    identity = RunRegistration.get_run_identity(capabilities=dispatcher.get_capabilities())

    # Print startup info
    print("=" * 50)
    print(f"  SEA engine v{identity['version']}")
    print("=" * 50)
    print(f"  Host:         {identity['hostname']} ({identity['physical_cores']} cores)")
    print(f"  numpy:        {identity['numpy']}")
    print(f"  Command:      {args.command}")
    print("=" * 50)

    sea_logger.operation("sea", "starting", f"v{__version__} {args.command}")
    result = await dispatcher.dispatch(build_command(args))
    print_result(args.command, result, args.json)
    if result.get("success"):
        return EXIT_OK
    return int(result.get("exit_code", EXIT_FAILED))


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        sea_logger.operation("sea", "stopped", "User interrupt")
        sys.exit(EXIT_FAILED)
    except Exception as e:
        sea_logger.exception(f"Unexpected error: {e}")
        sys.exit(EXIT_FAILED)
