"""Command-line entry point: ``loradp <command> [--config FILE] [flags]``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime
failure (divergence or any other error). Failures print one JSON object on
stderr and, when the output directory is known, also write ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import COMMANDS, parse_config, parse_override
from .errors import ConfigError, DivergenceError, InvalidArgumentError, ShapeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    p.add_argument("--parallelism", type=int, help="worker processes; results do not depend on it")
    p.add_argument("--output-dir", help="directory for outputs (default runs/<command>)")
    p.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override one command parameter; VALUE is read as YAML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loradp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _add_common(sub.add_parser(name))
    rp = sub.add_parser("replay", help="rerun the config recorded in a manifest.json")
    rp.add_argument("manifest")
    rp.add_argument("--output-dir", help="write the replay here instead of the recorded directory")
    rp.add_argument("--parallelism", type=int)
    return parser


def _fail(code: int, kind: str, exc: Exception, output_dir: str | None) -> int:
    payload = {"error": kind, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["field"] = exc.field
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if output_dir:
        try:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            (Path(output_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # imported late so ``--help`` stays fast
    from .experiments import run

    output_dir = getattr(args, "output_dir", None)
    try:
        if args.command == "replay":
            config = parse_config(args.manifest, output_dir=args.output_dir, parallelism=args.parallelism)
        else:
            params = dict(parse_override(item) for item in args.param)
            config = parse_config(args.config, command=args.command, seed=args.seed,
                                  parallelism=args.parallelism, output_dir=args.output_dir,
                                  params=params)
        output_dir = config.output_dir
        run(config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config-error", exc, output_dir)
    except (InvalidArgumentError, ShapeError) as exc:
        return _fail(EXIT_CONFIG, "invalid-argument", exc, output_dir)
    except DivergenceError as exc:
        return _fail(EXIT_RUNTIME, "divergence", exc, output_dir)
    except Exception as exc:  # noqa: BLE001 - surfaced as JSON, not a traceback
        return _fail(EXIT_RUNTIME, "runtime-error", exc, output_dir)
    print(json.dumps({"command": config.command, "output_dir": config.output_dir,
                      "outputs": sorted(p.name for p in Path(config.output_dir).iterdir())}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
