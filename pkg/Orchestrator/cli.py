import sys
from typing import Optional, Sequence

from Denoiser.checkpoint import CheckpointFormatError
from Orchestrator.orchestrator import Orchestrator
from Orchestrator.run_config import ConfigError, parse_args
from Orchestrator.task_templates import TemplateError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit 0 on success, 1 on a runtime failure (or failed selftest), 2 on usage, config or file errors."""
    try:
        command, config = parse_args(argv)
    except ConfigError as e:
        print(f"fragdiff: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # argparse exits 2 on bad usage, 0 on --help
        return int(e.code or 0)

    try:
        result = Orchestrator(config).run(command)
    except (ConfigError, TemplateError, CheckpointFormatError) as e:
        print(f"fragdiff {command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"fragdiff {command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        print(f"fragdiff {command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE

    if command == "selftest" and not result:
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
