import sys
from typing import List, Optional

from loguru import logger
from pydantic import ValidationError

from app.cli.handlers import build_parser, config_from_args
from app.core.config import configure
from app.core.errors import ConfigError, MteBoundsError
from app.core.logger import setup_logger
from app.services.workflow import run


def main(argv: Optional[List[str]] = None) -> int:
    # 1. Разбор флагов (неизвестные флаги -> argparse завершает с кодом 2)
    args = build_parser().parse_args(argv)

    try:
        # 2. Настройки и логгер
        settings = configure(args.config)
        setup_logger(args.log_level or settings.LOG_LEVEL)

        # 3. Флаги -> RunConfig -> пайплайн
        config = config_from_args(args, settings)
        manifest = run(config)
    except ValidationError as e:
        for err in e.errors():
            field = ".".join(str(part) for part in err["loc"]) or "config"
            logger.error(f"Invalid configuration: {field}: {err['msg']}")
        return ConfigError.exit_code
    except MteBoundsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return ConfigError.exit_code

    logger.success(f"'{manifest.command}' finished in {manifest.wall_time_s:.2f}s, "
                   f"{len(manifest.artifacts)} artifacts in {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
