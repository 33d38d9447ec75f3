import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List


class RunLogger:
    """
    Logger for one command invocation.
    Writes <out>/logs/<command>_<timestamp>.log next to the run outputs.
    """

    def __init__(self, command: str, out_dir: str = "runs"):
        """
        Initialize the run logger.

        Args:
            command: Name of the command being run (e.g. "train-teacher")
            out_dir: Output directory of the run; logs go to its logs/ subdirectory
        """
        self.command = command
        self.out_dir = Path(out_dir)
        self.log_dir = self.out_dir / "logs"
        self.timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")

        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.log_dir / f"{command}_{self.timestamp}.log"
        self.logger = self._setup_logger()

    def _setup_logger(self) -> logging.Logger:
        logger = logging.getLogger(f"avcap.{self.command}.{self.timestamp}.{id(self):x}")
        logger.setLevel(logging.DEBUG)
        logger.propagate = False

        if not logger.handlers:
            file_handler = logging.FileHandler(self.log_path, encoding="utf-8")
            file_handler.setLevel(logging.DEBUG)
            formatter = logging.Formatter(
                "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S",
            )
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

        return logger

    def info(self, message: str):
        self.logger.info(message)

    def success(self, message: str):
        """Log success message (as INFO level with SUCCESS prefix)."""
        self.logger.info(f"SUCCESS: {message}")

    def warning(self, message: str):
        self.logger.warning(message)

    def error(self, message: str, exc_info: bool = False):
        self.logger.error(message, exc_info=exc_info)

    def debug(self, message: str):
        self.logger.debug(message)

    def log_run_start(self, config: Dict[str, Any]):
        """Log the command and every resolved config value."""
        self.info(f"Starting command: {self.command}")
        for key, value in sorted(config.items()):
            self.info(f"  {key} = {value}")

    def log_summary(self, title: str, values: Dict[str, Any]):
        self.info("=" * 50)
        self.info(title.upper())
        for name, value in values.items():
            self.info(f"{name}: {value}")
        self.info("=" * 50)

    def log_failures(self, failures: List[str]):
        if failures:
            self.warning(f"Found {len(failures)} failed events:")
            for item in failures[:20]:  # Log first 20
                self.warning(f"  - {item}")
            if len(failures) > 20:
                self.warning(f"  ... and {len(failures) - 20} more")

    def log_exception(self, exception: Exception, context: str = ""):
        error_msg = "Exception occurred"
        if context:
            error_msg += f" during {context}"
        error_msg += f": {type(exception).__name__}: {str(exception)}"
        self.error(error_msg, exc_info=True)

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


def create_run_logger(command: str, out_dir: str = "runs") -> RunLogger:
    """
    Factory function to create a RunLogger instance.

    Args:
        command: Name of the command
        out_dir: Output directory of the run

    Returns:
        RunLogger instance
    """
    return RunLogger(command=command, out_dir=out_dir)
