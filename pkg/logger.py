import logging
from typing import Union


class LoggerSetup:
    def __init__(self, log_format: str, level: Union[int, str] = logging.INFO):
        self.log_format = log_format
        self.level = level
        self.logger = self.setup_logging()

    def setup_logging(self) -> logging.Logger:
        """Setup logging configuration."""
        logging.basicConfig(level=self.level, format=self.log_format)
        logging.getLogger().setLevel(self.level)
        return logging.getLogger("cil_toolkit")

    def get_logger(self) -> logging.Logger:
        return self.logger
