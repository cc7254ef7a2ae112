"""
BaseAgent - Foundation for all covhmm pipeline agents
Provides shared functionality: logging, atomic output files, worker pools.
"""

import logging
import os
import tempfile
from concurrent.futures import Executor, ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union


class BaseAgent:
    """
    Base agent providing common functionality for all pipeline agents.
    """

    def __init__(self, name: str, verbose: bool = False):
        """
        Initialize base agent with logging configuration.

        Args:
            name: Agent name for logging
            verbose: Log at DEBUG instead of INFO
        """
        self.name = name
        level = logging.DEBUG if verbose else logging.INFO
        logging.basicConfig(
            level=level,
            format=f'[%(asctime)s] [{self.name}] %(levelname)s: %(message)s'
        )
        logging.getLogger().setLevel(level)
        self.logger = logging.getLogger(self.name)

    def log(self, message: str, level: str = "info"):
        """
        Log a message.

        Args:
            message: Message to log
            level: Log level (info, warning, error, debug)
        """
        if level == "info":
            self.logger.info(message)
        elif level == "warning":
            self.logger.warning(message)
        elif level == "error":
            self.logger.error(message)
        elif level == "debug":
            self.logger.debug(message)
        else:
            print(f"[{self.name}] {message}")

    def write_outputs(self, outputs: Dict[Union[str, Path], str]) -> None:
        """
        Write every output file atomically, as one batch.

        Each file is staged in a temp file next to its target and renamed into
        place only after all of them were written. Targets that already exist
        are moved aside first and restored if a later rename fails, so a
        failure leaves neither temp files nor a partial batch behind.
        """
        staged = []
        try:
            for path, text in outputs.items():
                target = Path(path)
                if target.is_dir():
                    raise IsADirectoryError(f"output path {target} is a directory")
                target.parent.mkdir(parents=True, exist_ok=True)
                fd, temp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
                staged.append((temp, target))
                with os.fdopen(fd, "w", newline="") as f:
                    f.write(text)
            self._commit(staged)
        except Exception:
            for temp, _ in staged:
                if os.path.exists(temp):
                    os.remove(temp)
            raise
        for _, target in staged:
            self.log(f"Wrote {target}")

    def _commit(self, staged: List[Tuple[str, Path]]) -> None:
        moved = []
        try:
            for temp, target in staged:
                backup = None
                if target.exists():
                    fd, backup = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".bak", dir=target.parent)
                    os.close(fd)
                    os.replace(target, backup)
                moved.append((target, backup))
                os.replace(temp, target)
        except Exception:
            for target, backup in reversed(moved):
                if backup is not None:
                    os.replace(backup, target)
                elif target.exists():
                    os.remove(target)
            raise
        for _, backup in moved:
            if backup is not None:
                os.remove(backup)

    def make_executor(self, jobs: Optional[int]) -> Optional[Executor]:
        """Process pool for jobs > 1, None to run in-process."""
        jobs = jobs or os.cpu_count() or 1
        if jobs <= 1:
            return None
        self.log(f"Using {jobs} worker processes", "debug")
        return ProcessPoolExecutor(max_workers=jobs)
