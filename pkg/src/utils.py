"""
Utility Functions

Common utilities for logging, file I/O (JSON, JSONL, CSV), and progress
reporting.
"""

import csv
import json
import logging
import os
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Iterable, List, Optional, Sequence


def setup_logging(config: Dict[str, Any]) -> logging.Logger:
    """Setup structured logging with optional file rotation.

    Args:
        config: Configuration dictionary

    Returns:
        Configured root logger
    """
    log_level = config.get('logging', {}).get('log_level', 'INFO')
    log_path = config.get('logging', {}).get('log_path')

    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG if log_path else getattr(logging, log_level))
    logger.handlers.clear()

    # Console handler (stderr, stdout carries command output)
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, log_level))
    console_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%H:%M:%S'
    ))
    logger.addHandler(console_handler)

    if log_path:
        os.makedirs(log_path, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = os.path.join(log_path, f'directional_evidence_{timestamp}.log')

        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(logging.DEBUG)  # Always debug in file
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
        ))
        logger.addHandler(file_handler)
        logger.debug(f"Logging initialized: {log_file}")

    return logger


def log_iteration(filepath: str, record: Dict[str, Any]) -> None:
    """Append one training iteration record to a JSONL trace file.

    Args:
        filepath: Path to the JSONL file
        record: Iteration fields (iteration index, loss, ...)
    """
    append_jsonl(filepath, [record])


def ensure_directory(path: str) -> None:
    """Ensure the parent directory of a file path exists."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def read_json_file(filepath: str) -> Dict[str, Any]:
    """Read a JSON document.

    Raises:
        OSError: If the file cannot be read
        json.JSONDecodeError: If the content is not valid JSON
    """
    with open(filepath, 'r') as f:
        return json.load(f)


def write_json_file(filepath: str, data: Dict[str, Any]) -> None:
    """Write a JSON document with indentation."""
    ensure_directory(filepath)
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
        f.write('\n')


def read_jsonl(filepath: str) -> List[Dict[str, Any]]:
    """Read one JSON object per non-empty line."""
    records = []
    with open(filepath, 'r') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{filepath}:{line_no}: invalid JSON ({e.msg})") from e
    return records


def append_jsonl(filepath: str, records: Iterable[Dict[str, Any]]) -> None:
    """Append records as JSON lines."""
    ensure_directory(filepath)
    with open(filepath, 'a') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')


def format_float(value: float) -> str:
    """17 significant digits, exact on reload."""
    return format(float(value), '.17g')


def format_csv_row(values: Sequence[Any]) -> List[str]:
    return [format_float(v) if isinstance(v, float) else str(v) for v in values]


def write_csv_rows(
    stream,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    write_header: bool = True
) -> None:
    """Write CSV rows with floats at 17 significant digits."""
    writer = csv.writer(stream, lineterminator='\n')
    if write_header:
        writer.writerow(header)
    for row in rows:
        writer.writerow(format_csv_row(row))


def append_csv(filepath: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Append rows to a CSV file, writing the header only for a new file."""
    ensure_directory(filepath)
    new_file = not os.path.exists(filepath) or os.path.getsize(filepath) == 0
    with open(filepath, 'a', newline='') as f:
        write_csv_rows(f, header, rows, write_header=new_file)


def read_csv_columns(filepath: str, columns: Sequence[str]) -> Dict[str, List[float]]:
    """Read named float columns from a CSV file with a header row.

    Raises:
        ValueError: If a column is missing or a value is not numeric
    """
    with open(filepath, 'r', newline='') as f:
        reader = csv.DictReader(f)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{filepath}: missing columns {missing}")
        out: Dict[str, List[float]] = {c: [] for c in columns}
        for row in reader:
            for c in columns:
                out[c].append(float(row[c]))
    return out


def format_duration(seconds: float) -> str:
    """Format duration in seconds to human-readable string.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted string
    """
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = seconds / 60
        return f"{minutes:.1f}m"
    else:
        hours = seconds / 3600
        return f"{hours:.1f}h"


class ProgressTracker:
    """Track progress of multi-step operations."""

    def __init__(self, total_steps: int, label: str = 'Progress'):
        """Initialize progress tracker.

        Args:
            total_steps: Total number of steps
            label: Prefix of the progress messages
        """
        self.total_steps = total_steps
        self.label = label
        self.current_step = 0
        self.start_time = datetime.now()

    def step(self, message: str = "") -> None:
        """Increment step counter.

        Args:
            message: Optional progress message
        """
        self.current_step += 1
        percentage = (self.current_step / self.total_steps) * 100 if self.total_steps else 100.0
        elapsed = (datetime.now() - self.start_time).total_seconds()
        eta = (elapsed / self.current_step) * max(0, self.total_steps - self.current_step)

        progress_msg = (
            f"{self.label}: {self.current_step}/{self.total_steps} "
            f"({percentage:.1f}%) - ETA: {format_duration(eta)}"
        )
        if message:
            progress_msg += f" - {message}"

        logging.getLogger(__name__).debug(progress_msg)

    def finish(self) -> Optional[float]:
        """Mark progress as finished and return the elapsed seconds."""
        elapsed = (datetime.now() - self.start_time).total_seconds()
        logging.getLogger(__name__).info(f"{self.label} completed in {format_duration(elapsed)}")
        return elapsed
