"""
File and directory utilities
"""
import json
from pathlib import Path
from typing import Any
from .logging_utils import get_logger

logger = get_logger(__name__)


def ensure_directory(path: str) -> Path:
    """
    Ensure a directory exists, create if it doesn't

    Args:
        path: Directory path

    Returns:
        Path object
    """
    dir_path = Path(path)
    dir_path.mkdir(parents=True, exist_ok=True)
    logger.debug(f"Ensured directory exists: {dir_path}")
    return dir_path


def save_json(data: Any, file_path: str, indent: int = 2) -> bool:
    """
    Save data as JSON with sorted keys so equal data gives equal bytes

    Args:
        data: Data to save
        file_path: Path to save to
        indent: JSON indentation level

    Returns:
        True if successful, False otherwise
    """
    path = Path(file_path)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(data, f, indent=indent, sort_keys=True, ensure_ascii=False)
            f.write('\n')
        logger.debug(f"Saved JSON to: {file_path}")
        return True
    except (OSError, TypeError) as e:
        logger.error(f"Error saving JSON to {file_path}: {e}")
        return False


def write_text(file_path: str, text: str) -> bool:
    """
    Write a text file (CSV tables, scenario dumps)

    Returns:
        True if successful, False otherwise
    """
    path = Path(file_path)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        logger.debug(f"Wrote {len(text)} chars to: {file_path}")
        return True
    except OSError as e:
        logger.error(f"Error writing {file_path}: {e}")
        return False
