import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from excel_generator import BenchReportGenerator

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def dumps_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline"""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def records_to_csv(records: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    """
    Render records as CSV with a fixed column order

    Missing values become empty cells; every value is written with str() so
    integer columns never turn into floats.
    """
    rows = [{column: "" if record.get(column) is None else str(record.get(column)) for column in columns}
            for record in records]
    frame = pd.DataFrame(rows, columns=list(columns))
    return frame.to_csv(index=False, lineterminator="\n")


class OutputHandler:
    """Write result files under an output directory and read them back"""

    def __init__(self, output_dir: Optional[PathLike] = None):
        self.output_dir = Path(output_dir) if output_dir else Path.cwd()
        self.excel_generator = BenchReportGenerator()

    def resolve(self, path: PathLike) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.output_dir / path

    def save_text(self, text: str, path: PathLike) -> Path:
        """
        Write text to a file, creating parent directories

        Args:
            text: content
            path: target (relative paths resolve against the output directory)

        Returns:
            Path written
        """
        target = self.resolve(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "w", newline="\n") as f:
                f.write(text)
            logger.info(f"Saved {target}")
            return target
        except OSError as e:
            logger.error(f"Error writing {target}: {str(e)}")
            raise

    def save_json(self, data: Any, path: PathLike) -> Path:
        return self.save_text(dumps_json(data), path)

    def load_json(self, path: PathLike) -> Any:
        target = self.resolve(path)
        try:
            with open(target, "r") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error reading JSON {target}: {str(e)}")
            raise

    def save_csv(self, records: Sequence[Dict[str, Any]], columns: Sequence[str], path: PathLike) -> Path:
        return self.save_text(records_to_csv(records, columns), path)

    def load_csv(self, path: PathLike) -> pd.DataFrame:
        """Read a CSV back as strings, empty cells kept as empty strings"""
        target = self.resolve(path)
        try:
            return pd.read_csv(target, dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError) as e:
            logger.error(f"Error reading CSV {target}: {str(e)}")
            raise

    def save_excel(self, records: List[Dict[str, Any]], path: PathLike) -> Path:
        target = self.resolve(path)
        try:
            excel_bytes = self.excel_generator.generate_bench_report(records)
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "wb") as f:
                f.write(excel_bytes)
            logger.info(f"Saved bench workbook: {target}")
            return target
        except Exception as e:
            logger.error(f"Error saving bench workbook {target}: {str(e)}")
            raise

    def load_excel(self, path: PathLike, sheet_name: str = 'Runs') -> pd.DataFrame:
        target = self.resolve(path)
        try:
            with open(target, "rb") as f:
                return pd.read_excel(io.BytesIO(f.read()), sheet_name=sheet_name, engine='openpyxl')
        except (OSError, ValueError) as e:
            logger.error(f"Error reading workbook {target}: {str(e)}")
            raise
