"""
File handling utilities: output directories, artifact writers and range parsing.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ParameterError


def format_float(value: float) -> str:
    """Render a float with 17 significant digits (round-trip exact)."""
    return format(float(value), ".17g")


class FileHandler:
    """Utility class for output files and grid/schedule parsing."""

    @staticmethod
    def prepare_output_dir(out_dir: Union[str, Path]) -> Path:
        """
        Create (if needed) and return the output directory.

        Raises:
            ParameterError: If the path exists and is not a directory
        """
        path = Path(out_dir)
        if path.exists() and not path.is_dir():
            raise ParameterError(f"Output path is not a directory: {out_dir}")
        path.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def write_json(path: Union[str, Path], payload: Dict[str, Any], config_hash: str) -> Path:
        """Write a JSON artifact with the config hash embedded."""
        path = Path(path)
        body = {'config_hash': config_hash, **payload}
        path.write_text(json.dumps(body, ensure_ascii=False, indent=2, sort_keys=False) + "\n")
        return path

    @staticmethod
    def write_csv(
        path: Union[str, Path],
        header: Sequence[str],
        rows: Iterable[Sequence[Any]],
        config_hash: str,
        meta: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """
        Write a CSV artifact preceded by a one-line JSON metadata comment.

        Floats are written with 17 significant digits; ints and strings verbatim.
        """
        path = Path(path)
        header_meta = {'config_hash': config_hash, **(meta or {})}
        with open(path, 'w', newline='') as handle:
            handle.write('# ' + json.dumps(header_meta, sort_keys=True) + '\n')
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([
                    format_float(v) if isinstance(v, (float, np.floating)) else v
                    for v in row
                ])
        return path

    @staticmethod
    def read_csv(path: Union[str, Path]) -> Tuple[Dict[str, Any], List[str], List[List[str]]]:
        """Read a CSV written by write_csv; returns (meta, header, rows)."""
        with open(path, newline='') as handle:
            first = handle.readline()
            meta = json.loads(first[2:]) if first.startswith('# ') else {}
            reader = csv.reader(handle)
            header = next(reader)
            return meta, header, [row for row in reader]

    @staticmethod
    def parse_grid(grid_str: Optional[str]) -> List[float]:
        """
        Parse a radius grid string into a list of values.

        Args:
            grid_str: "start:stop:step" (stop included within step/2) or "a,b,c"

        Returns:
            Sorted list of distinct positive floats

        Examples:
            "0.3:0.6:0.05" -> [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6]
            "0.2,0.5" -> [0.2, 0.5]
        """
        if not grid_str:
            raise ParameterError("Empty radius grid")

        values: List[float] = []
        for part in grid_str.split(','):
            part = part.strip()
            if not part:
                continue
            try:
                if ':' in part:
                    start, stop, step = (float(x) for x in part.split(':'))
                    if step <= 0 or stop < start:
                        raise ParameterError(f"Bad grid range: {part}")
                    count = int(np.floor((stop - start) / step + 0.5)) + 1
                    values.extend(round(start + i * step, 12) for i in range(count))
                else:
                    values.append(float(part))
            except ValueError as e:
                if isinstance(e, ParameterError):
                    raise
                raise ParameterError(f"Cannot parse grid entry '{part}'") from e

        if not values or min(values) <= 0:
            raise ParameterError(f"Grid must contain positive radii: {grid_str}")
        return sorted(set(values))

    @staticmethod
    def parse_schedule(schedule_str: Optional[str]) -> List[Tuple[float, int]]:
        """
        Parse a sewing schedule.

        Args:
            schedule_str: "default", "default:LEN" or "delta@n,delta@n,..."

        Returns:
            List of (delta, n) pairs in the given order

        Raises:
            ParameterError: On malformed entries or deltas that do not strictly decrease
        """
        from ..tools.sewing_sim import default_schedule

        if not schedule_str or schedule_str == 'default':
            return default_schedule()
        if schedule_str.startswith('default:'):
            try:
                return default_schedule(int(schedule_str.split(':', 1)[1]))
            except ValueError as e:
                raise ParameterError(f"Bad schedule length: {schedule_str}") from e

        steps = []
        for part in schedule_str.split(','):
            try:
                delta_str, n_str = part.strip().split('@')
                steps.append((float(delta_str), int(n_str)))
            except ValueError as e:
                raise ParameterError(f"Bad schedule entry '{part}', expected delta@n") from e
        if any(d <= 0 or n < 0 for d, n in steps):
            raise ParameterError(f"Schedule entries need delta > 0 and n >= 0: {schedule_str}")
        deltas = [d for d, _ in steps]
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise ParameterError(f"Schedule deltas must be strictly decreasing in the given order: {schedule_str}")
        return steps

    @staticmethod
    def parse_point(point_str: Union[str, int, None]) -> Union[str, int]:
        """Parse a probe location: 'all', 'p0' or a node index."""
        if point_str is None:
            return 'all'
        if isinstance(point_str, int):
            return point_str
        point_str = point_str.strip()
        if point_str in ('all', 'p0'):
            return point_str
        if point_str.isdigit():
            return int(point_str)
        raise ParameterError(f"Probe location must be 'all', 'p0' or an index, got '{point_str}'")
