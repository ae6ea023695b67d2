"""
Formatting utilities for console tables and reports.

All human-readable number formatting should go through these functions.
"""

from typing import Iterable, Optional, Sequence, Union

Number = Union[int, float]


def format_percentage(value: Optional[Number], digits: int = 1) -> str:
    """
    Format a share in [0, 100] as a percentage string.

    Args:
        value: Share in percent
        digits: Decimal places

    Returns:
        Formatted string (e.g., "51.9%")
    """
    if value is None:
        return "-"
    return f"{float(value):.{digits}f}%"


def format_float(value: Optional[Number], digits: int = 4) -> str:
    """Format a float with a fixed number of decimals, '-' for None."""
    if value is None:
        return "-"
    return f"{float(value):.{digits}f}"


def format_scientific(value: Optional[Number]) -> str:
    """Format a small magnitude such as a gradient error."""
    if value is None:
        return "-"
    return f"{float(value):.3e}"


def format_table(
    headers: Sequence[str], rows: Iterable[Sequence[object]], widths: Optional[Sequence[int]] = None
) -> str:
    """
    Render rows as a fixed-width text table.

    Args:
        headers: Column titles
        rows: Row values, already formatted or str()-able
        widths: Column widths; defaults to 16 for every column

    Returns:
        The table as a single string with a dashed rule under the header
    """
    widths = list(widths) if widths else [16] * len(headers)
    lines = ["".join(f"{h:<{w}}" for h, w in zip(headers, widths))]
    lines.append("-" * sum(widths))
    for row in rows:
        lines.append("".join(f"{str(v):<{w}}" for v, w in zip(row, widths)))
    return "\n".join(lines)
