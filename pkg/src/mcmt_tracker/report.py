from typing import Sequence

def format_value(val) -> str:
    if isinstance(val, float):
        return f"{val:.4f}"

    return str(val)

def format_table(rows: Sequence[Sequence], columns: Sequence[str]) -> str:
    """
    Render rows as a fixed-width text table with a header and a rule.
    """
    widths = [len(column) for column in columns]
    formatted = []
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"Row {row} does not have {len(columns)} columns")

        cells = [format_value(value) for value in row]
        widths = [max(width, len(cell)) for width, cell in zip(widths, cells)]
        formatted.append(cells)

    def render(cells):
        return " | ".join(cell.ljust(width) for cell, width in zip(cells, widths)).rstrip()

    lines = [render(columns), "-" * (sum(widths) + 3 * (len(columns) - 1))]
    lines.extend(render(cells) for cells in formatted)

    return "\n".join(lines)

METRIC_COLUMNS = ("Run", "IDF1", "IDP", "IDR", "MOTA", "IDSW", "FP", "FN")

def metric_rows(reports) -> list[tuple]:
    """
    Table rows for (label, MetricReport) pairs, skipping missing reports.
    """
    rows = []
    for label, report in reports:
        if report is None:
            continue

        row = report.as_row()
        rows.append((label, *(row[column] for column in METRIC_COLUMNS[1:])))

    return rows
