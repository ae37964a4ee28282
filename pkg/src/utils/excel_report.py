"""Excel export of experiment tables (one sheet per table)."""

import logging
import os
from typing import Dict

import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

HEADER_FILL = PatternFill(start_color="D9E1F2", end_color="D9E1F2", fill_type="solid")
PASS_FILL = PatternFill(start_color="90EE90", end_color="90EE90", fill_type="solid")
FAIL_FILL = PatternFill(start_color="FFB6C1", end_color="FFB6C1", fill_type="solid")
MAX_COLUMN_WIDTH = 40
SHEET_NAME_LIMIT = 31


class ExcelFormatter:
    """Handles Excel formatting and styling operations."""

    @staticmethod
    def apply_header_formatting(ws):
        """Bold, shaded, centered header row, frozen in place."""
        for cell in ws[1]:
            cell.font = Font(bold=True)
            cell.fill = HEADER_FILL
            cell.alignment = Alignment(horizontal="center")
        ws.freeze_panes = "A2"

    @staticmethod
    def fit_column_widths(ws):
        for column in ws.columns:
            longest = max((len(str(c.value)) for c in column if c.value is not None), default=0)
            letter = get_column_letter(column[0].column)
            ws.column_dimensions[letter].width = min(longest + 2, MAX_COLUMN_WIDTH)

    @staticmethod
    def apply_status_highlighting(ws, status_col: int):
        """Green rows for ok/True statuses, pink for failures."""
        for row in range(2, ws.max_row + 1):
            value = ws.cell(row=row, column=status_col).value
            if value in ("ok", True, "True", "passed"):
                fill = PASS_FILL
            elif value in ("infeasible", "nonfinite", False, "False", "failed"):
                fill = FAIL_FILL
            else:
                continue
            for col in range(1, ws.max_column + 1):
                ws.cell(row=row, column=col).fill = fill


def write_workbook(sheets: Dict[str, pd.DataFrame], path: str, status_column: str = "status") -> str:
    """Write each table to its own sheet and format it."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    names = {}
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, frame in sheets.items():
            sheet = name[:SHEET_NAME_LIMIT]
            names[sheet] = frame
            frame.to_excel(writer, sheet_name=sheet, index=False)

    wb = load_workbook(path)
    for sheet, frame in names.items():
        ws = wb[sheet]
        ExcelFormatter.apply_header_formatting(ws)
        ExcelFormatter.fit_column_widths(ws)
        if status_column in frame.columns:
            ExcelFormatter.apply_status_highlighting(ws, list(frame.columns).index(status_column) + 1)
    wb.save(path)
    logger.info("Wrote %s", path)
    return path
