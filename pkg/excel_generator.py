import logging
from fractions import Fraction
from io import BytesIO
from typing import Any, Dict, List, Optional, Union

import pandas as pd

logger = logging.getLogger(__name__)

RUN_COLUMNS = ['instance', 's', 'm', 'solver', 'status', 'lb', 'ub', 'wall_ms', 'seed']
# Written only when some run recorded it
OPTIONAL_COLUMNS = ['best_ms']


def _as_float(value: Union[int, str, Fraction, None]) -> Optional[float]:
    if value is None or value == "":
        return None
    return float(Fraction(value))


def gap_percent(lb: Union[int, str, Fraction, None], ub: Union[int, str, Fraction, None]) -> Optional[float]:
    """Relative gap 100 * (ub - lb) / ub; None when a bound is missing"""
    lb, ub = _as_float(lb), _as_float(ub)
    if lb is None or ub is None:
        return None
    if ub == 0:
        return 0.0
    return round(100.0 * (ub - lb) / ub, 4)


class BenchReportGenerator:
    """Generate the bench workbook: a summary sheet and one row per run"""

    def __init__(self):
        self.workbook = None
        self.worksheet_formats = {}

    def generate_bench_report(self, records: List[Dict[str, Any]]) -> bytes:
        """
        Generate an Excel workbook from bench run records

        Args:
            records: RunRecord dictionaries (keys of RUN_COLUMNS, optionally best_ms)

        Returns:
            Excel file as bytes
        """
        try:
            output = BytesIO()
            runs = self._prepare_runs(records)

            with pd.ExcelWriter(output, engine='xlsxwriter') as writer:
                self.workbook = writer.book
                self._setup_formats()
                self._create_summary_sheet(runs, writer)
                self._create_runs_sheet(runs, writer)

            output.seek(0)
            excel_bytes = output.getvalue()
            logger.info(f"Generated bench workbook with {len(runs)} runs")
            return excel_bytes

        except Exception as e:
            logger.error(f"Error generating bench workbook: {str(e)}")
            raise

    def _setup_formats(self):
        self.worksheet_formats = {
            'header': self.workbook.add_format({
                'bold': True,
                'font_color': 'white',
                'bg_color': '#4472C4',
                'border': 1,
                'align': 'center',
                'valign': 'vcenter',
                'font_name': 'Calibri',
                'font_size': 11
            }),
            'subheader': self.workbook.add_format({
                'bold': True,
                'bg_color': '#D9E2F3',
                'border': 1,
                'align': 'center',
                'font_name': 'Calibri',
                'font_size': 10
            }),
            'data': self.workbook.add_format({
                'border': 1,
                'align': 'left',
                'font_name': 'Calibri',
                'font_size': 10
            }),
            'number': self.workbook.add_format({
                'border': 1,
                'align': 'right',
                'num_format': '0.##',
                'font_name': 'Calibri',
                'font_size': 10
            }),
            'highlight': self.workbook.add_format({
                'bg_color': '#FFE699',
                'border': 1,
                'font_name': 'Calibri',
                'font_size': 10
            })
        }

    def _prepare_runs(self, records: List[Dict[str, Any]]) -> pd.DataFrame:
        columns = RUN_COLUMNS + [column for column in OPTIONAL_COLUMNS
                                 if any(record.get(column) is not None for record in records)]
        rows = []
        for record in records:
            row = {column: record.get(column) for column in columns}
            row['lb'] = _as_float(row['lb'])
            row['ub'] = _as_float(row['ub'])
            row['gap'] = gap_percent(record.get('lb'), record.get('ub'))
            rows.append(row)
        return pd.DataFrame(rows, columns=columns + ['gap'])

    def _create_summary_sheet(self, runs: pd.DataFrame, writer):
        worksheet = writer.book.add_worksheet('Summary')
        worksheet.merge_range('A1:E1', 'Bench Summary', self.worksheet_formats['header'])

        closed = runs[(runs['lb'].notna()) & (runs['lb'] == runs['ub'])]
        gaps = runs['gap'].dropna()
        summary_data = [
            ['Total runs', len(runs)],
            ['Instances', runs['instance'].nunique()],
            ['Closed (lb = ub)', len(closed)],
            ['Mean gap (%)', round(float(gaps.mean()), 4) if not gaps.empty else "N/A"],
        ]
        row = 2
        for i, (label, value) in enumerate(summary_data):
            worksheet.write(row + i, 0, label, self.worksheet_formats['subheader'])
            worksheet.write(row + i, 1, value, self.worksheet_formats['data'])

        row += len(summary_data) + 1
        worksheet.write(row, 0, 'Runs per solver and status', self.worksheet_formats['header'])
        row += 1
        headers = ['Solver', 'Status', 'Runs']
        for i, header in enumerate(headers):
            worksheet.write(row, i, header, self.worksheet_formats['subheader'])
        if not runs.empty:
            counts = runs.groupby(['solver', 'status']).size().reset_index(name='runs')
            for i, count_row in enumerate(counts.itertuples(index=False)):
                for j, value in enumerate(count_row):
                    worksheet.write(row + 1 + i, j, value, self.worksheet_formats['data'])

        worksheet.set_column('A:E', 22)

    def _create_runs_sheet(self, runs: pd.DataFrame, writer):
        runs.to_excel(writer, sheet_name='Runs', index=False)
        worksheet = writer.sheets['Runs']

        for col_num, column in enumerate(runs.columns):
            worksheet.write(0, col_num, column, self.worksheet_formats['subheader'])
            if column in ('lb', 'ub', 'gap'):
                worksheet.set_column(col_num, col_num, 12, self.worksheet_formats['number'])
            elif column == 'instance':
                worksheet.set_column(col_num, col_num, 24, self.worksheet_formats['data'])
            else:
                worksheet.set_column(col_num, col_num, 14, self.worksheet_formats['data'])

        for idx, gap in enumerate(runs['gap']):
            if gap is not None and not pd.isna(gap) and gap > 0:
                worksheet.write(idx + 1, len(runs.columns) - 1, gap, self.worksheet_formats['highlight'])

        worksheet.freeze_panes(1, 1)
