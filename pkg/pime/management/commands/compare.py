from __future__ import annotations

from argparse import ArgumentParser

from pime.exports import COMPARISON_HEADER, write_rows
from pime.harness import EvalReport, compare
from pime.management.base import PimeCommand


class Command(PimeCommand):
    help = "Pool evaluation reports by label and write a per-segment comparison table"

    def add_arguments(self: "Command", parser: ArgumentParser) -> None:
        parser.add_argument("--reports", nargs="+", required=True, help="report CSV files")
        parser.add_argument("--out", required=True, help="Comparison CSV to write")

    def run(self: "Command", **options: object) -> None:
        reports = [EvalReport.from_csv(path) for path in options["reports"]]
        table = compare(reports)
        path = write_rows(options["out"], COMPARISON_HEADER, table)
        for row in table:
            self.stdout.write(
                f"{row['label']:>8} seg {row['segment']} y_ref={row['y_ref']:.4g}: "
                f"return {row['episodic_return_mean']:.6g} +- {row['episodic_return_std']:.3g}, "
                f"sse {row['steady_state_error_mean']:.4g}, "
                f"delta return {row['delta_return']:.4g}"
            )
        self.stdout.write(self.style.SUCCESS(f"Compared {len(reports)} reports into {path}"))
