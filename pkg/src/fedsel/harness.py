"""Repeated runs, metrics.csv / summary.json emission and policy comparison tables."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from fedsel.config import ConfigError, ExperimentConfig
from fedsel.protocol import RoundMetrics, run_experiment

CSV_HEADER = (
    "run", "round", "policy", "alpha", "test_accuracy",
    "participation_ratio", "num_selected", "threshold",
)


@dataclass(frozen=True)
class MetricsRow:
    run: int
    round: int
    policy: str
    alpha: float
    test_accuracy: float
    participation_ratio: float
    num_selected: int
    threshold: float

    def fields(self) -> list[str]:
        return [
            str(self.run), str(self.round), self.policy, f"{self.alpha:.6f}",
            f"{self.test_accuracy:.6f}", f"{self.participation_ratio:.6f}",
            str(self.num_selected), f"{self.threshold:.6f}",
        ]

    @classmethod
    def parse(cls, rec: dict[str, str]) -> "MetricsRow":
        return cls(int(rec["run"]), int(rec["round"]), rec["policy"], float(rec["alpha"]),
                   float(rec["test_accuracy"]), float(rec["participation_ratio"]),
                   int(rec["num_selected"]), float(rec["threshold"]))

    def rounded(self) -> "MetricsRow":
        """The row as it reads back from the CSV."""
        return MetricsRow.parse(dict(zip(CSV_HEADER, self.fields())))


def rows_for(run: int, cfg: ExperimentConfig, history: Sequence[RoundMetrics]) -> list[MetricsRow]:
    return [
        MetricsRow(run, m.round, cfg.policy, cfg.alpha, m.test_accuracy,
                   m.participation_ratio, m.num_selected, m.decision.threshold).rounded()
        for m in history
    ]


def run_repeats(cfg: ExperimentConfig) -> list[MetricsRow]:
    rows: list[MetricsRow] = []
    for run in range(cfg.repeats):
        rows.extend(rows_for(run, cfg, run_experiment(cfg, run)))
    return rows


def csv_text(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=lambda r: (r.policy, r.alpha, r.run, r.round)):
        w.writerow(r.fields())
    return buf.getvalue()


def read_csv(path: str | Path) -> list[MetricsRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRow.parse(rec) for rec in reader]


def _sd(xs: list[float]) -> float | None:
    return statistics.stdev(xs) if len(xs) > 1 else None


def summarize(rows: Sequence[MetricsRow]) -> dict:
    """Per-round mean / sample std over runs, final accuracy and total participation.

    Works from the rounded CSV values so the summary can be recomputed from metrics.csv.
    Sample std is null with a single run.
    """
    runs = sorted({r.run for r in rows})
    rounds = sorted({r.round for r in rows})
    by = {(r.run, r.round): r for r in rows}
    per_round = []
    for t in rounds:
        acc = [by[(k, t)].test_accuracy for k in runs if (k, t) in by]
        part = [by[(k, t)].participation_ratio for k in runs if (k, t) in by]
        per_round.append({
            "round": t,
            "test_accuracy_mean": statistics.fmean(acc),
            "test_accuracy_std": _sd(acc),
            "participation_ratio_mean": statistics.fmean(part),
            "participation_ratio_std": _sd(part),
        })
    last = rounds[-1]
    final = [by[(k, last)].test_accuracy for k in runs]
    totals = [sum(r.num_selected for r in rows if r.run == k) for k in runs]
    part_all = [r.participation_ratio for r in rows]
    return {
        "runs": len(runs),
        "rounds": len(rounds),
        "per_round": per_round,
        "final_accuracy": {"mean": statistics.fmean(final), "std": _sd(final), "per_run": final},
        "total_participation": {"mean": statistics.fmean(totals), "per_run": totals},
        "mean_participation_ratio": statistics.fmean(part_all),
    }


def _prepare_out(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_outputs(out_dir: str | Path, rows: Sequence[MetricsRow], summary: dict) -> tuple[Path, Path]:
    out = _prepare_out(out_dir)
    csv_path = out / "metrics.csv"
    json_path = out / "summary.json"
    csv_path.write_text(csv_text(rows))
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def run_and_emit(cfg: ExperimentConfig, out_dir: str | Path) -> tuple[Path, Path]:
    rows = run_repeats(cfg)
    summary = summarize(rows)
    summary["config"] = cfg.to_dict()
    return write_outputs(out_dir, rows, summary)


@dataclass(frozen=True)
class ComparisonRow:
    policy: str
    final_accuracy: float
    final_accuracy_std: float | None
    mean_participation: float
    client_rounds: float


def compare_policies(configs: Sequence[ExperimentConfig]) -> tuple[list[ComparisonRow], list[MetricsRow]]:
    """Run every config on the same data and partitions and tabulate the results."""
    if not configs:
        raise ConfigError("no policies to compare")
    key = configs[0].data_key()
    for c in configs[1:]:
        if c.data_key() != key:
            raise ConfigError(f"policy {c.policy!r} uses a different data spec than {configs[0].policy!r}")
    table, all_rows = [], []
    for cfg in configs:
        rows = run_repeats(cfg)
        s = summarize(rows)
        table.append(ComparisonRow(cfg.policy, s["final_accuracy"]["mean"], s["final_accuracy"]["std"],
                                   s["mean_participation_ratio"], s["total_participation"]["mean"]))
        all_rows.extend(rows)
    return table, all_rows


def comparison_text(table: Sequence[ComparisonRow]) -> str:
    lines = [f"{'policy':<18} {'final_acc':>10} {'std':>9} {'mean_part':>10} {'client_rounds':>14}"]
    for r in table:
        sd = "-" if r.final_accuracy_std is None else f"{r.final_accuracy_std:.4f}"
        lines.append(f"{r.policy:<18} {r.final_accuracy:>10.4f} {sd:>9} "
                     f"{r.mean_participation:>10.4f} {r.client_rounds:>14.1f}")
    return "\n".join(lines) + "\n"


def write_comparison(out_dir: str | Path, table: Sequence[ComparisonRow], rows: Sequence[MetricsRow]) -> Path:
    out = _prepare_out(out_dir)
    (out / "metrics.csv").write_text(csv_text(rows))
    path = out / "comparison.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "final_accuracy", "final_accuracy_std", "mean_participation", "client_rounds"])
    for r in table:
        sd = "" if r.final_accuracy_std is None else f"{r.final_accuracy_std:.6f}"
        w.writerow([r.policy, f"{r.final_accuracy:.6f}", sd,
                    f"{r.mean_participation:.6f}", f"{r.client_rounds:.6f}"])
    path.write_text(buf.getvalue())
    return path
