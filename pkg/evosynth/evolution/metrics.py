"""Efficiency metrics and run reports.

A run directory holds three report files:

    generations.csv   one row per generation (accuracy, synapses, A-E)
    clusters.csv      live clusters and cluster efficiency, first and last generation
    summary.json      metadata plus every GenerationRecord, the source of truth
                      `evosynth report` regenerates the CSVs from
"""
import csv
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import compress_json
import numpy as np

from evosynth.constants import REPORT_VERSION
from evosynth.evolution.errors import ArchitectureError, DegenerateNetworkError, ReportError
from evosynth.evolution.network import (
    ClusterPartition,
    NetworkArch,
    count_dead_units,
    count_live_clusters,
    count_synapses,
)

GENERATIONS_CSV = "generations.csv"
CLUSTERS_CSV = "clusters.csv"
SUMMARY_JSON = "summary.json"


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    test_accuracy: float
    layer_synapses: Tuple[int, ...]
    total_synapses: int
    live_clusters: Tuple[int, ...]
    architectural_efficiency: float
    cluster_efficiency: Tuple[float, ...]
    overall_cluster_efficiency: float
    seed: int
    expected_synapses: float
    synapses_std: float = 0.0
    dead_units: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("layer_synapses", "live_clusters", "cluster_efficiency", "dead_units"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GenerationRecord":
        return cls(
            generation=int(data["generation"]),
            test_accuracy=float(data["test_accuracy"]),
            layer_synapses=tuple(int(n) for n in data["layer_synapses"]),
            total_synapses=int(data["total_synapses"]),
            live_clusters=tuple(int(n) for n in data["live_clusters"]),
            architectural_efficiency=float(data["architectural_efficiency"]),
            cluster_efficiency=tuple(float(x) for x in data["cluster_efficiency"]),
            overall_cluster_efficiency=float(data["overall_cluster_efficiency"]),
            seed=int(data["seed"]),
            expected_synapses=float(data["expected_synapses"]),
            synapses_std=float(data.get("synapses_std", 0.0)),
            dead_units=tuple(int(n) for n in data.get("dead_units", ())),
        )

    def summary_line(self) -> str:
        return (
            f"gen {self.generation} | acc {self.test_accuracy:.4f}"
            f" | synapses {self.total_synapses}"
            f" ({self.expected_synapses:.1f}±{self.synapses_std:.1f})"
            f" | A-E {self.architectural_efficiency:.2f}X"
            f" | C-E {self.overall_cluster_efficiency:.2f}X"
        )


@dataclass(frozen=True)
class Report:
    metadata: Dict[str, Any]
    layer_names: Tuple[str, ...]
    ancestor_clusters: Tuple[int, ...]
    records: Tuple[GenerationRecord, ...] = field(default_factory=tuple)

    @property
    def first(self) -> GenerationRecord:
        return self.records[0]

    @property
    def last(self) -> GenerationRecord:
        return self.records[-1]


def architectural_efficiency(ancestor_count: int, current_count: int) -> float:
    if current_count <= 0:
        raise DegenerateNetworkError(
            f"network has {current_count} synapses, architectural efficiency is undefined"
        )
    if ancestor_count <= 0:
        raise DegenerateNetworkError(f"ancestor synapse count must be positive, got {ancestor_count}")
    return ancestor_count / current_count


def cluster_efficiency(
    ancestor_clusters: Sequence[int], live_clusters: Sequence[int]
) -> Tuple[List[float], float]:
    """Per-layer ancestor/live cluster ratios, and the overall ratio of the
    total cluster counts."""
    if len(ancestor_clusters) != len(live_clusters):
        raise ArchitectureError(
            f"{len(ancestor_clusters)} ancestor layers vs {len(live_clusters)} live layers"
        )
    for index, live in enumerate(live_clusters):
        if live <= 0:
            raise DegenerateNetworkError(f"layer {index} has no live clusters")
    per_layer = [a / live for a, live in zip(ancestor_clusters, live_clusters)]
    overall = sum(ancestor_clusters) / sum(live_clusters)
    return per_layer, overall


def record_generation(
    net: NetworkArch,
    partition: ClusterPartition,
    test_accuracy: float,
    ancestor_synapses: int,
    ancestor_clusters: Sequence[int],
    seed: int,
    expected_synapses: Optional[float] = None,
    synapses_std: float = 0.0,
) -> GenerationRecord:
    synapses = count_synapses(net)
    live = count_live_clusters(net, partition)
    per_layer, overall = cluster_efficiency(ancestor_clusters, live)
    return GenerationRecord(
        generation=net.generation,
        test_accuracy=float(test_accuracy),
        layer_synapses=tuple(synapses.per_layer),
        total_synapses=synapses.total,
        live_clusters=tuple(live),
        architectural_efficiency=architectural_efficiency(ancestor_synapses, synapses.total),
        cluster_efficiency=tuple(per_layer),
        overall_cluster_efficiency=overall,
        seed=int(seed),
        expected_synapses=float(
            synapses.total if expected_synapses is None else expected_synapses
        ),
        synapses_std=float(synapses_std),
        dead_units=tuple(count_dead_units(net)),
    )


def _check(report: Report):
    if not report.records:
        raise ReportError("report has no generations, generation 1 is required")
    generations = [r.generation for r in report.records]
    if generations[0] != 1 or generations != sorted(generations):
        raise ReportError(f"records must start at generation 1 and be ordered, got {generations}")


def generations_header(layer_names: Sequence[str]) -> List[str]:
    return ["generation", "accuracy", "total_synapses", "architectural_efficiency"] + [
        f"{name}_synapses" for name in layer_names
    ]


def clusters_header(layer_names: Sequence[str]) -> List[str]:
    return (
        ["generation", "accuracy"]
        + [f"{name}_live_clusters" for name in layer_names]
        + [f"{name}_cluster_efficiency" for name in layer_names]
        + ["overall_cluster_efficiency"]
    )


def _write_csv(path: str, header: List[str], rows: List[List[Any]]):
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            # repr keeps floats exact so the CSV re-parses to the same values
            writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    except OSError as e:
        raise ReportError(f"could not write {path}: {e}") from e


def write_report(report: Report, out_dir: str) -> List[str]:
    _check(report)
    os.makedirs(out_dir, exist_ok=True)

    generations_path = os.path.join(out_dir, GENERATIONS_CSV)
    _write_csv(
        generations_path,
        generations_header(report.layer_names),
        [
            [r.generation, r.test_accuracy, r.total_synapses, r.architectural_efficiency]
            + list(r.layer_synapses)
            for r in report.records
        ],
    )

    clusters_path = os.path.join(out_dir, CLUSTERS_CSV)
    rows = [report.first] if len(report.records) == 1 else [report.first, report.last]
    _write_csv(
        clusters_path,
        clusters_header(report.layer_names),
        [
            [r.generation, r.test_accuracy]
            + list(r.live_clusters)
            + list(r.cluster_efficiency)
            + [r.overall_cluster_efficiency]
            for r in rows
        ],
    )

    summary_path = os.path.join(out_dir, SUMMARY_JSON)
    summary = {
        "version": REPORT_VERSION,
        "metadata": report.metadata,
        "layer_names": list(report.layer_names),
        "ancestor_clusters": list(report.ancestor_clusters),
        "records": [r.to_dict() for r in report.records],
    }
    try:
        compress_json.dump(summary, summary_path, json_kwargs=dict(indent=4, sort_keys=True))
    except OSError as e:
        raise ReportError(f"could not write {summary_path}: {e}") from e
    return [generations_path, clusters_path, summary_path]


def read_report(run_dir: str) -> Report:
    path = os.path.join(run_dir, SUMMARY_JSON)
    if not os.path.exists(path):
        raise ReportError(f"no {SUMMARY_JSON} in {run_dir}, is it an evosynth run directory?")
    summary = compress_json.load(path)
    if summary.get("version") != REPORT_VERSION:
        raise ReportError(f"{path} has report version {summary.get('version')}")
    report = Report(
        metadata=summary["metadata"],
        layer_names=tuple(summary["layer_names"]),
        ancestor_clusters=tuple(summary["ancestor_clusters"]),
        records=tuple(GenerationRecord.from_dict(r) for r in summary["records"]),
    )
    _check(report)
    return report


def _read_csv(path: str) -> List[Dict[str, float]]:
    if not os.path.exists(path):
        raise ReportError(f"{path} does not exist")
    with open(path, newline="", encoding="utf-8") as f:
        return [
            {key: float(value) for key, value in row.items()} for row in csv.DictReader(f)
        ]


def read_generations_csv(path: str) -> List[Dict[str, float]]:
    return _read_csv(path)


def read_clusters_csv(path: str) -> List[Dict[str, float]]:
    return _read_csv(path)


def plot_report(report: Report, path: str) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    _check(report)
    generations = np.array([r.generation for r in report.records])
    fig, (ax_eff, ax_acc) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    ax_eff.plot(generations, [r.architectural_efficiency for r in report.records], "o-", label="A-E")
    ax_eff.plot(
        generations, [r.overall_cluster_efficiency for r in report.records], "s--", label="C-E"
    )
    ax_eff.set_yscale("log")
    ax_eff.set_ylabel("efficiency (X)")
    ax_eff.legend()
    ax_acc.plot(generations, [r.test_accuracy for r in report.records], "o-", color="tab:green")
    ax_acc.set_ylabel("test accuracy")
    ax_acc.set_xlabel("generation")
    ax_acc.set_xticks(generations)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path
