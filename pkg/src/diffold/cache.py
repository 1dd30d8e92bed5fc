"""Featurized-graph cache: one JSON file per protein id.

A cache hit is logged with the file's timestamp so downstream commands can
prove they reused it instead of recomputing.
"""

from __future__ import annotations

import datetime
import logging
from pathlib import Path

from .backbone import ProteinBackbone
from .features import ResidueGraph, build_graph, graph_from_json, graph_to_json

log = logging.getLogger("diffold")


def cache_path(cache_dir, protein_id: str) -> Path:
    return Path(cache_dir) / f"{protein_id}.graph.json"


def save_graph(graph: ResidueGraph, cache_dir) -> Path:
    path = cache_path(cache_dir, graph.id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(graph_to_json(graph), encoding="utf-8")
    return path


def load_or_build_graph(
    backbone: ProteinBackbone,
    cache_dir,
    k: int = 30,
    n_sphere_points: int = 128,
    write_missing: bool = True,
) -> ResidueGraph:
    path = cache_path(cache_dir, backbone.id)
    if path.exists():
        mtime = datetime.datetime.fromtimestamp(path.stat().st_mtime)
        log.info("cache hit %s (cached at %s)", path, mtime.isoformat(timespec="seconds"))
        return graph_from_json(path.read_text(encoding="utf-8"))
    graph = build_graph(backbone, k=k, n_sphere_points=n_sphere_points)
    if write_missing:
        save_graph(graph, cache_dir)
        log.info("cache miss %s (featurized and stored)", path)
    return graph
