"""
Dataset ingestion for selfgate
Parses knowledge-graph triple files and node-classification TSV files, and writes both formats
"""

import csv
import json
import logging
import os
import re
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import DatasetError
from graph_builder import SPLITS, GraphBuilder, HomogeneousGraph, KnowledgeGraph

logger = logging.getLogger(__name__)

KG_FILES = {name: f"{name}.txt" for name in SPLITS}
NODE_FILES = {"nodes": "nodes.tsv", "edges": "edges.tsv", "splits": "splits.tsv"}
META_FILE = "meta.json"


class DataIngester:
    """Reads dataset directories into validated graph objects"""

    def __init__(self, builder: Optional[GraphBuilder] = None):
        self.builder = builder or GraphBuilder()

    # Knowledge graphs

    def load_kg(self, directory: str) -> KnowledgeGraph:
        """Load train/valid/test triple files; vocabularies are the union of the splits"""
        if not os.path.isdir(directory):
            raise DatasetError("dataset directory not found", path=directory)

        frames = {}
        for name, filename in KG_FILES.items():
            path = os.path.join(directory, filename)
            if not os.path.exists(path):
                raise DatasetError("missing split file", path=path)
            frames[name] = self._read_tsv(path, ["head", "relation", "tail"])
            logger.info("Loaded %d %s triples from %s", len(frames[name]), name, filename)

        # First-appearance order over train, valid, test keeps ids stable across runs
        entity_ids: Dict[str, int] = {}
        relation_ids: Dict[str, int] = {}
        for name in SPLITS:
            frame = frames[name]
            for head, tail in zip(frame["head"], frame["tail"]):
                entity_ids.setdefault(head, len(entity_ids))
                entity_ids.setdefault(tail, len(entity_ids))
            for relation in frame["relation"]:
                relation_ids.setdefault(relation, len(relation_ids))

        splits = {}
        for name in SPLITS:
            frame = frames[name]
            splits[name] = np.stack([
                frame["head"].map(entity_ids).to_numpy(dtype=np.int64),
                frame["relation"].map(relation_ids).to_numpy(dtype=np.int64),
                frame["tail"].map(entity_ids).to_numpy(dtype=np.int64),
            ], axis=1) if len(frame) else np.zeros((0, 3), dtype=np.int64)

        return self.builder.build_kg(list(entity_ids), list(relation_ids), splits)

    # Homogeneous graphs

    def load_homogeneous(self, nodes_path: str, edges_path: str,
                         splits_path: Optional[str] = None,
                         num_classes: Optional[int] = None) -> HomogeneousGraph:
        """Load nodes.tsv / edges.tsv / splits.tsv into a node-classification graph"""
        if splits_path is None:
            splits_path = os.path.join(os.path.dirname(nodes_path), NODE_FILES["splits"])
        if num_classes is None:
            meta = read_meta(os.path.dirname(nodes_path))
            num_classes = meta.get("params", {}).get("classes")

        nodes = self._read_tsv(nodes_path, ["id", "label", "features"])
        ids = self._int_column(nodes, "id", nodes_path)
        labels = self._int_column(nodes, "label", nodes_path)
        n = len(nodes)
        if n == 0:
            raise DatasetError("no nodes", path=nodes_path)
        if sorted(ids.tolist()) != list(range(n)):
            raise DatasetError("node ids must be exactly 0..n-1", path=nodes_path)

        rows = []
        for line_no, text in enumerate(nodes["features"], start=1):
            try:
                rows.append([float(x) for x in text.split(",")])
            except ValueError:
                raise DatasetError("unparseable feature vector", path=nodes_path, line=line_no)
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise DatasetError("row arity mismatch in feature vectors", path=nodes_path)

        order = np.argsort(ids)
        features = np.asarray(rows, dtype=np.float64)[order]
        labels = labels[order]
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        for line_no, label in enumerate(self._int_column(nodes, "label", nodes_path), start=1):
            if label < 0 or label >= num_classes:
                raise DatasetError("label out of range", path=nodes_path, line=line_no)

        edges_frame = self._read_tsv(edges_path, ["src", "dst"])
        edges = np.stack([
            self._int_column(edges_frame, "src", edges_path),
            self._int_column(edges_frame, "dst", edges_path),
        ], axis=1) if len(edges_frame) else np.zeros((0, 2), dtype=np.int64)
        for line_no, (u, v) in enumerate(edges.tolist(), start=1):
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"edge endpoint out of range (num_nodes={n})", path=edges_path, line=line_no)

        split_frame = self._read_tsv(splits_path, ["id", "split"])
        split_ids = self._int_column(split_frame, "id", splits_path)
        splits = {}
        for name in SPLITS:
            splits[name] = split_ids[(split_frame["split"] == name).to_numpy()]
        unknown = set(split_frame["split"]) - set(SPLITS)
        if unknown:
            raise DatasetError(f"unknown split names {sorted(unknown)}", path=splits_path)

        graph = self.builder.build_homogeneous(features, labels, int(num_classes), edges, splits)
        logger.info("Loaded homogeneous graph: %d nodes, %d edges, %d classes",
                    graph.num_nodes, graph.num_edges, graph.num_classes)
        return graph

    # Parsing helpers

    def _read_tsv(self, path: str, columns: List[str]) -> pd.DataFrame:
        """Read a headerless TSV of strings, reporting malformed lines with their number"""
        try:
            frame = pd.read_csv(
                path, sep="\t", header=None, dtype=str,
                keep_default_na=False, skip_blank_lines=False,
                quoting=csv.QUOTE_NONE, encoding="utf-8",
            )
        except FileNotFoundError:
            raise DatasetError("file not found", path=path)
        except pd.errors.EmptyDataError:
            return pd.DataFrame({c: pd.Series(dtype=str) for c in columns})
        except pd.errors.ParserError as exc:
            match = re.search(r"line (\d+)", str(exc))
            line = int(match.group(1)) if match else None
            raise DatasetError(f"malformed line: expected {len(columns)} fields", path=path, line=line)

        width = len(columns)
        if frame.shape[1] < width:
            raise DatasetError(f"malformed line: expected {width} fields", path=path, line=1)
        if frame.shape[1] > width:
            extra = frame.iloc[:, width:]
            present = (extra.notna() & (extra != "")).any(axis=1).to_numpy()
            line = int(np.flatnonzero(present)[0]) + 1 if present.any() else 1
            raise DatasetError(f"malformed line: expected {width} fields", path=path, line=line)
        frame.columns = columns

        missing = frame.isna() | (frame == "")
        if missing.to_numpy().any():
            line = int(np.flatnonzero(missing.any(axis=1).to_numpy())[0]) + 1
            raise DatasetError(f"malformed line: expected {len(columns)} fields", path=path, line=line)
        return frame

    def _int_column(self, frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna().to_numpy()
        if bad.any():
            raise DatasetError(f"non-integer {column}", path=path, line=int(np.flatnonzero(bad)[0]) + 1)
        return values.to_numpy(dtype=np.int64)


def load_kg(directory: str) -> KnowledgeGraph:
    return DataIngester().load_kg(directory)


def load_homogeneous(nodes_path: str, edges_path: str, splits_path: Optional[str] = None,
                     num_classes: Optional[int] = None) -> HomogeneousGraph:
    return DataIngester().load_homogeneous(nodes_path, edges_path, splits_path, num_classes)


def dataset_kind(path: str) -> str:
    """'kg' for a triple directory, 'nc' for a nodes/edges directory"""
    if os.path.exists(os.path.join(path, KG_FILES["train"])):
        return "kg"
    if os.path.exists(os.path.join(path, NODE_FILES["nodes"])):
        return "nc"
    raise DatasetError("not a dataset directory (no train.txt or nodes.tsv)", path=path)


def load_dataset(path: str):
    """Load whichever dataset format lives in `path`"""
    if dataset_kind(path) == "kg":
        return load_kg(path)
    return load_homogeneous(os.path.join(path, NODE_FILES["nodes"]),
                            os.path.join(path, NODE_FILES["edges"]),
                            os.path.join(path, NODE_FILES["splits"]))


def read_meta(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, META_FILE)
    if not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# Writers

def _write_frame(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n",
                 quoting=csv.QUOTE_NONE, encoding="utf-8")


def write_meta(out_dir: str, meta: Dict[str, Any]) -> None:
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def write_kg(kg: KnowledgeGraph, out_dir: str, meta: Dict[str, Any]) -> None:
    """Write train/valid/test.txt with entity and relation names plus meta.json"""
    os.makedirs(out_dir, exist_ok=True)
    entities = np.asarray(kg.entities, dtype=object)
    relations = np.asarray(kg.relations, dtype=object)
    for name, filename in KG_FILES.items():
        triples = kg.split(name)
        frame = pd.DataFrame({
            "head": entities[triples[:, 0]],
            "relation": relations[triples[:, 1]],
            "tail": entities[triples[:, 2]],
        })
        _write_frame(frame, os.path.join(out_dir, filename))
    write_meta(out_dir, meta)
    logger.info("Wrote KG with %d train triples to %s", kg.train.shape[0], out_dir)


def write_homogeneous(graph: HomogeneousGraph, out_dir: str, meta: Dict[str, Any]) -> None:
    """Write nodes.tsv / edges.tsv / splits.tsv plus meta.json"""
    os.makedirs(out_dir, exist_ok=True)
    features = [",".join(repr(x) for x in row) for row in graph.features.tolist()]
    _write_frame(pd.DataFrame({
        "id": np.arange(graph.num_nodes),
        "label": graph.labels,
        "features": features,
    }), os.path.join(out_dir, NODE_FILES["nodes"]))
    _write_frame(pd.DataFrame(graph.edges, columns=["src", "dst"]),
                 os.path.join(out_dir, NODE_FILES["edges"]))

    split_rows: List[Tuple[int, str]] = []
    for name in SPLITS:
        split_rows.extend((int(i), name) for i in graph.splits[name])
    split_rows.sort()
    _write_frame(pd.DataFrame(split_rows, columns=["id", "split"]),
                 os.path.join(out_dir, NODE_FILES["splits"]))
    write_meta(out_dir, meta)
    logger.info("Wrote homogeneous graph with %d nodes to %s", graph.num_nodes, out_dir)
