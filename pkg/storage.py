"""
Persistence layer for selfgate
Versioned checkpoint container files and the SQLite index of past runs
"""

import hashlib
import json
import logging
import os
import sqlite3
import struct
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np

from errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError

logger = logging.getLogger(__name__)

MAGIC = b"SGCK"
VERSION = 1
TRACE_ARRAY = "trace.gates"
_LENGTH = struct.Struct("<I")


@dataclass
class Checkpoint:
    """Named float64 parameters plus everything needed to rebuild and score the model"""
    params: Dict[str, np.ndarray]
    config: Dict[str, Any]
    rng_state: Dict[str, Any] = field(default_factory=dict)
    epoch: int = 0
    best_metric: Optional[float] = None
    gate_trace: Optional[np.ndarray] = None

    @property
    def variant(self) -> str:
        return self.config.get("model", {}).get("variant", "sfgnn")


def _arrays(ckpt: Checkpoint):
    for name in sorted(ckpt.params):
        yield name, "param", np.asarray(ckpt.params[name], dtype=np.float64)
    if ckpt.gate_trace is not None:
        yield TRACE_ARRAY, "trace", np.asarray(ckpt.gate_trace, dtype=np.float64)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """MAGIC, uint32 header length, JSON header, little-endian float64 payload in header order"""
    entries, chunks = [], []
    for name, kind, array in _arrays(ckpt):
        if array.ndim != 2:
            array = array.reshape(array.shape[0] if array.ndim else 1, -1)
        entries.append({"name": name, "kind": kind, "shape": list(array.shape)})
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    header = {
        "version": VERSION,
        "arrays": entries,
        "config": ckpt.config,
        "rng": ckpt.rng_state,
        "epoch": int(ckpt.epoch),
        "best_metric": None if ckpt.best_metric is None else float(ckpt.best_metric),
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LENGTH.pack(len(raw_header)) + raw_header + payload


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < len(MAGIC) + _LENGTH.size or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError(f"{source}: not a selfgate checkpoint")
    (header_len,) = _LENGTH.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LENGTH.size
    if start + header_len > len(blob):
        raise CheckpointCorruptError(f"{source}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointCorruptError(f"{source}: unreadable header")

    version = header.get("version")
    if version != VERSION:
        raise CheckpointVersionError(f"{source}: unsupported checkpoint version {version!r} (expected {VERSION})")

    payload = blob[start + header_len:]
    if len(payload) != header.get("payload_bytes") or \
            hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointCorruptError(f"{source}: payload checksum mismatch")

    params, trace, offset = {}, None, 0
    for entry in header["arrays"]:
        rows, cols = entry["shape"]
        size = rows * cols * 8
        array = np.frombuffer(payload, dtype="<f8", count=rows * cols, offset=offset)
        array = array.astype(np.float64).reshape(rows, cols)
        offset += size
        if entry["kind"] == "trace":
            trace = np.rint(array).astype(np.int8)
        else:
            params[entry["name"]] = array

    return Checkpoint(params, header.get("config", {}), header.get("rng", {}),
                      header.get("epoch", 0), header.get("best_metric"), trace)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write atomically: a temporary sibling is renamed over `path`"""
    blob = encode_checkpoint(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    tmp = path + ".tmp"
    try:
        os.makedirs(directory, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}")
    logger.info("Saved checkpoint (%d arrays, epoch %d) to %s", len(ckpt.params), ckpt.epoch, path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    return decode_checkpoint(blob, path)


class RunStore:
    """SQLite index of train and sweep runs with their final metrics"""

    def __init__(self, db_path: str = "selfgate_runs.db"):
        self.db_path = db_path

    def _get_connection(self):
        """New connection per operation"""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def initialize(self) -> "RunStore":
        conn = self._get_connection()
        try:
            self._create_tables(conn)
        finally:
            conn.close()
        logger.debug("Run index ready: %s", self.db_path)
        return self

    def _create_tables(self, conn):
        cursor = conn.cursor()
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT NOT NULL,
                command TEXT NOT NULL,
                dataset TEXT,
                task TEXT,
                encoder TEXT,
                decoder TEXT,
                variant TEXT,
                layers INTEGER,
                seed INTEGER,
                status TEXT,
                error TEXT,
                out_dir TEXT,
                config TEXT,
                created_at DATETIME DEFAULT CURRENT_TIMESTAMP
            )
        """)
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER,
                metric_name TEXT,
                metric_value REAL,
                FOREIGN KEY (run_id) REFERENCES runs (id)
            )
        """)
        conn.commit()

    def record_run(self, command: str, config: Dict[str, Any], metrics: Dict[str, float],
                   status: str = "ok", error: Optional[str] = None, task: Optional[str] = None) -> int:
        """Insert one run and its numeric metrics; returns the run id"""
        model = config.get("model", {})
        conn = self._get_connection()
        try:
            cursor = conn.cursor()
            cursor.execute("""
                INSERT INTO runs (timestamp, command, dataset, task, encoder, decoder, variant,
                                  layers, seed, status, error, out_dir, config)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (
                datetime.now().isoformat(timespec="seconds"),
                command,
                config.get("data", {}).get("path"),
                task or model.get("task"),
                model.get("encoder"),
                model.get("decoder"),
                model.get("variant"),
                model.get("layers"),
                config.get("train", {}).get("seed"),
                status,
                error,
                config.get("output", {}).get("dir"),
                json.dumps(config, sort_keys=True),
            ))
            run_id = cursor.lastrowid
            for name, value in sorted(metrics.items()):
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    cursor.execute(
                        "INSERT INTO metrics (run_id, metric_name, metric_value) VALUES (?, ?, ?)",
                        (run_id, name, float(value)),
                    )
            conn.commit()
        except sqlite3.Error:
            conn.rollback()
            raise
        finally:
            conn.close()
        logger.info("Recorded %s run %d in %s", command, run_id, self.db_path)
        return run_id

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        conn = self._get_connection()
        try:
            row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
            if row is None:
                return None
            run = dict(row)
            run["config"] = json.loads(run["config"]) if run["config"] else {}
            metric_rows = conn.execute(
                "SELECT metric_name, metric_value FROM metrics WHERE run_id = ? ORDER BY metric_name",
                (run_id,),
            ).fetchall()
            run["metrics"] = {r["metric_name"]: r["metric_value"] for r in metric_rows}
            return run
        finally:
            conn.close()

    def list_runs(self, limit: Optional[int] = None) -> List[Dict[str, Any]]:
        """Most recent first, with metrics flattened into each row"""
        query = """
            SELECT id, timestamp, command, dataset, task, encoder, decoder, variant, layers, seed, status
            FROM runs ORDER BY id DESC
        """
        params: tuple = ()
        if limit is not None:
            query += " LIMIT ?"
            params = (int(limit),)
        conn = self._get_connection()
        try:
            runs = [dict(row) for row in conn.execute(query, params).fetchall()]
            for run in runs:
                for r in conn.execute("SELECT metric_name, metric_value FROM metrics WHERE run_id = ?",
                                      (run["id"],)).fetchall():
                    run[r["metric_name"]] = r["metric_value"]
            return runs
        finally:
            conn.close()

    def delete_run(self, run_id: int) -> bool:
        conn = self._get_connection()
        try:
            conn.execute("DELETE FROM metrics WHERE run_id = ?", (run_id,))
            deleted = conn.execute("DELETE FROM runs WHERE id = ?", (run_id,)).rowcount
            conn.commit()
            return bool(deleted)
        finally:
            conn.close()

    def get_run_statistics(self) -> Dict[str, Any]:
        conn = self._get_connection()
        try:
            total = conn.execute("SELECT COUNT(*) AS n FROM runs").fetchone()["n"]
            failed = conn.execute("SELECT COUNT(*) AS n FROM runs WHERE status != 'ok'").fetchone()["n"]
            return {"total_runs": total, "failed_runs": failed}
        finally:
            conn.close()
