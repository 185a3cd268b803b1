import json
import struct

import numpy as np
import pytest

from errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from storage import (MAGIC, Checkpoint, RunStore, decode_checkpoint, encode_checkpoint, load_checkpoint,
                     save_checkpoint)


@pytest.fixture
def checkpoint():
    rng = np.random.default_rng(0)
    return Checkpoint(
        params={"emb.entity": rng.normal(size=(4, 3)), "gate.w0": np.array([[1.0]])},
        config={"model": {"variant": "sfgnn", "layers": 1}},
        rng_state={"seed": 3, "name": "root/train", "counter": 12},
        epoch=7,
        best_metric=0.25,
        gate_trace=np.array([[1, 0, 1, 1]], dtype=np.int8),
    )


class TestCheckpointFormat:
    def test_roundtrip_is_exact(self, checkpoint, tmp_path):
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(checkpoint, path)
        again = load_checkpoint(path)
        assert again.params.keys() == checkpoint.params.keys()
        for name, value in checkpoint.params.items():
            np.testing.assert_array_equal(again.params[name], value)
        np.testing.assert_array_equal(again.gate_trace, checkpoint.gate_trace)
        assert (again.epoch, again.best_metric, again.rng_state) == (7, 0.25, checkpoint.rng_state)
        assert again.variant == "sfgnn"
        assert not (tmp_path / "model.ckpt.tmp").exists()

    def test_encoding_is_deterministic_and_starts_with_magic(self, checkpoint):
        blob = encode_checkpoint(checkpoint)
        assert blob == encode_checkpoint(checkpoint)
        assert blob[:4] == MAGIC

    def test_base_checkpoint_has_no_trace(self, checkpoint):
        checkpoint.gate_trace = None
        assert decode_checkpoint(encode_checkpoint(checkpoint)).gate_trace is None

    def test_truncated_payload(self, checkpoint):
        with pytest.raises(CheckpointCorruptError):
            decode_checkpoint(encode_checkpoint(checkpoint)[:-8])

    def test_flipped_payload_byte(self, checkpoint):
        blob = bytearray(encode_checkpoint(checkpoint))
        blob[-1] ^= 0xFF
        with pytest.raises(CheckpointCorruptError, match="checksum"):
            decode_checkpoint(bytes(blob))

    def test_bad_magic_and_header(self, checkpoint):
        with pytest.raises(CheckpointCorruptError):
            decode_checkpoint(b"NOPE" + encode_checkpoint(checkpoint)[4:])
        with pytest.raises(CheckpointCorruptError):
            decode_checkpoint(MAGIC + struct.pack("<I", 1000) + b"{}")

    def test_unknown_version(self, checkpoint):
        blob = encode_checkpoint(checkpoint)
        (length,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + length])
        header["version"] = 2
        raw = json.dumps(header).encode("utf-8")
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(MAGIC + struct.pack("<I", len(raw)) + raw + blob[8 + length:])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "absent.ckpt"))


class TestRunStore:
    def test_record_and_list(self, tmp_path):
        store = RunStore(str(tmp_path / "runs.db")).initialize()
        config = {"data": {"path": "data/kg"}, "model": {"encoder": "compgcn", "variant": "sfgnn", "layers": 2},
                  "train": {"seed": 0}, "output": {"dir": "runs/a"}}
        first = store.record_run("train", config, {"MRR": 0.4, "H@10": 0.7, "best_epoch": 12},
                                 task="link-prediction")
        second = store.record_run("sweep", config, {}, status="failed", error="DivergenceError: boom")
        runs = store.list_runs()
        assert [r["id"] for r in runs] == [second, first]
        assert runs[1]["MRR"] == pytest.approx(0.4)
        run = store.get_run(first)
        assert run["config"] == config
        assert run["metrics"] == {"H@10": 0.7, "MRR": 0.4, "best_epoch": 12.0}
        assert run["task"] == "link-prediction" and run["encoder"] == "compgcn"
        assert store.get_run_statistics() == {"total_runs": 2, "failed_runs": 1}
        assert len(store.list_runs(limit=1)) == 1

    def test_delete(self, tmp_path):
        store = RunStore(str(tmp_path / "runs.db")).initialize()
        run_id = store.record_run("train", {}, {"accuracy": 0.9})
        assert store.delete_run(run_id)
        assert store.get_run(run_id) is None
        assert not store.delete_run(run_id)
