"""Binary container and checkpoint round-trip tests."""

import numpy as np
import pytest

from similepolish.checkpoint import (
    load_checkpoint,
    read_container,
    save_checkpoint,
    write_container,
)
from similepolish.corpus import build_vocab, generate_synthetic
from similepolish.model import LocateGenModel
from similepolish.nn import ModelConfig


def fresh_model(seed=3):
    records = generate_synthetic(24, seed=91)
    vocab = build_vocab(records)
    config = ModelConfig(vocab_size=vocab.size, hidden_size=16, encoder_layers=1,
                         decoder_layers=1, attention_heads=2, ffn_size=32,
                         max_context_len=32, max_simile_len=8)
    return LocateGenModel(config, vocab, seed=seed), records


class TestContainer:
    def test_mixed_dtypes_round_trip(self, tmp_path, rng):
        path = tmp_path / "c.bin"
        arrays = {
            "f32": rng.normal(size=(3, 4)).astype(np.float32),
            "f64": rng.normal(size=(2,)).astype(np.float64),
            "i32": rng.integers(-5, 5, size=(2, 2, 2)).astype(np.int32),
        }
        meta = {"kind": "test", "note": "中文也可以"}
        write_container(path, meta, arrays)
        got_meta, got_arrays = read_container(path)
        assert got_meta == meta
        for name, arr in arrays.items():
            assert got_arrays[name].dtype == arr.dtype
            assert np.array_equal(got_arrays[name], arr)

    def test_truncated_file_rejected(self, tmp_path, rng):
        path = tmp_path / "t.bin"
        write_container(path, {"k": 1}, {"a": rng.normal(size=(4, 4)).astype(np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(ValueError, match="truncated"):
            read_container(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="dtype"):
            write_container(tmp_path / "x.bin", {}, {"a": np.zeros(2, dtype=np.int8)})


class TestCheckpoint:
    def test_bitwise_param_round_trip(self, tmp_path):
        model, _ = fresh_model()
        path = tmp_path / "model.bin"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert set(loaded.params) == set(model.params)
        for name, p in model.params.items():
            assert np.array_equal(p.data, loaded.params[name].data), name
        assert loaded.config == model.config
        assert loaded.vocab.tokens == model.vocab.tokens

    def test_bitwise_forward_after_round_trip(self, tmp_path, rng):
        model, records = fresh_model()
        path = tmp_path / "model.bin"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        for _ in range(10):
            rec = records[int(rng.integers(0, len(records)))]
            enc_a = model.encode_text(rec.context)
            enc_b = loaded.encode_text(rec.context)
            assert np.array_equal(enc_a.hidden.data, enc_b.hidden.data)
            pa = model.pointer_distribution(enc_a).data
            pb = loaded.pointer_distribution(enc_b).data
            assert np.array_equal(pa, pb)

    def test_second_save_identical_bytes(self, tmp_path):
        model, _ = fresh_model()
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        save_checkpoint(a, model)
        save_checkpoint(b, model)
        assert a.read_bytes() == b.read_bytes()

    def test_kind_mismatch_rejected(self, tmp_path):
        model, _ = fresh_model()
        path = tmp_path / "model.bin"
        save_checkpoint(path, model, kind="locate_gen")
        with pytest.raises(ValueError, match="kind"):
            load_checkpoint(path, expected_kind="match_rerank")

    def test_vocab_checksum_guard(self, tmp_path):
        model, _ = fresh_model()
        path = tmp_path / "model.bin"
        save_checkpoint(path, model)
        meta, arrays = read_container(path)
        meta["vocab_tokens"] = meta["vocab_tokens"][:-1] + ["嘘"]
        write_container(path, meta, arrays)
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(path)
