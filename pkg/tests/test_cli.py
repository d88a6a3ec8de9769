"""End-to-end CLI tests: the full pipeline driven through the entry points."""

import json

import pytest

from similepolish.checkpoint import save_checkpoint
from similepolish.cli import cli
from similepolish.corpus import read_records


@pytest.fixture
def synth_paths(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    vocab = tmp_path / "vocab.json"
    assert cli(["synth", "--n", "64", "--seed", "7", "--out", str(corpus)]) == 0
    assert cli(["vocab", "--data", str(corpus), "--out", str(vocab)]) == 0
    return corpus, vocab


def train_args(corpus, vocab, out, seed=1, steps=20):
    return [
        "train", "--data", str(corpus), "--vocab", str(vocab), "--out", str(out),
        "--seed", str(seed), "--steps", str(steps), "--batch-size", "8",
        "--eval-every", "10", "--lr", "1e-3",
        "--config", str(out.parent / "config.json"),
    ]


@pytest.fixture
def tiny_config_file(tmp_path):
    cfg = {"hidden_size": 16, "encoder_layers": 1, "decoder_layers": 1,
           "attention_heads": 2, "ffn_size": 32, "max_context_len": 32,
           "max_simile_len": 8}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestPipeline:
    def test_synth_vocab_train_polish(self, tmp_path, synth_paths, tiny_config_file):
        corpus, vocab = synth_paths
        ckpt = tmp_path / "model.bin"
        curve = tmp_path / "curve.csv"
        code = cli(train_args(corpus, vocab, ckpt) + ["--curve", str(curve)])
        assert code == 0
        assert ckpt.exists()
        header = curve.read_text().splitlines()[0]
        assert header == "step,total,positioning,generation,dev_total"

        text = read_records(corpus)[0].context
        assert cli(["polish", "--checkpoint", str(ckpt), "--text", text]) == 0
        assert cli(["polish", "--checkpoint", str(ckpt), "--text", text,
                    "--position", "2", "--beam", "3"]) == 0

    def test_train_deterministic_byte_for_byte(self, tmp_path, synth_paths,
                                               tiny_config_file):
        corpus, vocab = synth_paths
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        assert cli(train_args(corpus, vocab, a, seed=1)) == 0
        assert cli(train_args(corpus, vocab, b, seed=1)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_extract_subcommand(self, tmp_path):
        raw = tmp_path / "raw.jsonl"
        raw.write_text(
            json.dumps({"id": "p1", "text": "他像幽灵一样出现那里"}, ensure_ascii=False)
            + "\n" + "平淡的句子没有修辞\n",
            encoding="utf-8",
        )
        out = tmp_path / "extracted.jsonl"
        assert cli(["extract", "--input", str(raw), "--out", str(out)]) == 0
        records = read_records(out)
        assert len(records) == 1
        assert records[0].simile == "像幽灵一样"

    def test_retrieve_bm25(self, tmp_path, synth_paths):
        corpus, _ = synth_paths
        out = tmp_path / "retrieved.jsonl"
        code = cli(["retrieve", "--train-data", str(corpus), "--input", str(corpus),
                    "--out", str(out), "--mode", "bm25"])
        assert code == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == 64
        assert all({"context", "position", "simile", "score"} <= set(r) for r in rows)


class TestPolishCommand:
    def test_overfit_checkpoint_follows_synthetic_rule(self, tmp_path, capsys,
                                                       synthetic_bundle):
        ckpt = tmp_path / "trained.bin"
        save_checkpoint(ckpt, synthetic_bundle.model)
        rec = synthetic_bundle.test_records[0]
        assert cli(["polish", "--checkpoint", str(ckpt), "--text", rec.context]) == 0
        out = capsys.readouterr().out
        assert f"position: {rec.position}" in out
        assert f"simile:   {rec.simile}" in out
        marker_idx = rec.context.index("#")
        assert rec.position == marker_idx + 1


class TestServeCommand:
    def test_checkpoint_required_without_env(self, monkeypatch, capsys):
        monkeypatch.delenv("SIMILEPOLISH_CHECKPOINT", raising=False)
        assert cli(["serve"]) == 2
        assert "SIMILEPOLISH_CHECKPOINT" in capsys.readouterr().err

    def test_env_overrides_feed_service_config(self, tmp_path, monkeypatch):
        import similepolish.cli as cli_mod

        captured = {}

        def fake_serve(config):
            captured["config"] = config

        monkeypatch.setattr("similepolish.service.serve", fake_serve)
        monkeypatch.setenv("SIMILEPOLISH_CHECKPOINT", str(tmp_path / "env.bin"))
        monkeypatch.setenv("SIMILEPOLISH_HOST", "0.0.0.0")
        assert cli(["serve", "--checkpoint", "ignored.bin", "--port", "0"]) == 0
        assert captured["config"].checkpoint_path == str(tmp_path / "env.bin")
        assert captured["config"].host == "0.0.0.0"


class TestEvalCommand:
    def test_gold_reproducing_model_scores_bleu_100(self, tmp_path, synthetic_bundle):
        # the overfit model reproduces every gold simile, so BLEU1 = 100
        ckpt = tmp_path / "trained.bin"
        save_checkpoint(ckpt, synthetic_bundle.model)
        data = tmp_path / "test.jsonl"
        from similepolish.corpus import write_records

        write_records(data, synthetic_bundle.test_records)
        report = tmp_path / "report.json"
        code = cli(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                    "--report", str(report)])
        assert code == 0
        result = json.loads(report.read_text())
        assert result["model"]["bleu1"] == 100.0
        assert result["model"]["positioning_accuracy"] == 1.0


class TestErrors:
    def test_unknown_flag_nonzero(self, capsys):
        assert cli(["synth", "--nope", "3"]) != 0

    def test_unreadable_file_nonzero(self, tmp_path, capsys):
        code = cli(["vocab", "--data", str(tmp_path / "missing.jsonl"),
                    "--out", str(tmp_path / "v.json")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_subcommand_nonzero(self):
        assert cli(["frobnicate"]) != 0
