"""Tests for cli/commands and cli/__main__"""
# Imports
from __future__ import annotations
import csv
import json
import pathlib

import pytest

from tokenloom.cli.__main__ import main
from tokenloom.common import log_config, logging_config
from tokenloom.training.grpo import GRPO_HEADER
from tokenloom.training.stages import METRICS_HEADER


# Consts
TINY_CONFIG = """\
# a model small enough for tests
n_text = 16
n_reason_per_book = 8
n_recon_per_book = 8
d_model = 16
n_heads = 2
n_understand = 1
n_crossmodal = 1
n_generate = 1
n_local = 1
max_context = 64
steps = 2
warmup = 1
batch_size = 2
fit_epochs = 1
max_response = 4
"""



# Fixtures
@pytest.fixture
def workdir(tmp_path: pathlib.Path, monkeypatch: pytest.MonkeyPatch) -> pathlib.Path:
    monkeypatch.chdir(tmp_path)
    (tmp_path / 'tiny.cfg').write_text(TINY_CONFIG)
    return tmp_path


@pytest.fixture
def corpus(workdir: pathlib.Path) -> pathlib.Path:
    path = workdir / 'synth.jsonl'
    assert main(['--config', 'tiny.cfg', 'synth-corpus', '--n', '4', '--alphabet', '4', '--contexts', '2',
                 '--out', str(path)]) == 0
    return path


@pytest.fixture
def checkpoint(workdir: pathlib.Path, corpus: pathlib.Path) -> pathlib.Path:
    path = workdir / 'stage2.ckpt'
    assert main(['--config', 'tiny.cfg', 'train', '--stage', '2', '--corpus', str(corpus),
                 '--checkpoint-out', str(path), '--metrics', 'metrics.csv']) == 0
    return path



# Tests
def test_logging_config_adds_a_file_handler_without_touching_the_shared_dict(tmp_path: pathlib.Path) -> None:
    config = logging_config(tmp_path / 'run.log', console_level='WARNING')
    assert config['handlers']['logfile']['filename'] == str(tmp_path / 'run.log')
    assert config['loggers']['tokenloom']['handlers'] == ['console', 'logfile']
    assert config['handlers']['console']['level'] == 'WARNING'
    assert 'logfile' not in log_config['handlers']
    assert logging_config()["loggers"]["tokenloom"]["handlers"] == ["console"]


def test_synthetic_corpus_has_one_line_per_record(corpus: pathlib.Path) -> None:
    assert len(corpus.read_text().splitlines()) == 4


def test_entropy_report_is_written_as_json(workdir: pathlib.Path, corpus: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'eval', '--mode', 'entropy', '--corpus', str(corpus),
                 '--report', 'entropy.json']) == 0
    report = json.loads((workdir / 'entropy.json').read_text())
    assert set(report) == {'h_s_given_x', 'h_s_given_xr', 'mi_sr_given_x', 'gap'}
    assert report['gap'] == pytest.approx(report['mi_sr_given_x'], abs=1e-9)


def test_training_writes_a_checkpoint_manifest_and_metrics(workdir: pathlib.Path,
                                                           checkpoint: pathlib.Path) -> None:
    assert checkpoint.exists()
    assert (workdir / 'stage2.ckpt.manifest').exists()
    rows = list(csv.reader((workdir / 'metrics.csv').open()))
    assert tuple(rows[0]) == METRICS_HEADER
    assert len(rows) == 3
    assert (workdir / 'tokenloom.log').exists()


def test_perplexity_report_reads_the_trained_checkpoint(workdir: pathlib.Path, corpus: pathlib.Path,
                                                        checkpoint: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'eval', '--mode', 'ppl', '--corpus', str(corpus),
                 '--checkpoint', str(checkpoint), '--report', 'ppl.json']) == 0
    report = json.loads((workdir / 'ppl.json').read_text())
    assert len(report['book_ppl']) == 8
    assert report['n_records'] == 4


def test_accuracy_report_is_printed_without_a_report_path(corpus: pathlib.Path, checkpoint: pathlib.Path,
                                                          capsys: pytest.CaptureFixture[str]) -> None:
    capsys.readouterr()
    assert main(['--config', 'tiny.cfg', 'eval', '--mode', 'acc', '--corpus', str(corpus),
                 '--checkpoint', str(checkpoint), '--condition-mode', 'without-reasoning']) == 0
    assert len(json.loads(capsys.readouterr().out)['accuracy']) == 8


def test_checkpoints_can_be_inspected_and_diffed(checkpoint: pathlib.Path,
                                                 capsys: pytest.CaptureFixture[str]) -> None:
    capsys.readouterr()
    assert main(['checkpoint', 'inspect', str(checkpoint)]) == 0
    assert 'head.text.weight\tf4\t16x' in capsys.readouterr().out
    assert main(['checkpoint', 'diff', str(checkpoint), str(checkpoint)]) == 0
    assert capsys.readouterr().out == ''


def test_tokenizing_synthetic_features_writes_records_and_codebooks(workdir: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'tokenize-synth', '--n', '2', '--duration-s', '1.0',
                 '--out', 'tokens.jsonl', '--codec-out', 'codec.ckpt']) == 0
    records = [json.loads(line) for line in (workdir / 'tokens.jsonl').read_text().splitlines()]
    assert [[item['kind'] for item in r['items']] for r in records] == [['text', 'reason', 'recon']] * 2
    assert (workdir / 'codec.ckpt').exists()


def test_forging_writes_sentences_of_the_chosen_strategy(workdir: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'forge', '--strategy', '2', '--ctx', '200', '--n', '2',
                 '--out', 'forged.jsonl']) == 0
    records = [json.loads(line) for line in (workdir / 'forged.jsonl').read_text().splitlines()]
    assert [r['meta']['strategy'] for r in records] == [2, 2]


def test_policy_optimization_writes_one_row_per_group(workdir: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'grpo-train', '--groups', '2', '--g', '2',
                 '--metrics', 'grpo.csv']) == 0
    rows = list(csv.reader((workdir / 'grpo.csv').open()))
    assert tuple(rows[0]) == GRPO_HEADER
    assert len(rows) == 3


def test_corrupt_checkpoints_fail_with_exit_code_one(workdir: pathlib.Path, corpus: pathlib.Path) -> None:
    (workdir / 'bad.ckpt').write_bytes(b'not a checkpoint')
    assert main(['--config', 'tiny.cfg', 'eval', '--mode', 'ppl', '--corpus', str(corpus),
                 '--checkpoint', 'bad.ckpt']) == 1


def test_missing_inputs_and_bad_arguments_fail_with_exit_code_one(workdir: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'eval', '--mode', 'entropy', '--corpus', 'missing.jsonl']) == 1
    assert main(['checkpoint', 'diff', 'only-one.ckpt']) == 1


def test_unknown_configuration_keys_fail_with_exit_code_one(workdir: pathlib.Path) -> None:
    (workdir / 'bad.cfg').write_text('n_txt = 4\n')
    assert main(['--config', 'bad.cfg', 'synth-corpus', '--out', 'x.jsonl']) == 1


def test_config_file_is_accepted_after_the_subcommand(workdir: pathlib.Path, corpus: pathlib.Path,
                                                      capsys: pytest.CaptureFixture[str]) -> None:
    assert main(['train', '--stage', '2', '--corpus', str(corpus), '--checkpoint-out', 'after.ckpt',
                 '--config', 'tiny.cfg']) == 0
    capsys.readouterr()
    assert main(['checkpoint', 'inspect', 'after.ckpt']) == 0
    assert 'head.text.weight\tf4\t16x' in capsys.readouterr().out


def test_config_file_after_the_subcommand_wins_over_the_one_before(workdir: pathlib.Path) -> None:
    (workdir / 'bad.cfg').write_text('n_txt = 4\n')
    assert main(['--config', 'bad.cfg', 'synth-corpus', '--n', '2', '--out', 'x.jsonl', '--config', 'tiny.cfg']) == 0
    assert main(['--config', 'tiny.cfg', 'synth-corpus', '--n', '2', '--out', 'x.jsonl', '--config', 'bad.cfg']) == 1


def test_understanding_layout_puts_the_context_text_after_the_audio(workdir: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'synth-corpus', '--n', '2', '--alphabet', '4', '--layout', 'understanding',
                 '--out', 'understand.jsonl']) == 0
    records = [json.loads(line) for line in (workdir / 'understand.jsonl').read_text().splitlines()]
    assert [[item['kind'] for item in r['items']] for r in records] == [['reason', 'recon', 'text']] * 2


def test_stage_one_trains_on_understanding_records_only(workdir: pathlib.Path, corpus: pathlib.Path) -> None:
    assert main(['--config', 'tiny.cfg', 'train', '--stage', '1', '--corpus', str(corpus),
                 '--checkpoint-out', 'stage1.ckpt']) == 1
    assert main(['--config', 'tiny.cfg', 'synth-corpus', '--n', '4', '--alphabet', '4', '--layout', 'understanding',
                 '--out', 'understand.jsonl']) == 0
    assert main(['--config', 'tiny.cfg', 'train', '--stage', '1', '--corpus', 'understand.jsonl',
                 '--checkpoint-out', 'stage1.ckpt']) == 0


def test_flow_toy_report_follows_the_flow_configuration(workdir: pathlib.Path) -> None:
    (workdir / 'flow.cfg').write_text('latent_dim = 1\nflow_hidden = 8\nflow_train_steps = 5\nflow_batch = 16\n')
    assert main(['flow-toy', '--config', 'flow.cfg', '--seed', '3', '--report', 'flow.json']) == 0
    report = json.loads((workdir / 'flow.json').read_text())
    assert set(report) == {'initial_loss', 'final_loss', 'hit_rate', 'steps'}
    assert report['steps'] == 5
    assert 0.0 <= report['hit_rate'] <= 1.0
