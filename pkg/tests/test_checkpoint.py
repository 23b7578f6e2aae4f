"""Tests for tensor/checkpoint"""
# Imports
from __future__ import annotations
from collections.abc import Callable, Mapping
import pathlib
import struct

import numpy as np
import pytest

from tokenloom.errors import CheckpointError
from tokenloom.model.backbone import BackboneState
from tokenloom.tensor.checkpoint import (
    MAGIC, decode, diff_checkpoints, encode, load_checkpoint, manifest, manifest_path, save_checkpoint,
)



# Protocols
type Decoder = Callable[[bytes], Mapping[str, np.ndarray]]



# Fixtures
@pytest.fixture
def arrays() -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0)
    return {
        'embed.stream0': rng.normal(size=(4, 3)).astype(np.float32),
        'head.scale': np.array(2.5),
        'steps': np.arange(6, dtype=np.int64).reshape(2, 3),
        'empty': np.zeros((0, 5), dtype=np.float32),
    }


@pytest.fixture
def decoder() -> Decoder:
    return decode



# Tests
def test_arrays_survive_encoding_bit_for_bit(arrays: dict[str, np.ndarray], decoder: Decoder) -> None:
    restored = decoder(encode(arrays))
    assert list(restored) == list(arrays)
    for name, array in arrays.items():
        assert restored[name].dtype == array.dtype
        assert restored[name].shape == array.shape
        assert restored[name].tobytes() == array.tobytes()


def test_container_starts_with_magic_version_and_count(arrays: dict[str, np.ndarray]) -> None:
    data = encode(arrays)
    assert data.startswith(MAGIC)
    assert struct.unpack('<II', data[len(MAGIC):len(MAGIC) + 8]) == (1, 4)


@pytest.mark.parametrize('data', [b'', b'meow', MAGIC + struct.pack('<II', 2, 0), MAGIC + struct.pack('<II', 1, 1)])
def test_decoder_rejects_bad_headers_and_missing_records(decoder: Decoder, data: bytes) -> None:
    with pytest.raises(CheckpointError):
        decoder(data)


def test_decoder_rejects_truncated_and_padded_data(arrays: dict[str, np.ndarray], decoder: Decoder) -> None:
    data = encode(arrays)
    with pytest.raises(CheckpointError):
        decoder(data[:-3])
    with pytest.raises(CheckpointError):
        decoder(data + b'\x00')


def test_unsupported_dtypes_cannot_be_encoded() -> None:
    with pytest.raises(CheckpointError):
        encode({'flags': np.zeros(3, dtype=bool)})


def test_manifest_lists_name_dtype_and_shape(arrays: dict[str, np.ndarray]) -> None:
    lines = manifest(arrays).splitlines()
    assert lines[0] == 'embed.stream0\tf4\t4x3'
    assert lines[1] == 'head.scale\tf8\t'
    assert lines[2] == 'steps\ti8\t2x3'


def test_diff_names_changed_and_missing_arrays(arrays: dict[str, np.ndarray]) -> None:
    after = {name: array.copy() for name, array in arrays.items() if name != 'empty'}
    after['steps'][0, 0] = 9
    after['extra'] = np.zeros(1)
    assert diff_checkpoints(arrays, after) == ['empty', 'extra', 'steps']
    assert diff_checkpoints(arrays, arrays) == []


async def test_model_state_survives_a_save_and_load(tmp_path: pathlib.Path, tiny_state: BackboneState) -> None:
    path = tmp_path / 'model.ckpt'
    await save_checkpoint(path, tiny_state.state_arrays())
    restored = await load_checkpoint(path)
    assert diff_checkpoints(tiny_state.state_arrays(), restored) == []
    assert manifest_path(path).read_text() == manifest(restored)
