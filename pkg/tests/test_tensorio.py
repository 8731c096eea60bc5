"""Activation containers and the ACTV dump format."""

import io
import struct

import numpy as np
import pytest

from driftlens.exceptions import (
    DumpCorruptionError,
    DumpFormatError,
    DumpWriteError,
    UnsupportedVersionError,
    ValidationError,
)
from driftlens.tensorio import (
    MAGIC,
    ActivationSet,
    LayerActivations,
    encode_activation_dump,
    load_activation_set,
    read_activation_dump,
    roundtrip,
    save_activation_set,
    write_activation_dump,
)
from tests.conftest import make_acts


class TestContainers:

    def test_layer_rejects_non_matrix(self):
        with pytest.raises(ValidationError):
            LayerActivations('a', np.zeros(5))

    def test_layer_rejects_empty(self):
        with pytest.raises(ValidationError):
            LayerActivations('a', np.zeros((0, 3)))

    def test_layer_rejects_non_finite(self):
        data = np.ones((3, 2))
        data[1, 1] = np.nan
        with pytest.raises(ValidationError):
            LayerActivations('a', data)

    def test_layer_is_immutable_copy(self):
        data = np.ones((3, 2))
        layer = LayerActivations('a', data)
        data[0, 0] = 5.0
        assert layer.data[0, 0] == 1.0
        with pytest.raises(ValueError):
            layer.data[0, 0] = 2.0

    def test_set_rejects_mismatched_sample_counts(self):
        with pytest.raises(ValidationError):
            ActivationSet('m', 'd', (LayerActivations('a', np.ones((3, 2))), LayerActivations('b', np.ones((4, 2)))))

    def test_set_rejects_duplicate_names(self):
        with pytest.raises(ValidationError):
            ActivationSet('m', 'd', (LayerActivations('a', np.ones((3, 2))), LayerActivations('a', np.ones((3, 2)))))

    def test_set_rejects_no_layers(self):
        with pytest.raises(ValidationError):
            ActivationSet('m', 'd', ())

    def test_truncated(self, rng):
        acts = make_acts(rng, n=10)
        short = acts.truncated(4)
        assert short.n_samples == 4
        np.testing.assert_array_equal(short[1].data, acts[1].data[:4])


class TestDumpRoundTrip:

    def test_random_sets_survive_round_trip(self):
        """1,000 random sets with varied shapes and identifiers"""
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            layers = int(rng.integers(1, 5))
            n = int(rng.integers(1, 12))
            widths = [int(w) for w in rng.integers(1, 9, size=layers)]
            acts = ActivationSet(
                f"model-{trial}-µ", f"dataset {trial}",
                tuple(LayerActivations(f"l{i}", rng.standard_normal((n, w)) * 10 ** rng.uniform(-3, 3))
                      for i, w in enumerate(widths)),
            )
            assert roundtrip(acts).equals(acts), f"trial {trial}"

    def test_encoding_is_deterministic(self, rng):
        acts = make_acts(rng)
        assert encode_activation_dump(acts) == encode_activation_dump(acts)

    def test_write_reports_byte_count(self, rng):
        acts = make_acts(rng, n=6, widths=(2, 3))
        sink = io.BytesIO()
        written = write_activation_dump(acts, sink)
        assert written == len(sink.getvalue())
        assert sink.getvalue().startswith(MAGIC)

    def test_file_round_trip(self, rng, tmp_path):
        acts = make_acts(rng)
        path = tmp_path / 'acts.actv'
        save_activation_set(acts, path)
        assert load_activation_set(path).equals(acts)
        assert not [p for p in tmp_path.iterdir() if p.name.startswith('.tmp_')]


class TestDumpErrors:

    def test_bad_magic(self, rng):
        payload = encode_activation_dump(make_acts(rng))
        with pytest.raises(DumpFormatError):
            read_activation_dump(b'NOPE' + payload[4:])

    def test_unsupported_version(self, rng):
        payload = encode_activation_dump(make_acts(rng))
        with pytest.raises(UnsupportedVersionError):
            read_activation_dump(payload[:4] + struct.pack('<I', 2) + payload[8:])

    def test_truncated_payload_names_layer(self, rng):
        payload = encode_activation_dump(make_acts(rng, n=8, widths=(3, 3)))
        with pytest.raises(DumpCorruptionError) as info:
            read_activation_dump(payload[:-5])
        assert info.value.layer_index == 1

    def test_truncated_header(self):
        with pytest.raises(DumpCorruptionError) as info:
            read_activation_dump(MAGIC + b'\x01\x00')
        assert info.value.layer_index is None

    def test_nan_payload(self):
        acts = ActivationSet('m', 'd', (LayerActivations('a', np.ones((1, 1))),))
        payload = encode_activation_dump(acts)
        with pytest.raises(ValidationError):
            read_activation_dump(payload[:-4] + struct.pack('<f', float('nan')))

    def test_failing_sink(self, rng):
        class BrokenSink:
            def __init__(self):
                self.calls = 0

            def write(self, data):
                self.calls += 1
                if self.calls > 1:
                    raise OSError('disk full')
                return 10

        with pytest.raises(DumpWriteError) as info:
            write_activation_dump(make_acts(rng), BrokenSink())
        assert info.value.bytes_written == 10
