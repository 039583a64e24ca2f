import pytest

from styleforge import architecture as arch
from styleforge.errors import UnknownLayerError


def footprint_interval(layer_name, index):
    """Oracle: input-pixel interval a unit depends on, by walking the
    layer stack backwards and widening an index interval step by step."""
    upto = []
    for layer in arch.LAYER_SEQUENCE:
        upto.append(layer)
        if layer.name == layer_name:
            break
    lo = hi = index
    for layer in reversed(upto):
        if layer.kind == "conv":
            lo, hi = lo - 1, hi + 1
        elif layer.kind == "pool":
            lo, hi = 2 * lo, 2 * hi + 1
    return lo, hi


class TestLayerSequence:
    def test_layer_count_and_order(self):
        names = arch.LAYER_NAMES
        assert names[0] == "conv1_1"
        assert names[-1] == "relu5_1"
        assert len([n for n in names if n.startswith("conv")]) == 13
        assert len([n for n in names if n.startswith("pool")]) == 4
        assert len(names) == 30

    def test_blocks_interleaved(self):
        names = arch.LAYER_NAMES
        assert names.index("pool1") < names.index("conv2_1")
        assert names.index("relu1_1") == names.index("conv1_1") + 1

    def test_channel_table(self):
        assert arch.CONV_CHANNELS["conv1_1"] == (3, 64)
        assert arch.CONV_CHANNELS["conv2_1"] == (64, 128)
        assert arch.CONV_CHANNELS["conv3_4"] == (256, 256)
        assert arch.CONV_CHANNELS["conv4_1"] == (256, 512)
        assert arch.CONV_CHANNELS["conv5_1"] == (512, 512)

    def test_expected_entry_shapes(self):
        assert arch.EXPECTED_SHAPES["conv1_1.weight"] == (64, 3, 3, 3)
        assert arch.EXPECTED_SHAPES["conv1_1.bias"] == (64,)
        assert arch.EXPECTED_SHAPES["conv5_1.weight"] == (512, 512, 3, 3)
        assert len(arch.EXPECTED_SHAPES) == 26


class TestReceptiveFields:
    def test_known_values_at_style_layers(self):
        rf = arch.RECEPTIVE_FIELDS
        assert (rf["conv1_1"].size, rf["conv1_1"].stride, rf["conv1_1"].offset) == (3, 1, -1)
        assert (rf["conv2_1"].size, rf["conv2_1"].stride, rf["conv2_1"].offset) == (10, 2, -4)
        assert (rf["conv3_1"].size, rf["conv3_1"].stride, rf["conv3_1"].offset) == (24, 4, -10)
        assert (rf["conv4_1"].size, rf["conv4_1"].stride, rf["conv4_1"].offset) == (68, 8, -30)
        assert (rf["conv5_1"].size, rf["conv5_1"].stride, rf["conv5_1"].offset) == (156, 16, -70)

    def test_matches_interval_oracle_everywhere(self):
        for name, rf in arch.RECEPTIVE_FIELDS.items():
            lo0, hi0 = footprint_interval(name, 0)
            lo1, _ = footprint_interval(name, 1)
            assert rf.offset == lo0, name
            assert rf.size == hi0 - lo0 + 1, name
            assert rf.stride == lo1 - lo0, name

    def test_relu_matches_preceding_conv(self):
        assert arch.RECEPTIVE_FIELDS["relu3_2"] == arch.RECEPTIVE_FIELDS["conv3_2"]


class TestSpatialSize:
    def test_halving_at_pools(self):
        assert arch.spatial_size("conv1_1", (96, 96)) == (96, 96)
        assert arch.spatial_size("pool1", (96, 96)) == (48, 48)
        assert arch.spatial_size("conv3_1", (96, 96)) == (24, 24)
        assert arch.spatial_size("conv5_1", (96, 96)) == (6, 6)

    def test_floor_on_odd_sizes(self):
        assert arch.spatial_size("conv5_1", (100, 90)) == (6, 5)

    def test_input_passthrough(self):
        assert arch.spatial_size("input", (31, 17)) == (31, 17)

    def test_unknown_layer(self):
        with pytest.raises(UnknownLayerError):
            arch.spatial_size("conv6_1", (96, 96))


class TestNameHelpers:
    def test_response_layer_maps_conv_to_relu(self):
        assert arch.response_layer("conv4_2") == "relu4_2"
        assert arch.response_layer("relu4_2") == "relu4_2"
        assert arch.response_layer("pool2") == "pool2"
        assert arch.response_layer("input") == "input"

    def test_response_layer_rejects_unknown(self):
        with pytest.raises(UnknownLayerError):
            arch.response_layer("fc6")

    def test_feature_channels(self):
        assert arch.feature_channels("input") == 3
        assert arch.feature_channels("conv1_1") == 64
        assert arch.feature_channels("relu4_2") == 512
        assert arch.feature_channels("pool2") == 128
