#pragma once

// Intermediate representation of bundle-composed DNNs: a linear chain made of
// literal head layers, n_reps repetitions of a bundle template (each with its
// own channel multiplier and optional trailing 2x2 max-pool), literal tail
// layers, and a back-end marker with optional back-end layers.

#include "codesign/rational.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace codesign {

using Count = std::int64_t;
using Bits = int;

struct TensorShape {
    Count channels = 1;
    Count height = 1;
    Count width = 1;

    Count elements() const noexcept { return channels * height * width; }
    friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

enum class LayerKind { DwConv3, PwConv1, ConvKxK, MaxPool2x2, Dense, BackendMarker };

const char* to_string(LayerKind kind) noexcept;
std::optional<LayerKind> layer_kind_from_string(const std::string& name) noexcept;

struct Layer {
    LayerKind kind = LayerKind::PwConv1;
    /// Zero means "derived from the input": required for DwConv3, MaxPool2x2
    /// and the marker, which all preserve channels.
    Count out_channels = 0;
    /// Spatial kernel for ConvKxK; implied 3 for DwConv3 and 1 for PwConv1.
    int kernel = 1;
    int stride = 1;
    /// Optional declared input channel count; checked against the producer.
    Count in_channels = 0;

    static Layer dw3() { return {LayerKind::DwConv3, 0, 3, 1, 0}; }
    static Layer pw1(Count out) { return {LayerKind::PwConv1, out, 1, 1, 0}; }
    static Layer conv(int k, Count out) { return {LayerKind::ConvKxK, out, k, 1, 0}; }
    static Layer maxpool() { return {LayerKind::MaxPool2x2, 0, 2, 2, 0}; }
    static Layer dense(Count out) { return {LayerKind::Dense, out, 1, 1, 0}; }
    static Layer marker() { return {LayerKind::BackendMarker, 0, 1, 1, 0}; }

    /// True for layers that carry weights and multiply-accumulates.
    bool is_compute() const noexcept {
        return kind != LayerKind::MaxPool2x2 && kind != LayerKind::BackendMarker;
    }
    int effective_kernel() const noexcept;

    friend bool operator==(const Layer&, const Layer&) = default;
};

struct Bundle {
    std::string name;
    std::vector<Layer> layers;

    friend bool operator==(const Bundle&, const Bundle&) = default;
};

/// Canonical name derived from the layer sequence, e.g. "dw3-pw1x48-pool".
std::string bundle_signature(const Bundle& bundle);
/// Throws ConfigError on an empty bundle, a pooling-only bundle or a bad kernel.
void validate_bundle(const Bundle& bundle);

struct NetworkSpec {
    TensorShape input;
    std::vector<Layer> head;
    Bundle bundle;
    int n_reps = 1;
    std::vector<Rational> channel_mults;
    std::vector<bool> pool_after;
    std::vector<Layer> tail;
    /// Layers behind the back-end marker. Empty means a zero-cost marker.
    std::vector<Layer> backend;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Where a layer of the flattened chain came from.
enum class LayerRole { Head, Bundle, Pool, Tail, Marker, Backend };

struct ShapedLayer {
    Layer layer;  // resolved: out_channels always set
    TensorShape in;
    TensorShape out;
    LayerRole role = LayerRole::Bundle;
    /// Bundle repetition this layer executes in. Head joins repetition 0, and
    /// tail/back-end layers join the last repetition.
    int rep = 0;
};

/// Channel count of a bundle layer in a repetition scaled by `mult`: the
/// template count when mult == 1, else to the nearest multiple of 8 (min 8).
Count scale_channels(Count channels, const Rational& mult);

/// Flattened chain with shapes. Throws ShapeError / ChannelMismatch.
std::vector<ShapedLayer> infer_shapes(const NetworkSpec& net);

/// Structural checks plus shape inference. Throws on any violation.
void validate(const NetworkSpec& net);

struct LayerCounts {
    std::vector<Count> per_layer;  // aligned with infer_shapes()
    Count total = 0;
};

Count layer_params(const ShapedLayer& sl);
Count layer_macs(const ShapedLayer& sl);

/// Weight counts; biases and normalization parameters are not counted.
LayerCounts param_count(const NetworkSpec& net);
LayerCounts macs(const NetworkSpec& net);

// ---------------------------------------------------------------------------
// Quantization

/// One entry of a group's layer list: a flat layer index (as produced by
/// infer_shapes) or a role selector.
enum class GroupSelector { First, Last, Rest, All };
using LayerSelector = std::variant<int, GroupSelector>;

struct WeightGroup {
    std::string id;
    std::vector<LayerSelector> layers;
    Bits bits = 16;

    friend bool operator==(const WeightGroup&, const WeightGroup&) = default;
};

struct QuantScheme {
    Bits fm_bits = 8;
    std::vector<WeightGroup> groups;
    Bits baseline_bits = 32;

    /// Single group covering every weight layer.
    static QuantScheme uniform(Bits weight_bits, Bits fm_bits, Bits baseline = 32);

    friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

void validate(const QuantScheme& scheme);

/// For every entry of `chain`, the index of its weight group, or -1 for
/// weightless layers. Throws UnmappedLayer when a weight layer matches no
/// group and ConfigError when it matches several.
std::vector<int> resolve_groups(const std::vector<ShapedLayer>& chain, const QuantScheme& scheme);

struct ParamBytes {
    Count total = 0;
    std::vector<Count> per_group;
    std::vector<Count> per_layer;
};

/// Bytes of weights, each layer rounded up to whole bytes.
ParamBytes param_bytes(const NetworkSpec& net, const QuantScheme& scheme);
/// Same accounting with every weight at `bits`.
Count param_bytes_at(const NetworkSpec& net, Bits bits);

struct FmBytes {
    Count peak = 0;
    Count total = 0;
};

/// Feature-map bytes over layer outputs (the marker produces none).
FmBytes fm_bytes(const NetworkSpec& net, const QuantScheme& scheme);
FmBytes fm_bytes_at(const NetworkSpec& net, Bits fm_bits);

struct CompressionRate {
    Rational params;
    Rational feature_maps;
};

/// Baseline-over-quantized ratio of exact bit totals (no byte rounding).
CompressionRate compression_rate(const NetworkSpec& net, const QuantScheme& scheme);

/// Grows a network from a bundle. Shape failures surface as InvalidGrowth.
NetworkSpec build_dnn(const Bundle& bundle, int n_reps, std::vector<Rational> channel_mults,
                      std::vector<bool> pool_after, TensorShape input,
                      std::vector<Layer> backend = {});

/// The bundle the co-design flow converges on: DwConv3 + PwConv1(48).
Bundle dw_pw_bundle(Count pw_channels = 48);

} // namespace codesign
