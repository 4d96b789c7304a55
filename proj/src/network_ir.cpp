#include "codesign/network_ir.hpp"

#include "codesign/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace codesign {

namespace {

std::string describe(const TensorShape& s) {
    std::ostringstream os;
    os << s.channels << "x" << s.height << "x" << s.width;
    return os.str();
}

Count ceil_div(Count a, Count b) { return (a + b - 1) / b; }

} // namespace

const char* to_string(LayerKind kind) noexcept {
    switch (kind) {
    case LayerKind::DwConv3: return "DwConv3";
    case LayerKind::PwConv1: return "PwConv1";
    case LayerKind::ConvKxK: return "ConvKxK";
    case LayerKind::MaxPool2x2: return "MaxPool2x2";
    case LayerKind::Dense: return "Dense";
    case LayerKind::BackendMarker: return "BackendMarker";
    }
    return "?";
}

std::optional<LayerKind> layer_kind_from_string(const std::string& name) noexcept {
    for (auto k : {LayerKind::DwConv3, LayerKind::PwConv1, LayerKind::ConvKxK,
                   LayerKind::MaxPool2x2, LayerKind::Dense, LayerKind::BackendMarker}) {
        if (name == to_string(k)) return k;
    }
    return std::nullopt;
}

int Layer::effective_kernel() const noexcept {
    switch (kind) {
    case LayerKind::DwConv3: return 3;
    case LayerKind::ConvKxK: return kernel;
    case LayerKind::MaxPool2x2: return 2;
    default: return 1;
    }
}

std::string bundle_signature(const Bundle& bundle) {
    std::string sig;
    for (const auto& l : bundle.layers) {
        if (!sig.empty()) sig += '-';
        switch (l.kind) {
        case LayerKind::DwConv3: sig += "dw3"; break;
        case LayerKind::PwConv1: sig += "pw1x" + std::to_string(l.out_channels); break;
        case LayerKind::ConvKxK:
            sig += "c" + std::to_string(l.kernel) + "x" + std::to_string(l.out_channels);
            break;
        case LayerKind::MaxPool2x2: sig += "pool"; break;
        case LayerKind::Dense: sig += "fc" + std::to_string(l.out_channels); break;
        case LayerKind::BackendMarker: sig += "backend"; break;
        }
    }
    return sig;
}

namespace {

void check_layer(const Layer& l, const std::string& where) {
    const bool sets_channels = l.kind == LayerKind::PwConv1 || l.kind == LayerKind::ConvKxK ||
                               l.kind == LayerKind::Dense;
    if (sets_channels && l.out_channels < 1)
        throw ConfigError(where + ": " + to_string(l.kind) + " needs out_channels >= 1");
    if (l.kind == LayerKind::ConvKxK && (l.kernel < 1 || l.kernel % 2 == 0))
        throw ConfigError(where + ": ConvKxK kernel must be odd, got " + std::to_string(l.kernel));
    if (l.kind == LayerKind::MaxPool2x2) {
        if (l.stride != 2 && l.stride != 1)
            throw ConfigError(where + ": MaxPool2x2 stride is fixed at 2");
    } else if (l.stride != 1) {
        throw ConfigError(where + ": only stride-1 convolutions are supported");
    }
}

} // namespace

void validate_bundle(const Bundle& bundle) {
    if (bundle.layers.empty()) throw ConfigError("bundle '" + bundle.name + "' is empty");
    const bool has_compute = std::any_of(bundle.layers.begin(), bundle.layers.end(),
                                         [](const Layer& l) { return l.is_compute(); });
    if (!has_compute)
        throw ConfigError("bundle '" + bundle.name + "' has no compute layer");
    for (std::size_t i = 0; i < bundle.layers.size(); ++i) {
        if (bundle.layers[i].kind == LayerKind::BackendMarker)
            throw ConfigError("bundle '" + bundle.name + "' contains a back-end marker");
        check_layer(bundle.layers[i], "bundle layer " + std::to_string(i));
    }
}

Count scale_channels(Count channels, const Rational& mult) {
    if (mult == Rational(1)) return channels;
    // nearest multiple of 8, halves rounding up
    const auto num = channels * mult.num();
    const auto den = mult.den() * 8;
    const auto eighths = (2 * num + den) / (2 * den);
    return std::max<Count>(8, eighths * 8);
}

namespace {

ShapedLayer apply(const Layer& layer, const TensorShape& in, LayerRole role, int rep,
                  const std::string& where) {
    if (layer.in_channels != 0 && layer.in_channels != in.channels)
        throw ChannelMismatch(where + ": " + to_string(layer.kind) + " declares " +
                              std::to_string(layer.in_channels) + " input channels, producer gives " +
                              std::to_string(in.channels));
    ShapedLayer sl{layer, in, in, role, rep};
    switch (layer.kind) {
    case LayerKind::DwConv3:
    case LayerKind::BackendMarker:
        if (layer.out_channels != 0 && layer.out_channels != in.channels)
            throw ChannelMismatch(where + ": " + to_string(layer.kind) + " must preserve " +
                                  std::to_string(in.channels) + " channels, declares " +
                                  std::to_string(layer.out_channels));
        break;
    case LayerKind::PwConv1:
    case LayerKind::ConvKxK:
        sl.out.channels = layer.out_channels;
        break;
    case LayerKind::MaxPool2x2:
        if (layer.out_channels != 0 && layer.out_channels != in.channels)
            throw ChannelMismatch(where + ": MaxPool2x2 must preserve channels");
        sl.out.height = in.height / 2;
        sl.out.width = in.width / 2;
        if (sl.out.height < 1 || sl.out.width < 1)
            throw ShapeError(where + ": MaxPool2x2 on " + describe(in) + " reaches a zero dimension");
        break;
    case LayerKind::Dense:
        sl.out = {layer.out_channels, 1, 1};
        break;
    }
    if (sl.out.channels < 1) throw ShapeError(where + ": zero output channels");
    sl.layer.out_channels = sl.out.channels;
    if (layer.kind == LayerKind::MaxPool2x2) sl.layer.stride = 2;
    return sl;
}

} // namespace

std::vector<ShapedLayer> infer_shapes(const NetworkSpec& net) {
    if (net.input.channels < 1 || net.input.height < 1 || net.input.width < 1)
        throw ShapeError("input shape " + describe(net.input) + " has a zero dimension");
    if (net.n_reps < 1) throw ConfigError("n_reps must be >= 1");
    if (net.channel_mults.size() != static_cast<std::size_t>(net.n_reps) ||
        net.pool_after.size() != static_cast<std::size_t>(net.n_reps))
        throw ConfigError("channel_mults and pool_after must both have n_reps entries");

    std::vector<ShapedLayer> chain;
    TensorShape shape = net.input;
    auto push = [&](const Layer& l, LayerRole role, int rep, const std::string& where) {
        chain.push_back(apply(l, shape, role, rep, where));
        shape = chain.back().out;
    };

    for (std::size_t i = 0; i < net.head.size(); ++i)
        push(net.head[i], LayerRole::Head, 0, "head[" + std::to_string(i) + "]");
    for (int r = 0; r < net.n_reps; ++r) {
        const auto& mult = net.channel_mults[r];
        if (mult <= Rational(0)) throw ConfigError("channel multiplier must be positive");
        for (std::size_t i = 0; i < net.bundle.layers.size(); ++i) {
            // Bundle layers are templates: per-rep channel annotations are dropped.
            Layer l = net.bundle.layers[i];
            l.in_channels = 0;
            if (l.kind == LayerKind::PwConv1 || l.kind == LayerKind::ConvKxK ||
                l.kind == LayerKind::Dense)
                l.out_channels = scale_channels(l.out_channels, mult);
            else
                l.out_channels = 0;
            push(l, l.kind == LayerKind::MaxPool2x2 ? LayerRole::Pool : LayerRole::Bundle, r,
                 "rep " + std::to_string(r) + " layer " + std::to_string(i));
        }
        if (net.pool_after[r])
            push(Layer::maxpool(), LayerRole::Pool, r, "pool after rep " + std::to_string(r));
    }
    const int last = net.n_reps - 1;
    for (std::size_t i = 0; i < net.tail.size(); ++i)
        push(net.tail[i], LayerRole::Tail, last, "tail[" + std::to_string(i) + "]");
    push(Layer::marker(), LayerRole::Marker, last, "backend marker");
    for (std::size_t i = 0; i < net.backend.size(); ++i)
        push(net.backend[i], LayerRole::Backend, last, "backend[" + std::to_string(i) + "]");
    return chain;
}

void validate(const NetworkSpec& net) {
    validate_bundle(net.bundle);
    for (std::size_t i = 0; i < net.head.size(); ++i)
        check_layer(net.head[i], "head[" + std::to_string(i) + "]");
    for (std::size_t i = 0; i < net.tail.size(); ++i)
        check_layer(net.tail[i], "tail[" + std::to_string(i) + "]");
    for (std::size_t i = 0; i < net.backend.size(); ++i)
        check_layer(net.backend[i], "backend[" + std::to_string(i) + "]");
    (void)infer_shapes(net);
}

Count layer_params(const ShapedLayer& sl) {
    const Count cin = sl.in.channels;
    switch (sl.layer.kind) {
    case LayerKind::DwConv3: return 9 * cin;
    case LayerKind::PwConv1: return cin * sl.out.channels;
    case LayerKind::ConvKxK:
        return Count{sl.layer.kernel} * sl.layer.kernel * cin * sl.out.channels;
    case LayerKind::Dense: return sl.in.elements() * sl.out.channels;
    default: return 0;
    }
}

Count layer_macs(const ShapedLayer& sl) {
    const Count positions = sl.out.height * sl.out.width;
    switch (sl.layer.kind) {
    case LayerKind::DwConv3: return 9 * sl.out.channels * positions;
    case LayerKind::PwConv1:
    case LayerKind::ConvKxK:
    case LayerKind::Dense:
        return layer_params(sl) * positions;
    default: return 0;
    }
}

namespace {

LayerCounts count(const NetworkSpec& net, Count (*fn)(const ShapedLayer&)) {
    LayerCounts out;
    for (const auto& sl : infer_shapes(net)) {
        out.per_layer.push_back(fn(sl));
        out.total += out.per_layer.back();
    }
    return out;
}

} // namespace

LayerCounts param_count(const NetworkSpec& net) { return count(net, &layer_params); }
LayerCounts macs(const NetworkSpec& net) { return count(net, &layer_macs); }

QuantScheme QuantScheme::uniform(Bits weight_bits, Bits fm_bits, Bits baseline) {
    return {fm_bits, {WeightGroup{"all", {GroupSelector::All}, weight_bits}}, baseline};
}

void validate(const QuantScheme& scheme) {
    auto check = [](Bits b, const std::string& what) {
        if (b < 1 || b > 32)
            throw ConfigError(what + " must be in [1, 32], got " + std::to_string(b));
    };
    check(scheme.fm_bits, "fm_bits");
    check(scheme.baseline_bits, "baseline_bits");
    if (scheme.groups.empty()) throw ConfigError("scheme has no weight groups");
    for (const auto& g : scheme.groups) check(g.bits, "bits of group '" + g.id + "'");
}

std::vector<int> resolve_groups(const std::vector<ShapedLayer>& chain, const QuantScheme& scheme) {
    std::vector<int> weight_layers;
    for (std::size_t i = 0; i < chain.size(); ++i)
        if (layer_params(chain[i]) > 0) weight_layers.push_back(static_cast<int>(i));

    std::vector<int> group(chain.size(), -1);
    auto claim = [&](int layer, int g) {
        if (layer < 0 || layer >= static_cast<int>(chain.size()))
            throw ConfigError("group '" + scheme.groups[g].id + "' names layer " +
                              std::to_string(layer) + " outside the network");
        if (layer_params(chain[layer]) == 0) return;
        if (group[layer] != -1 && group[layer] != g)
            throw ConfigError("layer " + std::to_string(layer) + " is mapped to groups '" +
                              scheme.groups[group[layer]].id + "' and '" + scheme.groups[g].id + "'");
        group[layer] = g;
    };

    int rest_group = -1;
    for (int g = 0; g < static_cast<int>(scheme.groups.size()); ++g) {
        for (const auto& sel : scheme.groups[g].layers) {
            if (const int* idx = std::get_if<int>(&sel)) {
                claim(*idx, g);
                continue;
            }
            switch (std::get<GroupSelector>(sel)) {
            case GroupSelector::First:
                if (!weight_layers.empty()) claim(weight_layers.front(), g);
                break;
            case GroupSelector::Last:
                if (!weight_layers.empty()) claim(weight_layers.back(), g);
                break;
            case GroupSelector::All:
                for (int l : weight_layers) claim(l, g);
                break;
            case GroupSelector::Rest:
                if (rest_group != -1)
                    throw ConfigError("more than one group uses the \"rest\" selector");
                rest_group = g;
                break;
            }
        }
    }
    for (int l : weight_layers) {
        if (group[l] != -1) continue;
        if (rest_group == -1)
            throw UnmappedLayer("layer " + std::to_string(l) + " (" +
                                to_string(chain[l].layer.kind) + ") has no weight group");
        group[l] = rest_group;
    }
    return group;
}

ParamBytes param_bytes(const NetworkSpec& net, const QuantScheme& scheme) {
    validate(scheme);
    const auto chain = infer_shapes(net);
    const auto groups = resolve_groups(chain, scheme);
    ParamBytes out;
    out.per_group.assign(scheme.groups.size(), 0);
    out.per_layer.assign(chain.size(), 0);
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (groups[i] < 0) continue;
        const Count bytes = ceil_div(layer_params(chain[i]) * scheme.groups[groups[i]].bits, 8);
        out.per_layer[i] = bytes;
        out.per_group[groups[i]] += bytes;
        out.total += bytes;
    }
    return out;
}

Count param_bytes_at(const NetworkSpec& net, Bits bits) {
    Count total = 0;
    for (const auto& sl : infer_shapes(net)) total += ceil_div(layer_params(sl) * bits, 8);
    return total;
}

FmBytes fm_bytes_at(const NetworkSpec& net, Bits fm_bits) {
    FmBytes out;
    for (const auto& sl : infer_shapes(net)) {
        if (sl.layer.kind == LayerKind::BackendMarker) continue;
        const Count bytes = ceil_div(sl.out.elements() * fm_bits, 8);
        out.peak = std::max(out.peak, bytes);
        out.total += bytes;
    }
    return out;
}

FmBytes fm_bytes(const NetworkSpec& net, const QuantScheme& scheme) {
    validate(scheme);
    return fm_bytes_at(net, scheme.fm_bits);
}

CompressionRate compression_rate(const NetworkSpec& net, const QuantScheme& scheme) {
    // Ratios of exact bit totals, so a uniform scheme gives baseline / bits.
    validate(scheme);
    const auto chain = infer_shapes(net);
    const auto group_of = resolve_groups(chain, scheme);
    Count weights = 0, weight_bits = 0, fm_elems = 0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (group_of[i] >= 0) {
            const Count p = layer_params(chain[i]);
            weights += p;
            weight_bits += p * scheme.groups[static_cast<std::size_t>(group_of[i])].bits;
        }
        if (chain[i].layer.kind != LayerKind::BackendMarker) fm_elems += chain[i].out.elements();
    }
    if (weight_bits == 0 || fm_elems == 0) throw ConfigError("network has no weights or feature maps");
    return {Rational(weights * scheme.baseline_bits, weight_bits),
            Rational(Count{scheme.baseline_bits}, Count{scheme.fm_bits})};
}

NetworkSpec build_dnn(const Bundle& bundle, int n_reps, std::vector<Rational> channel_mults,
                      std::vector<bool> pool_after, TensorShape input, std::vector<Layer> backend) {
    if (n_reps < 1) throw InvalidGrowth("n_reps must be >= 1");
    for (const auto& m : channel_mults)
        if (m <= Rational(0)) throw InvalidGrowth("channel multipliers must be positive");
    NetworkSpec net;
    net.input = input;
    net.bundle = bundle;
    if (net.bundle.name.empty()) net.bundle.name = bundle_signature(bundle);
    net.n_reps = n_reps;
    net.channel_mults = std::move(channel_mults);
    net.pool_after = std::move(pool_after);
    net.backend = std::move(backend);
    try {
        validate(net);
    } catch (const ShapeError& e) {
        throw InvalidGrowth(std::string("growth vanishes a dimension: ") + e.what());
    }
    return net;
}

Bundle dw_pw_bundle(Count pw_channels) {
    Bundle b{"", {Layer::dw3(), Layer::pw1(pw_channels)}};
    b.name = bundle_signature(b);
    return b;
}

} // namespace codesign
