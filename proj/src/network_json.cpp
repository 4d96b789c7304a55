#include "codesign/network_json.hpp"

namespace codesign {

ojson to_json(const TensorShape& shape) {
    return {{"channels", shape.channels}, {"height", shape.height}, {"width", shape.width}};
}

ojson to_json(const Layer& layer) {
    ojson j;
    j["kind"] = to_string(layer.kind);
    j["out_channels"] = layer.out_channels;
    j["stride"] = layer.kind == LayerKind::MaxPool2x2 ? 2 : layer.stride;
    if (layer.kind == LayerKind::ConvKxK) j["kernel"] = layer.kernel;
    if (layer.in_channels != 0) j["in_channels"] = layer.in_channels;
    return j;
}

namespace {

ojson layers_to_json(const std::vector<Layer>& layers) {
    ojson arr = ojson::array();
    for (const auto& l : layers) arr.push_back(to_json(l));
    return arr;
}

std::vector<Layer> layers_from_json(const JsonNode& node) {
    std::vector<Layer> out;
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(layer_from_json(node.at(i)));
    return out;
}

} // namespace

ojson to_json(const Bundle& bundle) {
    return {{"name", bundle.name}, {"layers", layers_to_json(bundle.layers)}};
}

ojson to_json(const NetworkSpec& net) {
    ojson j;
    j["schema"] = kNetworkSchema;
    j["input"] = to_json(net.input);
    j["head"] = layers_to_json(net.head);
    j["bundle"] = to_json(net.bundle);
    j["n_reps"] = net.n_reps;
    ojson mults = ojson::array();
    for (const auto& m : net.channel_mults) mults.push_back(rational_to_json(m));
    j["channel_mults"] = mults;
    ojson pools = ojson::array();
    for (bool p : net.pool_after) pools.push_back(p);
    j["pool_after"] = pools;
    j["tail"] = layers_to_json(net.tail);
    j["backend"] = {{"kind", "BackendMarker"}, {"layers", layers_to_json(net.backend)}};
    return j;
}

ojson to_json(const QuantScheme& scheme) {
    ojson groups = ojson::array();
    for (const auto& g : scheme.groups) {
        ojson sel = ojson::array();
        for (const auto& s : g.layers) {
            if (const int* idx = std::get_if<int>(&s)) {
                sel.push_back(*idx);
                continue;
            }
            switch (std::get<GroupSelector>(s)) {
            case GroupSelector::First: sel.push_back("first"); break;
            case GroupSelector::Last: sel.push_back("last"); break;
            case GroupSelector::Rest: sel.push_back("rest"); break;
            case GroupSelector::All: sel.push_back("all"); break;
            }
        }
        groups.push_back({{"id", g.id}, {"layers", sel}, {"bits", g.bits}});
    }
    return {{"fm_bits", scheme.fm_bits}, {"baseline_bits", scheme.baseline_bits}, {"groups", groups}};
}

TensorShape shape_from_json(const JsonNode& node) {
    return {node.at("channels").as_int(1), node.at("height").as_int(1), node.at("width").as_int(1)};
}

Layer layer_from_json(const JsonNode& node) {
    const auto kind_node = node.at("kind");
    const auto kind = layer_kind_from_string(kind_node.as_string());
    if (!kind) kind_node.fail("unknown layer kind '" + kind_node.as_string() + "'");
    Layer l;
    l.kind = *kind;
    l.kernel = l.effective_kernel();
    l.stride = l.kind == LayerKind::MaxPool2x2 ? 2 : 1;
    const bool needs_channels =
        l.kind == LayerKind::PwConv1 || l.kind == LayerKind::ConvKxK || l.kind == LayerKind::Dense;
    if (needs_channels)
        l.out_channels = node.at("out_channels").as_int(1);
    else if (node.has("out_channels"))
        l.out_channels = node.at("out_channels").as_int(0);
    if (l.kind == LayerKind::ConvKxK) {
        const auto k = node.at("kernel");
        l.kernel = static_cast<int>(k.as_int(1, 31));
        if (l.kernel % 2 == 0) k.fail("kernel must be odd");
    }
    if (node.has("stride")) {
        const auto s = node.at("stride");
        const auto stride = s.as_int(1, 2);
        if (l.kind != LayerKind::MaxPool2x2 && stride != 1) s.fail("only stride 1 is supported");
        if (l.kind == LayerKind::MaxPool2x2 && stride != 2) s.fail("MaxPool2x2 has stride 2");
        l.stride = static_cast<int>(stride);
    }
    if (node.has("in_channels")) l.in_channels = node.at("in_channels").as_int(1);
    return l;
}

Bundle bundle_from_json(const JsonNode& node) {
    Bundle b;
    b.layers = layers_from_json(node.at("layers"));
    b.name = node.has("name") ? node.at("name").as_string() : bundle_signature(b);
    if (b.layers.empty()) node.at("layers").fail("bundle is empty");
    try {
        validate_bundle(b);
    } catch (const Error& e) {
        node.fail(e.what());
    }
    return b;
}

NetworkSpec network_from_json(const JsonNode& node) {
    if (!node.is_object()) node.fail("expected a network object");
    if (node.has("schema") && node.at("schema").as_string() != kNetworkSchema)
        node.at("schema").fail("unsupported schema, expected network.v1");
    NetworkSpec net;
    net.input = shape_from_json(node.at("input"));
    if (node.has("head")) net.head = layers_from_json(node.at("head"));
    net.bundle = bundle_from_json(node.at("bundle"));
    net.n_reps = static_cast<int>(node.at("n_reps").as_int(1, 4096));

    if (node.has("channel_mults")) {
        const auto mults = node.at("channel_mults");
        if (mults.size() != static_cast<std::size_t>(net.n_reps)) mults.fail("length must equal n_reps");
        for (std::size_t i = 0; i < mults.size(); ++i) {
            const auto r = mults.at(i).as_rational();
            if (r <= Rational(0)) mults.at(i).fail("multiplier must be positive");
            net.channel_mults.push_back(r);
        }
    } else {
        net.channel_mults.assign(net.n_reps, Rational(1));
    }
    if (node.has("pool_after")) {
        const auto pools = node.at("pool_after");
        if (pools.size() != static_cast<std::size_t>(net.n_reps)) pools.fail("length must equal n_reps");
        for (std::size_t i = 0; i < pools.size(); ++i) net.pool_after.push_back(pools.at(i).as_bool());
    } else {
        net.pool_after.assign(net.n_reps, false);
    }
    if (node.has("tail")) net.tail = layers_from_json(node.at("tail"));
    if (node.has("backend")) {
        const auto be = node.at("backend");
        if (be.has("layers")) net.backend = layers_from_json(be.at("layers"));
    }
    try {
        validate(net);
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        node.fail(e.what());
    }
    return net;
}

QuantScheme scheme_from_json(const JsonNode& node) {
    QuantScheme s;
    s.fm_bits = static_cast<int>(node.at("fm_bits").as_int(1, 32));
    if (node.has("baseline_bits")) s.baseline_bits = static_cast<int>(node.at("baseline_bits").as_int(1, 32));
    const auto groups = node.at("groups");
    if (groups.size() == 0) groups.fail("at least one group is required");
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto gn = groups.at(g);
        WeightGroup wg;
        wg.id = gn.has("id") ? gn.at("id").as_string() : "g" + std::to_string(g);
        wg.bits = static_cast<int>(gn.at("bits").as_int(1, 32));
        const auto layers = gn.at("layers");
        if (layers.is_string()) {
            // shorthand: "layers": "all"
            const auto sel = layers.as_string();
            if (sel == "all") wg.layers.push_back(GroupSelector::All);
            else if (sel == "rest") wg.layers.push_back(GroupSelector::Rest);
            else layers.fail("expected \"all\", \"rest\" or an array");
        } else {
            for (std::size_t i = 0; i < layers.size(); ++i) {
                const auto item = layers.at(i);
                if (item.is_string()) {
                    const auto sel = item.as_string();
                    if (sel == "first") wg.layers.push_back(GroupSelector::First);
                    else if (sel == "last") wg.layers.push_back(GroupSelector::Last);
                    else if (sel == "rest") wg.layers.push_back(GroupSelector::Rest);
                    else if (sel == "all") wg.layers.push_back(GroupSelector::All);
                    else item.fail("unknown selector '" + sel + "'");
                } else {
                    wg.layers.push_back(static_cast<int>(item.as_int(0, 1 << 20)));
                }
            }
        }
        s.groups.push_back(std::move(wg));
    }
    return s;
}

NetworkSpec network_from_document(const json& doc) {
    if (doc.is_object() && doc.contains("net")) return network_from_json(JsonNode(doc).at("net"));
    return network_from_json(JsonNode(doc));
}

} // namespace codesign
