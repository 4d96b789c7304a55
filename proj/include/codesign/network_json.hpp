#pragma once

// network.v1 serialization of NetworkSpec and QuantScheme.

#include "codesign/json_util.hpp"
#include "codesign/network_ir.hpp"

namespace codesign {

inline constexpr const char* kNetworkSchema = "network.v1";

ojson to_json(const TensorShape& shape);
ojson to_json(const Layer& layer);
ojson to_json(const Bundle& bundle);
ojson to_json(const NetworkSpec& net);
ojson to_json(const QuantScheme& scheme);

TensorShape shape_from_json(const JsonNode& node);
Layer layer_from_json(const JsonNode& node);
Bundle bundle_from_json(const JsonNode& node);
/// Decodes and validates; structural failures are reported against the
/// node's pointer.
NetworkSpec network_from_json(const JsonNode& node);
QuantScheme scheme_from_json(const JsonNode& node);

/// Accepts either a bare network document or any document with a "net"
/// member (design files, export descriptors).
NetworkSpec network_from_document(const json& doc);

} // namespace codesign
