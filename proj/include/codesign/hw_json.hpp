#pragma once

// device.v1 configs, QoS reports, tile plans and the resize-sweep fixture.

#include "codesign/hw_models.hpp"
#include "codesign/json_util.hpp"

namespace codesign {

inline constexpr const char* kDeviceSchema = "device.v1";
inline constexpr const char* kPlanSchema = "plan.v1";

Device device_from_json(const JsonNode& node);
ojson to_json(const Device& device);

ojson to_json(const QosReport& report);
QosReport qos_from_json(const JsonNode& node);

ojson to_json(const TilePlan& plan);
/// Accepts a full plan or the minimal {tile_count, stages: [{per_tile_cycles}]}.
TilePlan plan_from_json(const JsonNode& node);

ResizeSweep resize_sweep_from_json(const JsonNode& node);

} // namespace codesign
