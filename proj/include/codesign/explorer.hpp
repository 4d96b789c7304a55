#pragma once

// Bundle enumeration, prototype construction and the stochastic coordinate
// descent over network and quantization knobs.

#include "codesign/hw_models.hpp"
#include "codesign/json_util.hpp"
#include "codesign/qor_oracle.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace codesign {

// --- randomness ---------------------------------------------------------------

/// The engine is fully specified by the standard; std distributions are not,
/// so sampling goes through these helpers to stay identical across toolchains.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// Engine for stream `stream` of a run seeded with `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);
/// Uniform in [0, n). n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// --- layer pool ---------------------------------------------------------------

struct PoolEntry {
    LayerKind kind = LayerKind::PwConv1;
    /// Output-channel choices for PwConv1 / ConvKxK / Dense.
    std::vector<Count> channels;
    /// Kernel choices for ConvKxK.
    std::vector<int> kernels;
};

struct LayerPool {
    std::vector<PoolEntry> entries;
    int max_len = 3;
};

void validate(const LayerPool& pool);
LayerPool layer_pool_from_json(const JsonNode& node);
ojson to_json(const LayerPool& pool);

/// Every concrete layer the pool can contribute.
std::vector<Layer> pool_options(const LayerPool& pool);
/// Number of distinct valid bundles (sequences of length 1..max_len with at
/// least one compute layer).
Count bundle_space_size(const LayerPool& pool);

/// Distinct, validated bundles in a seed-determined order. The DwConv3 +
/// PwConv1(48) bundle leads the list when the pool has DwConv3, PwConv1 and
/// MaxPool2x2. Throws PoolExhausted when the space is smaller than `limit`.
std::vector<Bundle> enumerate_bundles(const LayerPool& pool, std::size_t limit, std::uint64_t seed);

// --- early estimation -------------------------------------------------------

/// QoS of one repetition of `bundle` on `input`.
QosReport estimate_bundle_qos(const Bundle& bundle, const TensorShape& input, const QuantScheme& scheme,
                              const Device& device);

struct PrototypePolicy {
    /// Pooling stops before H or W would drop below this.
    Count min_spatial = 4;
    /// Channel multiplier growth per pooled repetition.
    Rational channel_growth{2};
    std::vector<Layer> tail;
    std::vector<Layer> backend;
};

/// Replicates `bundle` n times. Pools follow each of the first
/// floor(log2(min(H, W) / min_spatial)) repetitions, never the last one.
NetworkSpec build_prototype(const Bundle& bundle, int n, const TensorShape& input,
                            const PrototypePolicy& policy = {});

struct QosTarget {
    double min_fps = 1;
    std::optional<double> max_power;
};

struct BundleCandidate {
    Bundle bundle;
    QosReport qos;
    double qor = 0;
};

struct SelectedBundle {
    BundleCandidate candidate;
    int group = 0;
};

/// Splits candidates into k quantile groups of relative latency distance to
/// 1/min_fps and keeps the top_n by qor of each (ties: smaller name first).
std::vector<SelectedBundle> group_and_select(const std::vector<BundleCandidate>& candidates,
                                             const QosTarget& target, int k, int top_n);

// --- designs and Pareto ---------------------------------------------------------

struct CandidateDesign {
    NetworkSpec net;
    QuantScheme scheme;
    QosReport qos;
    double qor = 0;
    double score = 0;
    std::string metric;
    std::string fingerprint;
    std::uint64_t seed = 0;
    int restart = 0;
    int iteration = 0;
};

/// Dominance on (qor, fps, efficiency), all maximized.
bool dominates(const CandidateDesign& a, const CandidateDesign& b) noexcept;

struct ParetoSet {
    std::vector<CandidateDesign> members;  // insertion order
};

/// Adds `d` unless dominated or already present (same fingerprint); drops
/// members `d` dominates. Returns whether `d` was added.
bool pareto_insert(ParetoSet& set, const CandidateDesign& d);

// --- search -------------------------------------------------------------------

struct SearchDomains {
    std::vector<int> n_reps{1, 2, 3, 4, 5, 6};
    std::vector<Rational> channel_mult{Rational(1, 2), Rational(1), Rational(2), Rational(4), Rational(8)};
    std::vector<bool> pool{false, true};
    /// Whether pooling after the final repetition is a coordinate.
    bool pool_last = false;
    /// A repetition added by the search pools in front of itself only while
    /// H and W stay at or above this.
    Count min_spatial = 4;
    std::vector<Bits> weight_bits{4, 6, 8, 10, 11, 12, 14, 16};
    std::vector<Bits> fm_bits{4, 6, 8, 10, 12, 14, 16};
};

struct SearchConfig {
    std::uint64_t seed = 1;
    int max_iterations = 500;
    /// Restarts from the seed design allowed after a stall.
    int restarts = 3;
    /// Consecutive rejections that count as a stall.
    int stall_limit = 50;
    double lambda = 2.0;
    int k = 3;
    int top_n = 3;
    int epochs = 20;
    std::string dataset = "dac-sdc";
    SearchDomains domains;
    /// Concurrent evaluations; results are identical for any value.
    int jobs = 1;
};

void validate(const SearchConfig& cfg);

struct AuditRecord {
    int iter = 0;
    std::string coordinate;
    int move = 0;
    std::optional<double> fps;
    std::optional<double> qor;
    std::optional<double> score;
    bool accepted = false;
};

std::string to_jsonl(const AuditRecord& rec);

enum class SearchStatus { Found, NoFeasibleFound };

struct SearchResult {
    SearchStatus status = SearchStatus::NoFeasibleFound;
    /// Best admissible design when Found, else the best-scoring one.
    std::optional<CandidateDesign> best;
    std::string diagnosis;
    ParetoSet pareto;
    std::vector<AuditRecord> audit;
    int evaluations = 0;
};

/// Raised when the oracle fails; carries the offending request line.
class OracleFailure : public Error {
public:
    OracleFailure(const std::string& message, std::string request)
        : Error(message), request_(std::move(request)) {}
    const std::string& request() const noexcept { return request_; }

private:
    std::string request_;
};

/// Penalized objective; equals qor for admissible designs.
double design_score(const QosReport& qos, double qor, const QosTarget& target, const DeviceBudget& budget,
                    double lambda);
/// Feasible on the device and meeting every target.
bool admissible(const QosReport& qos, const QosTarget& target) noexcept;

/// Evaluates one design (qos + oracle).
CandidateDesign evaluate_design(const NetworkSpec& net, const QuantScheme& scheme, const Device& device,
                                const QosTarget& target, QorOracle& oracle, const SearchConfig& cfg);

SearchResult scd_search(const NetworkSpec& seed_net, const QuantScheme& seed_scheme, const QosTarget& target,
                        const Device& device, QorOracle& oracle, const SearchConfig& cfg);

/// One descent per seed design, merged in seed order. Descent i > 0 draws
/// from its own RNG stream; audit iterations keep increasing across descents.
SearchResult search_from_seeds(const std::vector<std::pair<NetworkSpec, QuantScheme>>& seeds,
                               const QosTarget& target, const Device& device, QorOracle& oracle,
                               const SearchConfig& cfg);

/// Every design the search can reach, for brute-force comparison on small
/// spaces. Shape-invalid points are skipped.
std::vector<std::pair<NetworkSpec, QuantScheme>> enumerate_space(const NetworkSpec& seed_net,
                                                                 const QuantScheme& seed_scheme,
                                                                 const SearchDomains& domains);

// --- serialization ------------------------------------------------------------

constexpr const char* kSearchSchema = "search.v1";
constexpr const char* kDesignSchema = "design.v1";

SearchDomains domains_from_json(const JsonNode& node);
SearchConfig search_config_from_json(const JsonNode& node);
QosTarget target_from_json(const JsonNode& node);
PrototypePolicy prototype_policy_from_json(const JsonNode& node);

ojson to_json(const CandidateDesign& d, const std::string& oracle_label);
std::string pareto_csv(const ParetoSet& set, const std::vector<std::string>& design_paths);

} // namespace codesign
