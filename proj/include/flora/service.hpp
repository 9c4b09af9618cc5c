#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flora/checkpoint.hpp"

namespace flora {

/// Loaded model ready for inference. Weights are never modified after construction, so
/// concurrent calls to `probabilities` are safe.
class ModelHandle {
public:
    explicit ModelHandle(Checkpoint ckpt);
    /// Loads and verifies a checkpoint; format and count errors propagate as CheckpointError.
    static ModelHandle load(const std::filesystem::path& path);

    const ArchDescriptor& descriptor() const { return model_.descriptor(); }
    const std::vector<std::string>& class_names() const { return class_names_; }
    const PreprocessConfig& preprocess() const { return preprocess_; }
    ParamCount param_count() const { return model_.param_count(); }
    std::size_t input_size() const { return preprocess_.input_size; }

    /// [1, S, S, 3] network input for a decoded image.
    Tensor<float> prepare(const Image& image) const;
    /// Inference-mode softmax output for a [N, S, S, 3] batch.
    Tensor<float> forward(const Tensor<float>& batch) const { return model_.predict(batch); }

private:
    Model<float> model_;
    std::vector<std::string> class_names_;
    PreprocessConfig preprocess_;
};

/// Client-side problem with a request; maps to a 4xx response.
class RequestError : public std::runtime_error {
public:
    RequestError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

struct ClassScore {
    std::size_t index = 0;
    std::string name;
    double probability = 0;
};

struct ClassifyResponse {
    std::vector<ClassScore> top_k;  // descending; ties broken by lower class index
    double latency_ms = 0;          // forward pass only
    std::string model;
    double probability_sum = 0;     // over the full distribution
};

inline constexpr std::size_t kDefaultTopK = 3;

/// Decodes, preprocesses, runs one forward pass and extracts the top k classes.
/// Throws RequestError for undecodable images or k outside [1, class count].
ClassifyResponse classify(const ModelHandle& handle, std::span<const std::uint8_t> image_bytes,
                          std::size_t k = kDefaultTopK);

nlohmann::json to_json(const ClassifyResponse& response);

struct BenchmarkReport {
    std::size_t runs = 0;
    std::size_t warmup = 0;
    double avg_ms = 0;
    double p50_ms = 0;
    double p95_ms = 0;
    double min_ms = 0;
    double max_ms = 0;
    std::vector<double> samples_ms;
};

/// `warmup` untimed then `runs` timed forward passes on a fixed seeded random input.
BenchmarkReport benchmark(const ModelHandle& handle, std::size_t runs = 100, std::size_t warmup = 10,
                          std::uint64_t seed = 0);

nlohmann::json to_json(const BenchmarkReport& report);

struct HostInfo {
    std::string device;
    std::string cpu;
    std::string os;
    std::size_t threads = 0;
};

HostInfo host_info();

/// Device / specification / value table with the average execute time on the device row.
std::string format_benchmark(const BenchmarkReport& report, const HostInfo& host, const std::string& model);

/// Lowercase with runs of non-alphanumerics replaced by '_' ("Black-eyed Susan" -> "black_eyed_susan").
std::string species_key(std::string_view name);

/// Info card for a class: the bundled entry when one exists, else a generic card.
/// Throws RequestError(404) when `name` is neither a model class nor a bundled species.
nlohmann::json species_card(std::string_view name, const std::vector<std::string>& class_names);

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::size_t max_upload_bytes = std::size_t{32} << 20;
    std::size_t max_bench_runs = 10000;
};

/// HTTP front end:
///   POST /classify?k=N   raw image body or multipart field "image"
///   GET  /classes, /species/{name}, /model/info, /bench?runs=N&warmup=M, /healthz
/// Errors are {"code", "message"} documents with a 4xx or 5xx status.
class InferenceServer {
public:
    InferenceServer(std::shared_ptr<const ModelHandle> handle, ServerOptions options);
    ~InferenceServer();
    InferenceServer(const InferenceServer&) = delete;
    InferenceServer& operator=(const InferenceServer&) = delete;

    /// Binds the socket and returns the bound port; throws if binding fails.
    int bind();
    /// Serves until stop(); binds first if needed.
    void run();
    /// run() on a background thread.
    void start();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace flora
