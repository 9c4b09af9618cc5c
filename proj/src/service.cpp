#include "flora/service.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>
#include <sys/utsname.h>
#include <unistd.h>

#include "flora/log.hpp"
#include "flora/rng.hpp"

namespace flora {

extern const char* const kSpeciesJson;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

const nlohmann::json& species_catalog() {
    static const nlohmann::json doc = nlohmann::json::parse(kSpeciesJson);
    return doc;
}

// Nearest-rank percentile of sorted values.
double percentile(const std::vector<double>& sorted, double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

}  // namespace

ModelHandle::ModelHandle(Checkpoint ckpt)
    : model_(std::move(ckpt.model)), class_names_(std::move(ckpt.class_names)), preprocess_(ckpt.preprocess) {
    if (class_names_.size() != model_.descriptor().num_classes) {
        throw std::invalid_argument("class name count does not match the model's outputs");
    }
    if (preprocess_.input_size != model_.descriptor().input_shape.h) {
        throw std::invalid_argument("preprocess input size does not match the model input");
    }
}

ModelHandle ModelHandle::load(const std::filesystem::path& path) { return ModelHandle(load_checkpoint(path)); }

Tensor<float> ModelHandle::prepare(const Image& image) const {
    const std::size_t s = preprocess_.input_size;
    auto t = image_to_tensor(image, s, s);
    const auto factor = static_cast<float>(preprocess_.scale * 255.0);
    if (factor != 1.0f) {
        for (auto& v : t.vec()) v *= factor;
    }
    return t.reshaped({1, s, s, 3});
}

ClassifyResponse classify(const ModelHandle& handle, std::span<const std::uint8_t> image_bytes, std::size_t k) {
    const std::size_t classes = handle.class_names().size();
    if (k < 1 || k > classes) {
        throw RequestError(400, "bad_k", "k must be between 1 and " + std::to_string(classes) + ", got " +
                                             std::to_string(k));
    }
    Image image;
    try {
        image = decode_image(image_bytes);
    } catch (const ImageDecodeError& e) {
        throw RequestError(400, "bad_image", std::string("cannot decode image: ") + e.what());
    }
    const auto input = handle.prepare(image);

    const auto start = Clock::now();
    const auto probs = handle.forward(input);
    const double latency = elapsed_ms(start);

    std::vector<std::size_t> order(classes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

    ClassifyResponse out;
    out.model = handle.descriptor().name;
    out.latency_ms = latency;
    for (std::size_t i = 0; i < classes; ++i) out.probability_sum += static_cast<double>(probs[i]);
    for (std::size_t i = 0; i < k; ++i) {
        out.top_k.push_back({order[i], handle.class_names()[order[i]], static_cast<double>(probs[order[i]])});
    }
    return out;
}

nlohmann::json to_json(const ClassifyResponse& r) {
    auto top = nlohmann::json::array();
    for (const auto& s : r.top_k) top.push_back({{"class", s.name}, {"index", s.index}, {"probability", s.probability}});
    return {{"model", r.model}, {"top_k", std::move(top)}, {"latency_ms", r.latency_ms}};
}

BenchmarkReport benchmark(const ModelHandle& handle, std::size_t runs, std::size_t warmup, std::uint64_t seed) {
    if (runs < 1) throw std::invalid_argument("benchmark needs at least one run");
    const std::size_t s = handle.input_size();
    Tensor<float> input({1, s, s, 3});
    Rng rng(seed);
    for (auto& v : input.vec()) v = static_cast<float>(rng.uniform());

    for (std::size_t i = 0; i < warmup; ++i) handle.forward(input);
    BenchmarkReport r;
    r.runs = runs;
    r.warmup = warmup;
    r.samples_ms.reserve(runs);
    for (std::size_t i = 0; i < runs; ++i) {
        const auto start = Clock::now();
        handle.forward(input);
        r.samples_ms.push_back(elapsed_ms(start));
    }
    auto sorted = r.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    r.avg_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(runs);
    r.p50_ms = percentile(sorted, 0.50);
    r.p95_ms = percentile(sorted, 0.95);
    r.min_ms = sorted.front();
    r.max_ms = sorted.back();
    return r;
}

nlohmann::json to_json(const BenchmarkReport& r) {
    return {{"runs", r.runs},     {"warmup", r.warmup}, {"avg_ms", r.avg_ms}, {"p50_ms", r.p50_ms},
            {"p95_ms", r.p95_ms}, {"min_ms", r.min_ms}, {"max_ms", r.max_ms}};
}

HostInfo host_info() {
    HostInfo h;
    char name[256] = {};
    h.device = gethostname(name, sizeof(name) - 1) == 0 ? name : "localhost";
    std::ifstream cpuinfo("/proc/cpuinfo");
    for (std::string line; std::getline(cpuinfo, line);) {
        if (line.rfind("model name", 0) == 0) {
            h.cpu = line.substr(line.find(':') + 2);
            break;
        }
    }
    if (h.cpu.empty()) h.cpu = "unknown";
    struct utsname u {};
    h.os = uname(&u) == 0 ? std::string(u.sysname) + " " + u.release : "unknown";
    h.threads = std::max(1u, std::thread::hardware_concurrency());
    return h;
}

std::string format_benchmark(const BenchmarkReport& r, const HostInfo& host, const std::string& model) {
    const std::size_t dev_w = std::max<std::size_t>(host.device.size(), 6);
    std::string out = fmt::format("{:<{}}  {:<13}  {:<40}  {}\n", "Device", dev_w, "Specification", "Value",
                                  "Avg. Execute Time (ms)");
    out += fmt::format("{:<{}}  {:<13}  {:<40}  {:.2f}\n", host.device, dev_w, "CPU",
                       fmt::format("{}x {}", host.threads, host.cpu), r.avg_ms);
    out += fmt::format("{:<{}}  {:<13}  {:<40}\n", "", dev_w, "OS", host.os);
    out += fmt::format("{:<{}}  {:<13}  {:<40}\n", "", dev_w, "Model", model);
    out += fmt::format("runs {}  warmup {}  p50 {:.2f} ms  p95 {:.2f} ms  min {:.2f} ms  max {:.2f} ms\n", r.runs,
                       r.warmup, r.p50_ms, r.p95_ms, r.min_ms, r.max_ms);
    return out;
}

std::string species_key(std::string_view name) {
    std::string out;
    bool gap = false;
    for (unsigned char c : name) {
        if (std::isalnum(c)) {
            if (gap && !out.empty()) out += '_';
            out += static_cast<char>(std::tolower(c));
            gap = false;
        } else {
            gap = true;
        }
    }
    return out;
}

nlohmann::json species_card(std::string_view name, const std::vector<std::string>& class_names) {
    const auto key = species_key(name);
    const auto& catalog = species_catalog();
    if (auto it = catalog.find(key); it != catalog.end()) {
        return {{"name", it->at("name")}, {"description", it->at("description")}, {"generic", false}};
    }
    for (const auto& c : class_names) {
        if (species_key(c) == key) {
            return {{"name", c},
                    {"description", "No description is bundled for this class. It is one of the " +
                                        std::to_string(class_names.size()) + " classes this model recognizes."},
                    {"generic", true}};
        }
    }
    throw RequestError(404, "unknown_species", "no species or class named '" + std::string(name) + "'");
}

struct InferenceServer::Impl {
    std::shared_ptr<const ModelHandle> handle;
    ServerOptions options;
    httplib::Server server;
    std::mutex bench_mu;
    std::thread thread;
    int port = -1;
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

std::size_t query_size(const httplib::Request& req, const std::string& key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const auto text = req.get_param_value(key);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw RequestError(400, "bad_request", "query parameter '" + key + "' must be a non-negative integer");
    }
    return value;
}

}  // namespace

InferenceServer::InferenceServer(std::shared_ptr<const ModelHandle> handle, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
    if (!handle) throw std::invalid_argument("server needs a model");
    impl_->handle = std::move(handle);
    impl_->options = std::move(options);
    auto& srv = impl_->server;
    Impl* self = impl_.get();

    srv.set_payload_max_length(self->options.max_upload_bytes);
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const RequestError& e) {
            send_error(res, e.status(), e.code(), e.what());
        } catch (const std::exception& e) {
            spdlog::error("request failed: {}", e.what());
            send_error(res, 500, "internal", e.what());
        } catch (...) {
            send_error(res, 500, "internal", "unknown error");
        }
    });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        switch (res.status) {
            case 404: send_error(res, 404, "not_found", "no route for " + req.method + " " + req.path); break;
            case 405: send_error(res, 405, "method_not_allowed", req.method + " is not allowed on " + req.path); break;
            case 413: send_error(res, 413, "payload_too_large", "request body exceeds the upload limit"); break;
            default: send_error(res, res.status, "http_error", "request failed with status " + std::to_string(res.status));
        }
    });

    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

    srv.Get("/classes", [self](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"classes", self->handle->class_names()}});
    });

    srv.Get(R"(/species/(.+))", [self](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, species_card(req.matches[1].str(), self->handle->class_names()));
    });

    srv.Get("/model/info", [self](const httplib::Request&, httplib::Response& res) {
        const auto& h = *self->handle;
        const auto counts = h.param_count();
        send_json(res, 200,
                  {{"architecture", h.descriptor().name},
                   {"head", std::string(to_string(h.descriptor().head))},
                   {"input_size", h.input_size()},
                   {"num_classes", h.class_names().size()},
                   {"layers", count_layers(h.descriptor())},
                   {"param_counts",
                    {{"total", counts.total}, {"trainable", counts.trainable}, {"non_trainable", counts.non_trainable}}}});
    });

    srv.Get("/bench", [self](const httplib::Request& req, httplib::Response& res) {
        const std::size_t runs = query_size(req, "runs", 100);
        const std::size_t warmup = query_size(req, "warmup", 10);
        if (runs < 1 || runs > self->options.max_bench_runs || warmup > self->options.max_bench_runs) {
            throw RequestError(400, "bad_request",
                               "runs must be in [1, " + std::to_string(self->options.max_bench_runs) +
                                   "] and warmup at most " + std::to_string(self->options.max_bench_runs));
        }
        std::lock_guard lock(self->bench_mu);
        auto body = to_json(benchmark(*self->handle, runs, warmup));
        const auto host = host_info();
        body["device"] = {{"name", host.device}, {"cpu", host.cpu}, {"os", host.os}, {"threads", host.threads}};
        body["model"] = self->handle->descriptor().name;
        send_json(res, 200, body);
    });

    srv.Post("/classify", [self](const httplib::Request& req, httplib::Response& res) {
        const std::size_t k = query_size(req, "k", kDefaultTopK);
        std::string_view bytes;
        if (req.is_multipart_form_data()) {
            auto it = req.files.find("image");
            if (it == req.files.end()) it = req.files.begin();
            if (it != req.files.end()) bytes = it->second.content;
        } else {
            bytes = req.body;
        }
        if (bytes.empty()) throw RequestError(400, "empty_body", "request carries no image bytes");
        const auto response = classify(
            *self->handle, std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()), k);
        send_json(res, 200, to_json(response));
    });
}

InferenceServer::~InferenceServer() { stop(); }

int InferenceServer::bind() {
    if (impl_->port >= 0) return impl_->port;
    const auto& o = impl_->options;
    const int port = o.port == 0 ? impl_->server.bind_to_any_port(o.host)
                                 : (impl_->server.bind_to_port(o.host, o.port) ? o.port : -1);
    if (port < 0) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
    impl_->port = port;
    return port;
}

void InferenceServer::run() {
    bind();
    spdlog::info("serving {} on http://{}:{}", impl_->handle->descriptor().name, impl_->options.host, impl_->port);
    impl_->server.listen_after_bind();
}

void InferenceServer::start() {
    bind();
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void InferenceServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int InferenceServer::port() const { return impl_->port; }

}  // namespace flora
