#include "flora/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <thread>

#include "flora/log.hpp"

namespace flora {

namespace fs = std::filesystem;

std::vector<std::size_t> DatasetIndex::class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& s : samples) ++counts.at(s.label);
    return counts;
}

Image DatasetIndex::image(std::size_t i) const {
    const auto& s = samples.at(i);
    if (s.image) return *s.image;
    return read_image_file(s.path);
}

DatasetIndex DatasetIndex::subset(std::span<const std::size_t> indices) const {
    DatasetIndex out;
    out.class_names = class_names;
    out.root = root;
    for (std::size_t i : indices) out.samples.push_back(samples.at(i));
    return out;
}

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw std::invalid_argument("dataset root is not a directory: " + root.string());
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());

    DatasetIndex index;
    index.root = root;
    for (const auto& dir : class_dirs) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());

        std::vector<Sample> found;
        for (const auto& file : files) {
            if (!has_image_extension(file)) {
                index.excluded.push_back({file, "unsupported extension"});
                continue;
            }
            try {
                read_image_file(file);
            } catch (const ImageDecodeError& e) {
                index.excluded.push_back({file, e.what()});
                continue;
            }
            Sample s;
            s.id = fs::relative(file, root).generic_string();
            s.path = file;
            found.push_back(std::move(s));
        }
        if (found.empty()) {
            spdlog::warn("skipping class directory {}: no decodable images", dir.string());
            continue;
        }
        const std::size_t label = index.class_names.size();
        index.class_names.push_back(dir.filename().string());
        for (auto& s : found) {
            s.label = label;
            index.samples.push_back(std::move(s));
        }
    }
    for (const auto& ex : index.excluded) spdlog::warn("excluded {}: {}", ex.path.string(), ex.reason);
    if (index.class_names.size() < 2) {
        throw std::invalid_argument("dataset " + root.string() + " has " + std::to_string(index.class_names.size()) +
                                    " usable class directories, need at least 2");
    }
    return index;
}

void write_exclusions(const DatasetIndex& index, const fs::path& path) {
    std::ofstream out(path);
    for (const auto& ex : index.excluded) out << ex.path.string() << '\t' << ex.reason << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

Split split_dataset(const DatasetIndex& index, std::uint64_t seed, double train_frac, double val_frac) {
    if (!(train_frac > 0 && val_frac > 0 && train_frac + val_frac < 1)) {
        throw std::invalid_argument("split fractions must be positive with train + validation < 1");
    }
    std::vector<std::vector<std::size_t>> per_class(index.num_classes());
    for (std::size_t i = 0; i < index.samples.size(); ++i) per_class.at(index.samples[i].label).push_back(i);

    Split split;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto& members = per_class[c];
        const std::size_t n = members.size();
        const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n) + 1e-9));
        const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n) + 1e-9));
        if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
            throw std::invalid_argument("class '" + index.class_names[c] + "' has " + std::to_string(n) +
                                        " samples, too few to populate train, validation and test");
        }
        Rng rng(Rng::derive(seed, c));
        rng.shuffle(std::span<std::size_t>(members));
        split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
        split.validation.insert(split.validation.end(), members.begin() + n_train, members.begin() + n_train + n_val);
        split.test.insert(split.test.end(), members.begin() + n_train + n_val, members.end());
    }
    return split;
}

bool AugmentConfig::is_identity() const {
    return rotation_range == 0 && width_shift_range == 0 && height_shift_range == 0 && shear_range == 0 &&
           zoom_range == 0;
}

void AugmentConfig::validate() const {
    for (double v : {rotation_range, width_shift_range, height_shift_range, shear_range, zoom_range}) {
        if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("augmentation ranges must be finite and >= 0");
    }
    if (zoom_range >= 1) throw std::invalid_argument("zoom_range must be < 1");
}

Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& config, Rng& rng) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw std::invalid_argument("augment expects an [H, W, 3] image, got " + shape_str(image.shape()));
    }
    constexpr double kDeg = std::numbers::pi / 180.0;
    const double theta = rng.uniform(-config.rotation_range, config.rotation_range) * kDeg;
    const double h = static_cast<double>(image.dim(0));
    const double w = static_cast<double>(image.dim(1));
    const double ty = rng.uniform(-config.height_shift_range, config.height_shift_range) * h;
    const double tx = rng.uniform(-config.width_shift_range, config.width_shift_range) * w;
    const double shear = rng.uniform(-config.shear_range, config.shear_range) * kDeg;
    const double zoom = rng.uniform(1 - config.zoom_range, 1 + config.zoom_range);
    if (config.is_identity()) return image;

    // Output -> input map: rotation * shift * shear * zoom about the image center.
    const double c = std::cos(theta), s = std::sin(theta);
    const double a00 = zoom, a01 = -std::sin(shear) * zoom;
    const double a10 = 0, a11 = std::cos(shear) * zoom;
    const double cy = (h - 1) / 2, cx = (w - 1) / 2;

    const std::size_t H = image.dim(0), W = image.dim(1);
    Tensor<float> out(image.shape());
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double ux = a00 * dx + a01 * dy + tx;
            const double uy = a10 * dx + a11 * dy + ty;
            const double sx = std::clamp(c * ux - s * uy + cx, 0.0, w - 1);
            const double sy = std::clamp(s * ux + c * uy + cy, 0.0, h - 1);
            const auto x0 = static_cast<std::size_t>(sx);
            const auto y0 = static_cast<std::size_t>(sy);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const auto fx = static_cast<float>(sx - static_cast<double>(x0));
            const auto fy = static_cast<float>(sy - static_cast<double>(y0));
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const float p00 = image[(y0 * W + x0) * 3 + ch], p01 = image[(y0 * W + x1) * 3 + ch];
                const float p10 = image[(y1 * W + x0) * 3 + ch], p11 = image[(y1 * W + x1) * 3 + ch];
                const float top = p00 + (p01 - p00) * fx;
                const float bottom = p10 + (p11 - p10) * fx;
                out[(y * W + x) * 3 + ch] = std::clamp(top + (bottom - top) * fy, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

BatchLoader::BatchLoader(const DatasetIndex& index, std::vector<std::size_t> indices, BatchConfig config)
    : index_(&index), indices_(std::move(indices)), config_(std::move(config)) {
    if (indices_.empty()) throw std::invalid_argument("batch loader needs at least one sample");
    if (config_.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (config_.augment) config_.augment->validate();
    for (std::size_t i : indices_) {
        if (i >= index.samples.size()) throw std::out_of_range("sample index out of range");
    }
}

std::size_t BatchLoader::num_batches() const {
    return (indices_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::vector<std::size_t> BatchLoader::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order = indices_;
    if (config_.shuffle) {
        Rng rng(Rng::derive(config_.seed, epoch));
        rng.shuffle(std::span<std::size_t>(order));
    }
    return order;
}

Batch BatchLoader::make_batch(std::span<const std::size_t> order, std::size_t epoch) const {
    const std::size_t n = order.size(), size = config_.image_size, k = index_->num_classes();
    Batch batch;
    batch.images = Tensor<float>({n, size, size, 3});
    batch.labels = Tensor<float>({n, k});
    batch.samples.assign(order.begin(), order.end());
    const std::size_t stride = size * size * 3;
    const std::uint64_t epoch_seed = Rng::derive(config_.seed ^ 0xa5a5a5a5ULL, epoch);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = order[i];
        Tensor<float> img = image_to_tensor(index_->image(idx), size, size);
        if (config_.augment) {
            Rng rng(Rng::derive(epoch_seed, idx));
            img = augment(img, *config_.augment, rng);
        }
        std::copy(img.data().begin(), img.data().end(), batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
        batch.labels[i * k + index_->samples[idx].label] = 1.0f;
    }
    return batch;
}

Batch BatchLoader::batch(std::size_t epoch, std::size_t b) const {
    if (b >= num_batches()) throw std::out_of_range("batch index out of range");
    const auto order = epoch_order(epoch);
    const std::size_t begin = b * config_.batch_size;
    const std::size_t end = std::min(begin + config_.batch_size, order.size());
    return make_batch(std::span<const std::size_t>(order).subspan(begin, end - begin), epoch);
}

void BatchLoader::for_each_batch(std::size_t epoch, const std::function<void(Batch&)>& fn) const {
    const auto order = epoch_order(epoch);
    const std::size_t count = num_batches();
    auto slice = [&](std::size_t b) {
        const std::size_t begin = b * config_.batch_size;
        const std::size_t end = std::min(begin + config_.batch_size, order.size());
        return std::span<const std::size_t>(order).subspan(begin, end - begin);
    };
    if (config_.workers <= 1 || count == 1) {
        for (std::size_t b = 0; b < count; ++b) {
            Batch batch = make_batch(slice(b), epoch);
            fn(batch);
        }
        return;
    }

    const std::size_t capacity = 2 * config_.workers;
    std::mutex mu;
    std::condition_variable ready, space;
    std::map<std::size_t, Batch> done;
    std::size_t next_claim = 0, consumed = 0;
    bool stop = false;
    std::exception_ptr failure;

    auto worker = [&] {
        while (true) {
            std::size_t b;
            {
                std::unique_lock lock(mu);
                space.wait(lock, [&] { return stop || next_claim >= count || next_claim < consumed + capacity; });
                if (stop || next_claim >= count) return;
                b = next_claim++;
            }
            try {
                Batch batch = make_batch(slice(b), epoch);
                std::lock_guard lock(mu);
                done.emplace(b, std::move(batch));
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                stop = true;
            }
            ready.notify_all();
            space.notify_all();
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < config_.workers; ++i) threads.emplace_back(worker);

    try {
        for (std::size_t b = 0; b < count; ++b) {
            Batch batch;
            {
                std::unique_lock lock(mu);
                ready.wait(lock, [&] { return stop || done.count(b) > 0; });
                if (stop && done.count(b) == 0) break;
                batch = std::move(done.at(b));
                done.erase(b);
                consumed = b + 1;
            }
            space.notify_all();
            fn(batch);
        }
    } catch (...) {
        {
            std::lock_guard lock(mu);
            stop = true;
            if (!failure) failure = std::current_exception();
        }
        space.notify_all();
    }
    {
        std::lock_guard lock(mu);
        stop = true;
    }
    space.notify_all();
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace {

std::array<double, 3> class_colour(std::size_t c, std::size_t k) {
    // Evenly spaced hues, saturation 0.9, value 0.95.
    const double hue = 6.0 * static_cast<double>(c) / static_cast<double>(k);
    const double v = 0.95, s = 0.9;
    const double f = hue - std::floor(hue);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (static_cast<int>(hue) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

}  // namespace

DatasetIndex synth_dataset(std::size_t num_classes, std::size_t per_class, std::size_t image_size,
                           std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("synth_dataset needs at least 2 classes");
    if (per_class < 1) throw std::invalid_argument("synth_dataset needs at least 1 image per class");
    if (image_size < 4) throw std::invalid_argument("synth_dataset image size must be >= 4");

    DatasetIndex index;
    index.root = "synth";
    const int digits = num_classes > 100 ? 3 : 2;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::string num = std::to_string(c);
        num.insert(0, static_cast<std::size_t>(std::max(0, digits - static_cast<int>(num.size()))), '0');
        index.class_names.push_back("synth_" + num);
    }
    const double period = std::max(4.0, static_cast<double>(image_size) / 4.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double angle = std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
        const double ca = std::cos(angle), sa = std::sin(angle);
        const auto colour = class_colour(c, num_classes);
        for (std::size_t n = 0; n < per_class; ++n) {
            Rng rng(Rng::derive(seed, c * per_class + n));
            const double phase = rng.uniform(0, 2 * std::numbers::pi);
            auto img = std::make_shared<Image>();
            img->height = img->width = image_size;
            img->rgb.resize(image_size * image_size * 3);
            for (std::size_t y = 0; y < image_size; ++y) {
                for (std::size_t x = 0; x < image_size; ++x) {
                    const double u = static_cast<double>(x) * ca + static_cast<double>(y) * sa;
                    const double stripe = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * u / period + phase);
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        const double v = stripe * colour[ch] + (1 - stripe) * 0.1 + rng.uniform(-0.08, 0.08);
                        img->rgb[(y * image_size + x) * 3 + ch] =
                            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                    }
                }
            }
            Sample s;
            s.id = "synth/" + index.class_names[c] + "/" + std::to_string(n);
            s.image = std::move(img);
            s.label = c;
            index.samples.push_back(std::move(s));
        }
    }
    return index;
}

std::optional<std::array<std::size_t, 3>> parse_synth_spec(std::string_view spec) {
    constexpr std::string_view prefix = "synth:";
    if (spec.substr(0, prefix.size()) != prefix) return std::nullopt;
    spec.remove_prefix(prefix.size());
    std::array<std::size_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t end = i < 2 ? spec.find('x') : spec.size();
        if (end == std::string_view::npos) return std::nullopt;
        const auto part = spec.substr(0, end);
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out[i]);
        if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) return std::nullopt;
        spec.remove_prefix(i < 2 ? end + 1 : end);
    }
    return out;
}

void write_dataset_pngs(const DatasetIndex& index, const fs::path& root) {
    std::vector<std::size_t> counter(index.num_classes(), 0);
    for (const auto& name : index.class_names) fs::create_directories(root / name);
    for (std::size_t i = 0; i < index.samples.size(); ++i) {
        const auto& s = index.samples[i];
        const auto file = root / index.class_names[s.label] / (std::to_string(counter[s.label]++) + ".png");
        write_png(file, index.image(i));
    }
}

}  // namespace flora
