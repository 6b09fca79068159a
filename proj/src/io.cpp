#include "datamark/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <png.h>

namespace datamark {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr Shape kCifarShape{3, 32, 32};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void decode_cifar_file(const std::string& path, std::vector<LabeledImage>& out) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        throw FormatError("'" + path + "': size " + std::to_string(bytes.size()) +
                          " is not a positive multiple of 3073 (stray bytes at offset " +
                          std::to_string(bytes.size() - bytes.size() % kCifarRecord) + ")");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
        if (rec[0] > 9) {
            throw FormatError("'" + path + "': record " + std::to_string(r) +
                              " has label byte " + std::to_string(rec[0]) + " > 9");
        }
        std::vector<std::uint8_t> pixels(rec + 1, rec + kCifarRecord);
        out.push_back(LabeledImage{Image(kCifarShape, std::move(pixels)), rec[0]});
    }
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_cifar10_binary(const std::string& path) {
    std::vector<LabeledImage> samples;
    if (fs::is_directory(path)) {
        bool found = false;
        for (int i = 1; i <= 5; ++i) {
            const fs::path batch = fs::path(path) / ("data_batch_" + std::to_string(i) + ".bin");
            if (!fs::exists(batch)) continue;
            decode_cifar_file(batch.string(), samples);
            found = true;
        }
        if (!found) {
            throw FormatError("no data_batch_*.bin files under '" + path + "'");
        }
    } else {
        decode_cifar_file(path, samples);
    }
    return Dataset(std::move(samples), 10);
}

void save_cifar10_binary(const Dataset& data, const std::string& file_path) {
    if (!(data.shape() == kCifarShape) || data.num_classes() != 10) {
        throw ValidationError("CIFAR-10 binary output requires shape 3x32x32 and 10 classes");
    }
    std::ofstream out(file_path, std::ios::binary);
    if (!out) throw Error("cannot open '" + file_path + "' for writing");
    for (const auto& s : data.samples()) {
        const std::uint8_t label = static_cast<std::uint8_t>(s.label);
        out.write(reinterpret_cast<const char*>(&label), 1);
        const auto px = s.image.pixels();
        out.write(reinterpret_cast<const char*>(px.data()), px.size());
    }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes) {
    const std::vector<std::uint8_t> img = read_file(images_path);
    const std::vector<std::uint8_t> lab = read_file(labels_path);

    if (img.size() < 16) {
        throw FormatError("'" + images_path + "': truncated IDX image header");
    }
    if (lab.size() < 8) {
        throw FormatError("'" + labels_path + "': truncated IDX label header");
    }
    const std::uint32_t img_magic = read_be32(img.data());
    if (img_magic != 0x00000803u) {
        std::ostringstream os;
        os << "'" << images_path << "': expected image magic 0x00000803, found 0x" << std::hex
           << img_magic;
        throw FormatError(os.str());
    }
    const std::uint32_t lab_magic = read_be32(lab.data());
    if (lab_magic != 0x00000801u) {
        std::ostringstream os;
        os << "'" << labels_path << "': expected label magic 0x00000801, found 0x" << std::hex
           << lab_magic;
        throw FormatError(os.str());
    }
    const std::uint32_t n = read_be32(img.data() + 4);
    const std::uint32_t rows = read_be32(img.data() + 8);
    const std::uint32_t cols = read_be32(img.data() + 12);
    const std::uint32_t n_labels = read_be32(lab.data() + 4);
    if (n != n_labels) {
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_labels) + " labels");
    }
    if (n == 0 || rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
        throw FormatError("IDX dimensions out of range: " + std::to_string(n) + " x " +
                          std::to_string(rows) + " x " + std::to_string(cols));
    }
    const std::size_t expected_img = 16 + static_cast<std::size_t>(n) * rows * cols;
    if (img.size() != expected_img) {
        throw FormatError("'" + images_path + "': size " + std::to_string(img.size()) +
                          " does not match header (expected " + std::to_string(expected_img) +
                          ")");
    }
    if (lab.size() != 8 + static_cast<std::size_t>(n)) {
        throw FormatError("'" + labels_path + "': size " + std::to_string(lab.size()) +
                          " does not match header (expected " + std::to_string(8 + n) + ")");
    }

    const Shape shape{1, static_cast<int>(cols), static_cast<int>(rows)};
    std::vector<LabeledImage> samples;
    samples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const int label = lab[8 + i];
        if (label >= num_classes) {
            throw FormatError("'" + labels_path + "': record " + std::to_string(i) +
                              " has label " + std::to_string(label) + " >= " +
                              std::to_string(num_classes));
        }
        const std::uint8_t* p = img.data() + 16 + static_cast<std::size_t>(i) * rows * cols;
        samples.push_back(
            LabeledImage{Image(shape, std::vector<std::uint8_t>(p, p + rows * cols)), label});
    }
    return Dataset(std::move(samples), num_classes);
}

void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path) {
    if (data.shape().channels != 1) {
        throw ValidationError("IDX output requires single-channel images");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw Error("cannot open IDX output files");
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(data.shape().height));
    write_be32(img, static_cast<std::uint32_t>(data.shape().width));
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (const auto& s : data.samples()) {
        const auto px = s.image.pixels();
        img.write(reinterpret_cast<const char*>(px.data()), px.size());
        const std::uint8_t label = static_cast<std::uint8_t>(s.label);
        lab.write(reinterpret_cast<const char*>(&label), 1);
    }
}

namespace {

Image read_png(const std::string& path, int channels) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw FormatError("'" + path + "': not a decodable PNG (" + image.message + ")");
    }
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, interleaved.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("'" + path + "': PNG decode failed (" + msg + ")");
    }
    const Shape shape{channels, static_cast<int>(image.width),
                      static_cast<int>(image.height)};
    std::vector<std::uint8_t> pixels(shape.pixel_count());
    for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
            for (int c = 0; c < channels; ++c) {
                pixels[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x] =
                    interleaved[(static_cast<std::size_t>(y) * shape.width + x) * channels + c];
            }
        }
    }
    return Image(shape, std::move(pixels));
}

void write_png(const Image& img, const std::string& path) {
    const Shape& shape = img.shape();
    if (shape.channels != 1 && shape.channels != 3) {
        throw ValidationError("PNG output requires 1 or 3 channels");
    }
    std::vector<std::uint8_t> interleaved(shape.pixel_count());
    for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
            for (int c = 0; c < shape.channels; ++c) {
                interleaved[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels +
                            c] = img.at(c, x, y);
            }
        }
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(shape.width);
    image.height = static_cast<png_uint_32>(shape.height);
    image.format = shape.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, interleaved.data(), 0, nullptr)) {
        throw Error("'" + path + "': PNG encode failed (" + std::string(image.message) + ")");
    }
}

}  // namespace

Dataset load_png_dir(const std::string& root, const std::string& labels_csv,
                     int num_classes) {
    std::ifstream csv(labels_csv);
    if (!csv) throw Error("cannot open labels CSV '" + labels_csv + "'");
    std::vector<LabeledImage> samples;
    std::optional<Shape> shape;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw FormatError(labels_csv + ":" + std::to_string(line_no) +
                              ": expected 'relative_path,label'");
        }
        const std::string rel = line.substr(0, comma);
        int label;
        try {
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw FormatError(labels_csv + ":" + std::to_string(line_no) +
                              ": label is not an integer");
        }
        if (label < 0 || label >= num_classes) {
            throw FormatError(labels_csv + ":" + std::to_string(line_no) + ": label " +
                              std::to_string(label) + " outside [0, " +
                              std::to_string(num_classes) + ")");
        }
        const std::string path = (fs::path(root) / rel).string();
        if (!shape) {
            // Channel count comes from the first image's color type.
            png_image probe;
            std::memset(&probe, 0, sizeof(probe));
            probe.version = PNG_IMAGE_VERSION;
            if (!png_image_begin_read_from_file(&probe, path.c_str())) {
                throw FormatError("'" + path + "': not a decodable PNG (" + probe.message +
                                  ")");
            }
            const int channels = (probe.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
            png_image_free(&probe);
            Image first = read_png(path, channels);
            shape = first.shape();
            samples.push_back(LabeledImage{std::move(first), label});
            continue;
        }
        Image img = read_png(path, shape->channels);
        if (!(img.shape() == *shape)) {
            throw FormatError("'" + path + "': shape " + to_string(img.shape()) +
                              " disagrees with " + to_string(*shape));
        }
        samples.push_back(LabeledImage{std::move(img), label});
    }
    if (samples.empty()) {
        throw FormatError("labels CSV '" + labels_csv + "' lists no samples");
    }
    return Dataset(std::move(samples), num_classes);
}

void save_png_dir(const Dataset& data, const std::string& root) {
    fs::create_directories(root);
    std::ofstream csv(fs::path(root) / "labels.csv");
    if (!csv) throw Error("cannot write labels.csv under '" + root + "'");
    char name[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        write_png(data[i].image, (fs::path(root) / name).string());
        csv << name << "," << data[i].label << "\n";
    }
}

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ValidationError("synthetic spec needs >= 2 classes");
    if (spec.per_class < 5) {
        throw ValidationError("synthetic spec needs >= 5 samples per class for the 80/20 split");
    }
    if (spec.noise_stddev < 0.0) throw ValidationError("noise stddev must be >= 0");

    std::vector<int> levels = spec.base_levels;
    if (levels.empty()) {
        // Evenly spaced gray levels away from the 0/255 extremes.
        for (int k = 0; k < spec.num_classes; ++k) {
            levels.push_back(30 + k * 195 / (spec.num_classes - 1));
        }
    }
    if (static_cast<int>(levels.size()) != spec.num_classes) {
        throw ValidationError("base_levels size must equal num_classes");
    }
    if (std::set<int>(levels.begin(), levels.end()).size() != levels.size()) {
        throw ValidationError("base_levels must be distinct");
    }
    for (int v : levels) {
        if (v < 0 || v > 255) throw ValidationError("base level outside [0, 255]");
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_stddev == 0.0 ? 1.0
                                                                         : spec.noise_stddev);
    const std::size_t npix = spec.shape.pixel_count();
    const int n_test = spec.per_class / 5;
    std::vector<LabeledImage> train, test;
    for (int k = 0; k < spec.num_classes; ++k) {
        for (int i = 0; i < spec.per_class; ++i) {
            std::vector<std::uint8_t> pixels(npix);
            for (std::size_t j = 0; j < npix; ++j) {
                double v = levels[k];
                if (spec.noise_stddev > 0.0) v += noise(rng);
                pixels[j] = static_cast<std::uint8_t>(std::clamp(std::llround(v), 0LL, 255LL));
            }
            LabeledImage s{Image(spec.shape, std::move(pixels)), k};
            if (i < n_test) {
                test.push_back(std::move(s));
            } else {
                train.push_back(std::move(s));
            }
        }
    }
    return {Dataset(std::move(train), spec.num_classes),
            Dataset(std::move(test), spec.num_classes)};
}

}  // namespace datamark
