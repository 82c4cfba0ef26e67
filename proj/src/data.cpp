#include "marglik/data.hpp"

#include "marglik/nn.hpp"
#include "marglik/rng.hpp"

#include <cmath>
#include <fstream>

namespace marglik {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kKeyX = 0x11;
constexpr std::uint64_t kKeyNoise = 0x22;
constexpr std::uint64_t kKeyClass = 0x33;
constexpr std::uint64_t kKeyAngle = 0x44;
constexpr std::uint64_t kKeySubset = 0x55;

int test_count(int n) { return static_cast<int>(std::lround(n / 4.0)); }

void fill_split(Dataset& ds, int n_train, int n_test) {
    for (int i = 0; i < n_train; ++i) ds.train_idx.push_back(i);
    for (int i = 0; i < n_test; ++i) ds.test_idx.push_back(n_train + i);
}
}  // namespace

LabeledData Dataset::split(const std::vector<int>& idx) const {
    LabeledData out;
    out.x.resize(static_cast<long>(idx.size()), inputs.cols());
    if (!classification())
        out.y.resize(static_cast<long>(idx.size()), targets_real.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.x.row(static_cast<long>(i)) = inputs.row(idx[i]);
        if (classification())
            out.labels.push_back(targets_class[static_cast<std::size_t>(idx[i])]);
        else
            out.y.row(static_cast<long>(i)) = targets_real.row(idx[i]);
    }
    return out;
}

Dataset gen_sinusoid(int n, double noise_sd, std::uint64_t seed) {
    if (n < 1) throw MarglikError("gen_sinusoid: n must be >= 1");
    const int n_test = test_count(n);
    const int total = n + n_test;
    Dataset ds;
    ds.inputs.resize(total, 1);
    ds.targets_real.resize(total, 1);
    for (int i = 0; i < total; ++i) {
        const double x = uniform01(seed, kKeyX, static_cast<std::uint64_t>(i));
        ds.inputs(i, 0) = x;
        ds.targets_real(i, 0) =
            std::sin(2.0 * kPi * x) +
            noise_sd * gauss(seed, kKeyNoise, static_cast<std::uint64_t>(i));
    }
    fill_split(ds, n, n_test);
    return ds;
}

Dataset gen_blobs(int n, int classes, std::uint64_t seed) {
    return gen_rotated_blobs(n, classes, 0.0, seed);
}

Dataset gen_rotated_blobs(int n, int classes, double max_angle, std::uint64_t seed) {
    if (n < 1 || classes < 1) throw MarglikError("gen_blobs: n and classes must be >= 1");
    const int n_test = test_count(n);
    const int total = n + n_test;
    Dataset ds;
    ds.inputs.resize(total, 2);
    ds.targets_class.resize(static_cast<std::size_t>(total));
    constexpr double kSd = 0.25;
    for (int i = 0; i < total; ++i) {
        const int k = static_cast<int>(keyed_hash(seed, kKeyClass,
                                                  static_cast<std::uint64_t>(i)) %
                                       static_cast<std::uint64_t>(classes));
        // centers at distinct radii so rotation preserves the class signal
        const double radius = 1.0 + static_cast<double>(k);
        const double phi = 2.0 * kPi * static_cast<double>(k) / classes;
        double px = radius * std::cos(phi) +
                    kSd * gauss(seed, kKeyX, static_cast<std::uint64_t>(i), 0);
        double py = radius * std::sin(phi) +
                    kSd * gauss(seed, kKeyX, static_cast<std::uint64_t>(i), 1);
        if (max_angle != 0.0) {
            const double theta =
                max_angle * uniform_sym(seed, kKeyAngle, static_cast<std::uint64_t>(i));
            const double cs = std::cos(theta), sn = std::sin(theta);
            const double rx = cs * px - sn * py;
            const double ry = sn * px + cs * py;
            px = rx;
            py = ry;
        }
        ds.inputs(i, 0) = px;
        ds.inputs(i, 1) = py;
        ds.targets_class[static_cast<std::size_t>(i)] = k;
    }
    fill_split(ds, n, n_test);
    return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw Truncated(path + ": truncated header");
    return (static_cast<std::uint32_t>(buf[0]) << 24) |
           (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

Dataset load_idx_mnist(const std::string& images_path, const std::string& labels_path,
                       int subset, std::uint64_t seed, double max_angle) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw Truncated(images_path + ": cannot open");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw Truncated(labels_path + ": cannot open");

    if (read_be32(img, images_path) != 0x00000803u)
        throw BadMagic(images_path + ": bad IDX image magic");
    if (read_be32(lab, labels_path) != 0x00000801u)
        throw BadMagic(labels_path + ": bad IDX label magic");

    const std::uint32_t n_images = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    const std::uint32_t n_labels = read_be32(lab, labels_path);
    if (n_images != n_labels)
        throw CountMismatch(images_path + " has " + std::to_string(n_images) +
                            " images but " + labels_path + " has " +
                            std::to_string(n_labels) + " labels");
    if (subset < 0 || static_cast<std::uint32_t>(subset) > n_images)
        throw CountMismatch("subset " + std::to_string(subset) + " exceeds count " +
                            std::to_string(n_images));

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> raw(pixels * n_images);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(raw.size())))
        throw Truncated(images_path + ": truncated pixel data");
    std::vector<unsigned char> raw_labels(n_labels);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<long>(raw_labels.size())))
        throw Truncated(labels_path + ": truncated label data");

    // sample without replacement
    const std::vector<int> order =
        shuffled_indices(static_cast<int>(n_images), keyed_hash(seed, kKeySubset));

    const int n_test = test_count(subset);
    const int total = std::min<int>(subset + n_test, static_cast<int>(n_images));
    Dataset ds;
    ds.inputs.resize(total, static_cast<long>(pixels));
    ds.targets_class.resize(static_cast<std::size_t>(total));
    Transformation rot{TransformKind::rotation_image, Vector::Ones(1)};
    for (int i = 0; i < total; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        Vector x(static_cast<long>(pixels));
        for (std::size_t p = 0; p < pixels; ++p)
            x[static_cast<long>(p)] =
                raw[static_cast<std::size_t>(src) * pixels + p] / 255.0;
        if (max_angle != 0.0) {
            // transform() maps eps in [-1,1] to eta*eps*pi; scale accordingly
            rot.eta[0] = max_angle / kPi;
            Vector eps(1);
            eps[0] = uniform_sym(seed, kKeyAngle, static_cast<std::uint64_t>(i));
            x = transform(rot, x, eps);
        }
        ds.inputs.row(i) = x.transpose();
        ds.targets_class[static_cast<std::size_t>(i)] =
            static_cast<int>(raw_labels[static_cast<std::size_t>(src)]);
    }
    fill_split(ds, std::min(subset, total), total - std::min(subset, total));
    return ds;
}

}  // namespace marglik
