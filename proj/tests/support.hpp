#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <gtest/gtest.h>

#include "vsalign/datasets.hpp"
#include "vsalign/rng.hpp"

namespace vsalign::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = "vsalign_";
        if (info) name += std::string(info->test_suite_name()) + "_" + info->name() + "_";
        name += std::to_string(::getpid()) + "_" + std::to_string(counter++);
        for (char& c : name)
            if (c == '/') c = '_';
        path_ = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small well-separated synthetic config for fast tests.
inline SynthConfig small_synth() {
    SynthConfig c;
    c.num_base_classes = 8;
    c.num_val_classes = 4;
    c.num_novel_classes = 8;
    c.examples_per_class = 24;
    c.image = {8, 8, 1};
    c.latent_dim = 8;
    c.embedding_dim = 16;
    return c;
}

/// Dataset of `per_class` random images for each listed (class, split).
inline Dataset random_dataset(const std::vector<std::pair<int, Split>>& classes, int per_class, ImageShape shape,
                              std::uint64_t seed) {
    Rng rng(seed);
    DatasetSplit split;
    std::vector<int> labels;
    for (auto [c, s] : classes) {
        split.classes(s).insert(c);
        for (int i = 0; i < per_class; ++i) labels.push_back(c);
    }
    Matrix images(Index(labels.size()), shape.size());
    for (Index i = 0; i < images.size(); ++i) images.data()[i] = uniform01(rng);
    return Dataset(shape, std::move(images), std::move(labels), std::move(split));
}

}  // namespace vsalign::testing
