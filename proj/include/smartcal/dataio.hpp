#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smartcal {

/// N x K raw classifier scores with integer labels.
///
/// Logits are held as 32-bit floats: that is the on-disk precision of the
/// binary format, so a load/save cycle is bit-exact. All arithmetic on them
/// is done in double.
struct LogitSet {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<float> logits; // row-major, n * k
    std::vector<std::uint32_t> labels;

    std::span<const float> row(std::size_t i) const { return {logits.data() + i * k, k}; }
    std::span<float> row(std::size_t i) { return {logits.data() + i * k, k}; }

    /// Throws DataError if any invariant is broken (N >= 1, K >= 2, finite
    /// entries, labels in range, consistent sizes).
    void validate() const;

    /// Rows at `indices`, in the given order.
    LogitSet subset(std::span<const std::size_t> indices) const;

    friend bool operator==(const LogitSet &, const LogitSet &) = default;
};

enum class FileFormat { csv, bin };

/// csv for ".csv"/".txt", bin for everything else.
FileFormat format_from_path(const std::filesystem::path &path);

LogitSet load_logits(const std::filesystem::path &path, FileFormat format);
LogitSet load_logits(const std::filesystem::path &path);

void save_logits(const LogitSet &set, const std::filesystem::path &path, FileFormat format);
void save_logits(const LogitSet &set, const std::filesystem::path &path);

/// Plain labelled numeric table (K value columns + label column) in double
/// precision. Used for probability files.
struct LabeledTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::uint32_t> labels;
};

LabeledTable read_labeled_csv(const std::filesystem::path &path);
LabeledTable parse_labeled_csv(const std::string &text);

struct SplitSpec {
    std::optional<std::size_t> val_count;
    std::optional<double> val_fraction;
    std::uint64_t seed = 0;
    bool stratified = false;

    /// Resolved validation size for a set of `n` rows; throws on anything
    /// outside [1, n-1].
    std::size_t resolve(std::size_t n) const;
};

struct SplitIndices {
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Seeded partition of row indices; both halves are returned sorted.
SplitIndices split_indices(const LogitSet &set, const SplitSpec &spec);

std::pair<LogitSet, LogitSet> split(const LogitSet &set, const SplitSpec &spec);

/// Writes `contents` to `path` through a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path &path, const std::string &contents);

std::string read_file(const std::filesystem::path &path);

} // namespace smartcal
