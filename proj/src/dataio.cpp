#include "smartcal/dataio.hpp"

#include "smartcal/errors.hpp"
#include "smartcal/rng.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace smartcal {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'M', 'L', 'G'};
constexpr std::uint32_t kBinaryVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 4;

std::string at_row(std::size_t row)
{
    return " at row " + std::to_string(row);
}

template <typename U>
void put_le(std::string &out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char *p)
{
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        value |= static_cast<U>(p[i]) << (8 * i);
    return value;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return fields;
}

double parse_double(std::string_view field, std::size_t row)
{
    if (!field.empty() && field.front() == '+')
        field.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec == std::errc::result_out_of_range)
        throw DataError("non-finite value" + at_row(row));
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw DataError("malformed number '" + std::string(field) + "'" + at_row(row));
    if (!std::isfinite(value))
        throw DataError("non-finite value" + at_row(row));
    return value;
}

std::uint32_t parse_label(std::string_view field, std::size_t row, std::size_t k)
{
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw DataError("malformed label '" + std::string(field) + "'" + at_row(row));
    if (value < 0 || static_cast<unsigned long long>(value) >= k)
        throw DataError("label out of range" + at_row(row));
    return static_cast<std::uint32_t>(value);
}

std::string format_float(float v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return {buf, res.ptr};
}

LogitSet decode_binary(const std::string &bytes)
{
    const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
    if (bytes.size() < kHeaderSize)
        throw DataError("truncated binary header");
    if (std::memcmp(p, kMagic, 4) != 0)
        throw DataError("bad magic, not a logit file");
    const auto version = get_le<std::uint32_t>(p + 4);
    if (version != kBinaryVersion)
        throw DataError("unsupported binary version " + std::to_string(version));
    const auto n = get_le<std::uint64_t>(p + 8);
    const auto k = get_le<std::uint32_t>(p + 16);
    if (n == 0)
        throw DataError("empty dataset");
    if (k < 2)
        throw DataError("need at least 2 classes, got " + std::to_string(k));
    const std::uint64_t cells = n * k;
    if (cells / k != n || bytes.size() - kHeaderSize != cells * 4 + n * 4)
        throw DataError("binary payload size does not match header");

    LogitSet set;
    set.n = static_cast<std::size_t>(n);
    set.k = k;
    set.logits.resize(set.n * set.k);
    set.labels.resize(set.n);
    const unsigned char *q = p + kHeaderSize;
    for (std::size_t i = 0; i < set.n; ++i) {
        for (std::size_t j = 0; j < set.k; ++j, q += 4) {
            const float v = std::bit_cast<float>(get_le<std::uint32_t>(q));
            if (!std::isfinite(v))
                throw DataError("non-finite value" + at_row(i));
            set.logits[i * set.k + j] = v;
        }
    }
    for (std::size_t i = 0; i < set.n; ++i, q += 4) {
        set.labels[i] = get_le<std::uint32_t>(q);
        if (set.labels[i] >= set.k)
            throw DataError("label out of range" + at_row(i));
    }
    return set;
}

std::string encode_binary(const LogitSet &set)
{
    std::string out;
    out.reserve(kHeaderSize + set.logits.size() * 4 + set.labels.size() * 4);
    out.append(kMagic, 4);
    put_le<std::uint32_t>(out, kBinaryVersion);
    put_le<std::uint64_t>(out, set.n);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.k));
    for (float v : set.logits)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    for (std::uint32_t l : set.labels)
        put_le<std::uint32_t>(out, l);
    return out;
}

std::string encode_csv(const LogitSet &set)
{
    std::string out = "# " + std::to_string(set.k) + " logits,label\n";
    for (std::size_t i = 0; i < set.n; ++i) {
        for (float v : set.row(i)) {
            out += format_float(v);
            out += ',';
        }
        out += std::to_string(set.labels[i]);
        out += '\n';
    }
    return out;
}

} // namespace

void LogitSet::validate() const
{
    if (n == 0)
        throw DataError("empty dataset");
    if (k < 2)
        throw DataError("need at least 2 classes, got " + std::to_string(k));
    if (logits.size() != n * k || labels.size() != n)
        throw DataError("logit/label sizes do not match N x K");
    for (std::size_t i = 0; i < n; ++i) {
        for (float v : row(i))
            if (!std::isfinite(v))
                throw DataError("non-finite value" + at_row(i));
        if (labels[i] >= k)
            throw DataError("label out of range" + at_row(i));
    }
}

LogitSet LogitSet::subset(std::span<const std::size_t> indices) const
{
    LogitSet out;
    out.n = indices.size();
    out.k = k;
    out.logits.reserve(out.n * k);
    out.labels.reserve(out.n);
    for (std::size_t idx : indices) {
        const auto r = row(idx);
        out.logits.insert(out.logits.end(), r.begin(), r.end());
        out.labels.push_back(labels[idx]);
    }
    return out;
}

FileFormat format_from_path(const fs::path &path)
{
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return (ext == ".csv" || ext == ".txt") ? FileFormat::csv : FileFormat::bin;
}

std::string read_file(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path &path, const std::string &contents)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write " + path.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw DataError("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot move output into place: " + path.string());
    }
}

LabeledTable parse_labeled_csv(const std::string &text)
{
    LabeledTable table;
    std::size_t row = 0;
    bool first_line = true;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos)
            eol = text.size();
        const std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
        pos = eol + 1;
        if (first_line && !line.empty() && line.front() == '#') {
            first_line = false;
            continue;
        }
        first_line = false;
        if (line.empty())
            continue;

        const auto fields = split_fields(line);
        if (fields.size() < 3)
            throw DataError("row needs at least 2 values and a label" + at_row(row));
        if (table.cols == 0)
            table.cols = fields.size() - 1;
        else if (fields.size() - 1 != table.cols)
            throw DataError("malformed row width " + std::to_string(fields.size()) + ", expected " +
                            std::to_string(table.cols + 1) + at_row(row));
        for (std::size_t j = 0; j < table.cols; ++j)
            table.values.push_back(parse_double(fields[j], row));
        table.labels.push_back(parse_label(fields.back(), row, table.cols));
        ++row;
    }
    table.rows = row;
    if (table.rows == 0)
        throw DataError("empty dataset");
    return table;
}

LabeledTable read_labeled_csv(const fs::path &path)
{
    return parse_labeled_csv(read_file(path));
}

LogitSet load_logits(const fs::path &path, FileFormat format)
{
    const std::string bytes = read_file(path);
    if (format == FileFormat::bin)
        return decode_binary(bytes);

    const LabeledTable table = parse_labeled_csv(bytes);
    LogitSet set;
    set.n = table.rows;
    set.k = table.cols;
    set.labels = table.labels;
    set.logits.resize(table.values.size());
    for (std::size_t idx = 0; idx < table.values.size(); ++idx) {
        const auto v = static_cast<float>(table.values[idx]);
        if (!std::isfinite(v))
            throw DataError("value overflows 32-bit float" + at_row(idx / set.k));
        set.logits[idx] = v;
    }
    return set;
}

LogitSet load_logits(const fs::path &path)
{
    return load_logits(path, format_from_path(path));
}

void save_logits(const LogitSet &set, const fs::path &path, FileFormat format)
{
    set.validate();
    write_file_atomic(path, format == FileFormat::bin ? encode_binary(set) : encode_csv(set));
}

void save_logits(const LogitSet &set, const fs::path &path)
{
    save_logits(set, path, format_from_path(path));
}

std::size_t SplitSpec::resolve(std::size_t n) const
{
    if (val_count && val_fraction)
        throw UsageError("give either a validation count or a fraction, not both");
    std::size_t count = 0;
    if (val_count) {
        count = *val_count;
    } else if (val_fraction) {
        if (!(*val_fraction > 0.0 && *val_fraction < 1.0))
            throw UsageError("validation fraction must lie in (0, 1)");
        count = static_cast<std::size_t>(std::llround(*val_fraction * static_cast<double>(n)));
    } else {
        throw UsageError("validation size not specified");
    }
    if (count < 1 || count >= n)
        throw UsageError("validation size " + std::to_string(count) + " must lie in [1, " +
                         std::to_string(n > 0 ? n - 1 : 0) + "]");
    return count;
}

SplitIndices split_indices(const LogitSet &set, const SplitSpec &spec)
{
    const std::size_t n = set.n;
    const std::size_t val_count = spec.resolve(n);
    Rng rng(spec.seed);
    SplitIndices out;

    if (!spec.stratified) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i)
            order[i] = i;
        rng.shuffle(std::span<std::size_t>(order));
        out.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
        out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());
    } else {
        // Per-class quotas by largest remainder; ties go to the lower class.
        std::map<std::uint32_t, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < n; ++i)
            by_class[set.labels[i]].push_back(i);
        struct Quota {
            std::uint32_t label;
            std::size_t take;
            double remainder;
        };
        std::vector<Quota> quotas;
        std::size_t assigned = 0;
        for (const auto &[label, members] : by_class) {
            const double exact = static_cast<double>(val_count) * static_cast<double>(members.size()) /
                                 static_cast<double>(n);
            const auto take = static_cast<std::size_t>(std::floor(exact));
            quotas.push_back({label, take, exact - static_cast<double>(take)});
            assigned += take;
        }
        std::vector<std::size_t> rank(quotas.size());
        for (std::size_t i = 0; i < rank.size(); ++i)
            rank[i] = i;
        std::stable_sort(rank.begin(), rank.end(),
                         [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
        for (std::size_t r = 0; assigned < val_count; r = (r + 1) % rank.size()) {
            auto &q = quotas[rank[r]];
            if (q.take < by_class[q.label].size()) {
                ++q.take;
                ++assigned;
            }
        }
        for (const auto &q : quotas) {
            auto members = by_class[q.label];
            rng.shuffle(std::span<std::size_t>(members));
            out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q.take));
            out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(q.take), members.end());
        }
    }
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::pair<LogitSet, LogitSet> split(const LogitSet &set, const SplitSpec &spec)
{
    set.validate();
    const SplitIndices idx = split_indices(set, spec);
    return {set.subset(idx.val), set.subset(idx.test)};
}

} // namespace smartcal
