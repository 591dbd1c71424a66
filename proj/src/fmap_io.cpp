#include "pkd/fmap_io.hpp"

#include "pkd/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace pkd {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'P', '1'};

std::uint32_t load_u32(const std::string& bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]);
    return v;
}

void store_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw FormatError(pos_, std::string("truncated file: expected ") + what + " (" + std::to_string(n) +
                                        " bytes, " + std::to_string(remaining()) + " left)");
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto v = load_u32(bytes_, pos_);
        pos_ += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = load_u32(bytes_, pos_);
        pos_ += 4;
        return std::bit_cast<float>(bits);
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

FeaturePyramid decode_fmap(const std::string& bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(0, "bad magic, expected \"FMP1\"");
    r.u32("magic"); // skip
    const std::uint32_t levels = r.u32("level count");
    if (levels == 0) throw FormatError(4, "level count must be >= 1");

    std::vector<FeatureMap> maps;
    for (std::uint32_t l = 0; l < levels; ++l) {
        const std::size_t header_at = r.offset();
        Shape4 s;
        s.batch = r.u32("level header");
        s.channels = r.u32("level header");
        s.height = r.u32("level header");
        s.width = r.u32("level header");
        if (s.batch == 0 || s.channels == 0 || s.height == 0 || s.width == 0)
            throw FormatError(header_at, "level " + std::to_string(l) + " has a zero dimension (" + to_string(s) + ")");
        if (!maps.empty() && s.batch != maps.front().batch())
            throw FormatError(header_at, "level " + std::to_string(l) + " batch " + std::to_string(s.batch) +
                                             " differs from level 0 batch " + std::to_string(maps.front().batch()));
        const std::size_t count = s.count();
        if (count > r.remaining() / 4) r.need(count * 4, "level values");
        std::vector<double> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t at = r.offset();
            const float v = r.f32();
            if (!std::isfinite(v))
                throw FormatError(at, "non-finite value at level " + std::to_string(l) + ", index " + std::to_string(i));
            values[i] = static_cast<double>(v);
        }
        if (!maps.empty()) {
            const auto& prev = maps.back().shape();
            if (s.height > prev.height || s.width > prev.width)
                throw FormatError(header_at, "level " + std::to_string(l) + " is spatially larger than level " +
                                                 std::to_string(l - 1));
        }
        maps.emplace_back(s, std::move(values));
    }
    if (r.remaining() != 0)
        throw FormatError(r.offset(), std::to_string(r.remaining()) + " trailing bytes after the last level");
    return FeaturePyramid(std::move(maps));
}

std::string encode_fmap(const FeaturePyramid& pyr) {
    if (pyr.empty()) throw ArgumentError("cannot encode an empty pyramid");
    std::string out(kMagic, 4);
    store_u32(out, static_cast<std::uint32_t>(pyr.size()));
    for (std::size_t l = 0; l < pyr.size(); ++l) {
        const FeatureMap& m = pyr.level(l);
        store_u32(out, static_cast<std::uint32_t>(m.batch()));
        store_u32(out, static_cast<std::uint32_t>(m.channels()));
        store_u32(out, static_cast<std::uint32_t>(m.height()));
        store_u32(out, static_cast<std::uint32_t>(m.width()));
        const auto values = m.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = values[i];
            if (!std::isfinite(v) || std::abs(v) > static_cast<double>(std::numeric_limits<float>::max()))
                throw ArgumentError("value at level " + std::to_string(l) + ", index " + std::to_string(i) +
                                    " is not representable as binary32");
            store_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error reading " + path.string());
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("error writing " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string());
    }
}

FeaturePyramid read_fmap(const std::filesystem::path& path) { return decode_fmap(read_file(path)); }

void write_fmap(const std::filesystem::path& path, const FeaturePyramid& pyr) {
    write_file_atomic(path, encode_fmap(pyr));
}

std::string encode_pgm(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != width * height) throw ArgumentError("PGM pixel count does not match size");
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

} // namespace pkd
