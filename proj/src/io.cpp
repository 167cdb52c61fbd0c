#include "fedsparse/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace fedsparse::io {

namespace {

constexpr char kWeightsMagic[5] = {'F', 'S', 'N', 'N', '1'};
constexpr char kDatasetMagic[5] = {'F', 'S', 'T', 'S', '1'};

class Writer {
  public:
    explicit Writer(std::vector<uint8_t>& out) : out_(out) {}
    void bytes(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void f64s(std::span<const double> v) { bytes(v.data(), v.size() * 8); }

  private:
    std::vector<uint8_t>& out_;
};

class Reader {
  public:
    explicit Reader(std::span<const uint8_t> data) : data_(data) {}
    void bytes(void* p, size_t n) {
        if (pos_ + n > data_.size()) throw std::runtime_error("truncated blob");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    void f64s(std::span<double> v) { bytes(v.data(), v.size() * 8); }
    bool done() const { return pos_ == data_.size(); }

  private:
    std::span<const uint8_t> data_;
    size_t pos_ = 0;
};

void check_magic(Reader& r, const char (&magic)[5], const char* what) {
    char got[5];
    r.bytes(got, 5);
    if (std::memcmp(got, magic, 5) != 0)
        throw std::runtime_error(std::string("bad magic for ") + what);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace

std::vector<uint8_t> encode_weights(const nn::MlpWeights& net) {
    std::vector<uint8_t> out;
    Writer w(out);
    w.bytes(kWeightsMagic, 5);
    w.u32(static_cast<uint32_t>(net.layers.size()));
    for (const nn::Layer& l : net.layers) {
        w.u32(static_cast<uint32_t>(l.out_dim()));
        w.u32(static_cast<uint32_t>(l.in_dim()));
        w.u8(static_cast<uint8_t>(l.act));
        w.f64s(l.W.a);
        w.f64s(l.b);
    }
    return out;
}

nn::MlpWeights decode_weights(std::span<const uint8_t> blob) {
    Reader r(blob);
    check_magic(r, kWeightsMagic, "weights");
    uint32_t count = r.u32();
    nn::MlpWeights net;
    net.layers.reserve(count);
    for (uint32_t k = 0; k < count; ++k) {
        uint32_t out = r.u32();
        uint32_t in = r.u32();
        uint8_t act = r.u8();
        if (out == 0 || in == 0 || out > (1u << 20) || in > (1u << 20))
            throw std::runtime_error("implausible layer dimensions");
        if (act > 2) throw std::runtime_error("unknown activation tag");
        nn::Layer l;
        l.W = nn::Matrix(static_cast<int>(out), static_cast<int>(in));
        l.b.assign(out, 0.0);
        l.act = static_cast<nn::Activation>(act);
        r.f64s(l.W.a);
        r.f64s(l.b);
        net.layers.push_back(std::move(l));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes in weights blob");
    nn::validate_weights(net);
    return net;
}

void save_weights(const std::string& path, const nn::MlpWeights& net) {
    write_file(path, encode_weights(net));
}

nn::MlpWeights load_weights(const std::string& path) {
    return decode_weights(read_file(path));
}

void save_dataset(const std::string& path, const ts::Dataset& ds) {
    std::vector<uint8_t> out;
    Writer w(out);
    w.bytes(kDatasetMagic, 5);
    w.u32(static_cast<uint32_t>(ds.nf));
    w.u32(static_cast<uint32_t>(ds.w));
    w.u32(static_cast<uint32_t>(ds.windows.size()));
    for (const ts::SampleWindow& win : ds.windows) {
        w.f64s(win.dense.a);
        w.f64s(win.sparse.a);
        w.bytes(win.mask.data(), win.mask.size());
        w.f64(win.label);
        w.u32(static_cast<uint32_t>(win.t_index));
    }
    write_file(path, out);
}

ts::Dataset load_dataset(const std::string& path) {
    std::vector<uint8_t> blob = read_file(path);
    Reader r(blob);
    check_magic(r, kDatasetMagic, "dataset");
    ts::Dataset ds;
    ds.nf = static_cast<int>(r.u32());
    ds.w = static_cast<int>(r.u32());
    uint32_t count = r.u32();
    if (ds.nf <= 0 || ds.w <= 0) throw std::runtime_error("bad dataset header");
    size_t cells = static_cast<size_t>(ds.nf) * ds.w;
    ds.windows.reserve(count);
    for (uint32_t k = 0; k < count; ++k) {
        ts::SampleWindow win;
        win.dense = nn::Matrix(ds.nf, ds.w);
        win.sparse = nn::Matrix(ds.nf, ds.w);
        win.mask.assign(cells, 0);
        r.f64s(win.dense.a);
        r.f64s(win.sparse.a);
        r.bytes(win.mask.data(), cells);
        win.label = r.f64();
        win.t_index = static_cast<int>(r.u32());
        ds.windows.push_back(std::move(win));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes in dataset file");
    return ds;
}

namespace {
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string base64_encode(std::span<const uint8_t> data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back(kB64Alphabet[v & 63]);
    }
    size_t rest = data.size() - i;
    if (rest == 1) {
        uint32_t v = data[i] << 16;
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rest == 2) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw std::runtime_error("bad base64 length");
    std::vector<uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw std::runtime_error("bad base64 padding");
                ++pad;
                v <<= 6;
            } else {
                if (pad > 0) throw std::runtime_error("bad base64 padding");
                int d = b64_value(c);
                if (d < 0) throw std::runtime_error("bad base64 character");
                v = (v << 6) | static_cast<uint32_t>(d);
            }
        }
        out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<uint8_t>(v & 0xff));
    }
    return out;
}

}  // namespace fedsparse::io
