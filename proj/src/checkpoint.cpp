#include "cortex3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cortex3d/error.hpp"

namespace cortex3d {

static_assert(std::endian::native == std::endian::little, "ACNN1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'A', 'C', 'N', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

class Reader {
public:
    Reader(std::string bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }
    const char* take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) throw FormatError(where_ + "truncated " + what, bytes_.size());
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

std::string layer_name(std::size_t i, const char* param) { return "layer" + std::to_string(i) + "." + param; }

// Every expected entry must exist with the expected shape, and nothing else
// may be present; only then are the values copied.
void assign(std::span<const NamedTensor> tensors, const std::vector<std::pair<std::string, Tensor*>>& targets) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& t : tensors) {
        if (!by_name.emplace(t.name, &t.tensor).second) throw FormatError("checkpoint repeats tensor " + t.name);
    }
    for (const auto& [name, target] : targets) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + name);
        if (it->second->shape() != target->shape()) {
            throw FormatError("checkpoint tensor " + name + " has shape " + it->second->shape().str() +
                              ", architecture expects " + target->shape().str());
        }
    }
    if (by_name.size() != targets.size()) {
        for (const auto& [name, _] : by_name) {
            bool known = false;
            for (const auto& t : targets) known = known || t.first == name;
            if (!known) throw FormatError("checkpoint holds unexpected tensor " + name);
        }
    }
    for (const auto& [name, target] : targets) *target = *by_name.at(name);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.tensor.rank()));
        for (std::size_t e : t.tensor.shape().extents()) put_u32(out, static_cast<std::uint32_t>(e));
        out.append(reinterpret_cast<const char*>(t.tensor.raw()), t.tensor.size() * sizeof(float));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    Reader r(std::move(bytes), where);
    if (std::memcmp(r.take(sizeof kMagic, "magic"), kMagic, sizeof kMagic) != 0) {
        throw FormatError(where + "missing ACNN1 magic", 0);
    }
    const std::uint32_t count = r.u32("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint32_t len = r.u32("name length");
        t.name.assign(r.take(len, "name"), len);
        const std::size_t rank_at = r.pos();
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > 5) throw FormatError(where + "tensor " + t.name + " has rank " + std::to_string(rank), rank_at);
        std::vector<std::size_t> dims;
        std::size_t n = 1;
        for (std::uint32_t a = 0; a < rank; ++a) {
            const std::size_t at = r.pos();
            dims.push_back(r.u32("dims"));
            if (dims.back() == 0) throw FormatError(where + "tensor " + t.name + " has a zero extent", at);
            n *= dims.back();
        }
        std::vector<float> data(n);
        std::memcpy(data.data(), r.take(n * sizeof(float), "payload"), n * sizeof(float));
        t.tensor = Tensor(Shape(dims), std::move(data));
        out.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError(where + "trailing bytes after the last tensor", r.pos());
    return out;
}

std::vector<NamedTensor> stack_tensors(const CaeStack<float>& stack) {
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        out.push_back({layer_name(l, "kernels"), stack.layers[l].kernels});
        out.push_back({layer_name(l, "bias"), stack.layers[l].bias});
        out.push_back({layer_name(l, "decoder_bias"), stack.layers[l].decoder_bias});
    }
    return out;
}

std::vector<NamedTensor> network_tensors(const Network<float>& network) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < network.layer_count(); ++i) {
        const auto& l = network.layer(i);
        if (!l.has_params()) continue;
        out.push_back({layer_name(i, "weights"), l.weights});
        out.push_back({layer_name(i, "bias"), l.bias});
    }
    return out;
}

void load_parameters(CaeStack<float>& stack, std::span<const NamedTensor> tensors) {
    std::vector<std::pair<std::string, Tensor*>> targets;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        targets.emplace_back(layer_name(l, "kernels"), &stack.layers[l].kernels);
        targets.emplace_back(layer_name(l, "bias"), &stack.layers[l].bias);
        targets.emplace_back(layer_name(l, "decoder_bias"), &stack.layers[l].decoder_bias);
    }
    assign(tensors, targets);
}

void load_parameters(Network<float>& network, std::span<const NamedTensor> tensors) {
    std::vector<std::pair<std::string, Tensor*>> targets;
    for (auto& p : network.parameters()) targets.emplace_back(layer_name(p.layer, p.name), p.tensor);
    assign(tensors, targets);
}

}  // namespace cortex3d
