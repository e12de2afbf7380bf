#include "ifl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ifl {

namespace {

constexpr char kMagic[4] = {'I', 'F', 'L', 'R'};
constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

void put_u32(std::string& out, std::uint32_t value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(value));
}

void append_tensor(std::string& out, const std::string& name,
                   const Matrix& value) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(value.rows()));
  put_u32(out, static_cast<std::uint32_t>(value.cols()));
  out.append(reinterpret_cast<const char*>(value.data()),
             value.size() * sizeof(double));
}

Matrix scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return m;
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    require(sizeof(std::uint32_t));
    std::uint32_t value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(value));
    offset_ += sizeof(value);
    return value;
  }

  std::string text(std::size_t length) {
    require(length);
    std::string value = bytes_.substr(offset_, length);
    offset_ += length;
    return value;
  }

  Matrix tensor_body(std::size_t rows, std::size_t cols) {
    const std::size_t bytes = rows * cols * sizeof(double);
    require(bytes);
    std::vector<double> data(rows * cols);
    std::memcpy(data.data(), bytes_.data() + offset_, bytes);
    offset_ += bytes;
    try {
      return Matrix(rows, cols, std::move(data));
    } catch (const InvalidInput&) {
      throw ParseError("checkpoint: non-finite tensor data",
                       offset_ - bytes);
    }
  }

  std::size_t offset() const { return offset_; }
  bool exhausted() const { return offset_ == bytes_.size(); }

 private:
  void require(std::size_t bytes) {
    if (offset_ + bytes > bytes_.size()) {
      throw ParseError("checkpoint: truncated file", offset_);
    }
  }

  std::string bytes_;
  std::size_t offset_ = 0;
};

const Matrix& find(const std::map<std::string, Matrix>& tensors,
                   const std::string& name, std::size_t end_offset) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw ParseError("checkpoint: missing tensor '" + name + "'", end_offset);
  }
  return it->second;
}

}  // namespace

void save_checkpoint(const std::string& path, const Network& net,
                     const std::vector<GradientMemory>& memories,
                     const ClassStats& stats) {
  std::vector<NamedTensor> tensors;

  Matrix dims(1, 3 + net.dims.hidden.size());
  dims(0, 0) = static_cast<double>(net.dims.input);
  for (std::size_t i = 0; i < net.dims.hidden.size(); ++i) {
    dims(0, 1 + i) = static_cast<double>(net.dims.hidden[i]);
  }
  dims(0, 1 + net.dims.hidden.size()) = static_cast<double>(net.dims.feature);
  dims(0, 2 + net.dims.hidden.size()) = static_cast<double>(net.dims.classes);
  tensors.push_back({"net.dims", dims});

  Matrix flags(2, net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    flags(0, l) = net.layers[l].adapted ? 1.0 : 0.0;
    flags(1, l) = net.layers[l].activation == Activation::Relu ? 1.0 : 0.0;
  }
  tensors.push_back({"net.flags", flags});

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    tensors.push_back({prefix + ".w", net.layers[l].w});
    tensors.push_back({prefix + ".bias", net.layers[l].bias});
    if (net.layers[l].has_branch()) {
      tensors.push_back({prefix + ".branch_a", net.layers[l].branch->a});
      tensors.push_back({prefix + ".branch_b", net.layers[l].branch->b});
    }
  }
  tensors.push_back({"head.w", net.head.w});
  tensors.push_back({"head.bias", net.head.bias});

  tensors.push_back({"memories.count",
                     scalar(static_cast<double>(memories.size()))});
  for (std::size_t i = 0; i < memories.size(); ++i) {
    const std::string prefix = "memory" + std::to_string(i);
    tensors.push_back(
        {prefix + ".mode",
         scalar(memories[i].mode() == MemoryMode::Complement ? 1.0 : 0.0)});
    tensors.push_back({prefix + ".basis", memories[i].basis()});
  }

  tensors.push_back(
      {"stats.count", scalar(static_cast<double>(stats.per_class.size()))});
  std::size_t index = 0;
  for (const auto& [label, entry] : stats.per_class) {
    const std::string prefix = "stats" + std::to_string(index++);
    tensors.push_back({prefix + ".label", scalar(static_cast<double>(label))});
    tensors.push_back({prefix + ".n", scalar(static_cast<double>(entry.count))});
    tensors.push_back({prefix + ".mean", entry.mean});
    tensors.push_back({prefix + ".cov", entry.covariance});
  }

  std::string payload;
  payload.append(kMagic, sizeof(kMagic));
  put_u32(payload, kVersion);
  put_u32(payload, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& tensor : tensors) {
    append_tensor(payload, tensor.name, tensor.value);
  }

  const std::string temp = path + ".tmp";
  {
    std::ofstream file(temp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("save_checkpoint: cannot open " + temp);
    file.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!file) throw IoError("save_checkpoint: write failed for " + temp);
  }
  if (std::rename(temp.c_str(), path.c_str()) != 0) {
    throw IoError("save_checkpoint: cannot rename " + temp + " to " + path);
  }
}

CheckpointState load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("load_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());
  Reader reader(std::move(bytes));

  const std::string magic = reader.text(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint: bad magic", 0);
  }
  const std::uint32_t version = reader.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t count = reader.u32();
  std::map<std::string, Matrix> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_length = reader.u32();
    const std::string name = reader.text(name_length);
    const std::uint32_t rows = reader.u32();
    const std::uint32_t cols = reader.u32();
    tensors.emplace(name, reader.tensor_body(rows, cols));
  }
  if (!reader.exhausted()) {
    throw ParseError("checkpoint: trailing bytes", reader.offset());
  }
  const std::size_t end = reader.offset();

  const Matrix& dims = find(tensors, "net.dims", end);
  if (dims.rows() != 1 || dims.cols() < 3) {
    throw ParseError("checkpoint: malformed net.dims", end);
  }
  CheckpointState state;
  state.net.dims.input = static_cast<std::size_t>(dims(0, 0));
  for (std::size_t i = 1; i + 2 < dims.cols(); ++i) {
    state.net.dims.hidden.push_back(static_cast<std::size_t>(dims(0, i)));
  }
  state.net.dims.feature =
      static_cast<std::size_t>(dims(0, dims.cols() - 2));
  state.net.dims.classes =
      static_cast<std::size_t>(dims(0, dims.cols() - 1));

  const Matrix& flags = find(tensors, "net.flags", end);
  const std::size_t layer_count = flags.cols();
  if (flags.rows() != 2 ||
      layer_count != state.net.dims.hidden.size() + 1) {
    throw ParseError("checkpoint: malformed net.flags", end);
  }
  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    LoraLinearLayer layer;
    layer.w = find(tensors, prefix + ".w", end);
    layer.bias = find(tensors, prefix + ".bias", end);
    layer.adapted = flags(0, l) != 0.0;
    layer.activation =
        flags(1, l) != 0.0 ? Activation::Relu : Activation::None;
    if (tensors.count(prefix + ".branch_a") ||
        tensors.count(prefix + ".branch_b")) {
      layer.branch = LoraBranch{find(tensors, prefix + ".branch_a", end),
                                find(tensors, prefix + ".branch_b", end)};
      if (layer.branch->a.cols() != layer.branch->b.rows()) {
        throw ParseError("checkpoint: branch rank mismatch in " + prefix, end);
      }
    }
    if (layer.bias.rows() != layer.w.rows() || layer.bias.cols() != 1) {
      throw ParseError("checkpoint: bias shape mismatch in " + prefix, end);
    }
    state.net.layers.push_back(std::move(layer));
  }
  state.net.head.w = find(tensors, "head.w", end);
  state.net.head.bias = find(tensors, "head.bias", end);

  const std::size_t memory_count =
      static_cast<std::size_t>(find(tensors, "memories.count", end)(0, 0));
  for (std::size_t i = 0; i < memory_count; ++i) {
    const std::string prefix = "memory" + std::to_string(i);
    const bool complement = find(tensors, prefix + ".mode", end)(0, 0) != 0.0;
    const Matrix& basis = find(tensors, prefix + ".basis", end);
    try {
      state.memories.emplace_back(
          complement ? MemoryMode::Complement : MemoryMode::GradSpace, basis);
    } catch (const InvalidInput&) {
      throw ParseError("checkpoint: " + prefix + " basis not orthonormal",
                       end);
    }
  }

  const std::size_t stat_count =
      static_cast<std::size_t>(find(tensors, "stats.count", end)(0, 0));
  for (std::size_t i = 0; i < stat_count; ++i) {
    const std::string prefix = "stats" + std::to_string(i);
    const int label =
        static_cast<int>(find(tensors, prefix + ".label", end)(0, 0));
    ClassStats::Entry entry;
    entry.count =
        static_cast<std::size_t>(find(tensors, prefix + ".n", end)(0, 0));
    entry.mean = find(tensors, prefix + ".mean", end);
    entry.covariance = find(tensors, prefix + ".cov", end);
    state.stats.per_class[label] = std::move(entry);
  }
  return state;
}

}  // namespace ifl
