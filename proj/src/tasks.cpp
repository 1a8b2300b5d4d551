#include "divlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "divlab/errors.hpp"

namespace divlab {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'D', 'S'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("DVDS: truncated header");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

float bits_to_f32(uint32_t bits) {
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// Quantizes one column to f32 while keeping the f64 mean of the stored
// values within tolerance of zero: the shift that standardization computed
// in doubles is re-fitted against what the 32-bit grid can actually hold.
void quantize_column(const std::vector<double>& col, std::vector<float>& out) {
  const double n = static_cast<double>(col.size());
  double correction = 0.0;
  double best_abs = std::numeric_limits<double>::infinity();
  std::vector<float> best(col.size());
  std::vector<float> trial(col.size());
  for (int iter = 0; iter < 48; ++iter) {
    double sum = 0.0;
    for (size_t i = 0; i < col.size(); ++i) {
      trial[i] = static_cast<float>(col[i] - correction);
      sum += static_cast<double>(trial[i]);
    }
    const double m = sum / n;
    if (std::abs(m) < best_abs) {
      best_abs = std::abs(m);
      best = trial;
    }
    if (best_abs <= 2.5e-10) break;
    correction += m;
  }
  out = best;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (is_union()) {
    if (generators.size() < 2) {
      throw ConfigError("synthetic spec '" + id + "': union needs >= 2 generators");
    }
    int64_t total = 0;
    const auto& first = generators.front();
    for (const auto& g : generators) {
      if (!g.generators.empty()) {
        throw ConfigError("synthetic spec '" + id + "': nested unions are not supported");
      }
      g.validate();
      if (g.feature_dim != first.feature_dim || g.samples_per_class != first.samples_per_class) {
        throw ConfigError("synthetic spec '" + id +
                          "': union generators must share feature_dim and samples_per_class");
      }
      total += g.class_count;
    }
    if (class_count != 0 && class_count != total) {
      throw ConfigError("synthetic spec '" + id + "': class_count " + std::to_string(class_count) +
                        " does not match generator total " + std::to_string(total));
    }
    return;
  }
  if (class_count < 1) {
    throw ConfigError("synthetic spec '" + id + "': class_count must be >= 1, got " +
                      std::to_string(class_count));
  }
  if (feature_dim < 1 || samples_per_class < 1) {
    throw ConfigError("synthetic spec '" + id + "': feature_dim and samples_per_class must be >= 1");
  }
  if (proto_spread < 0.0) {
    throw ConfigError("synthetic spec '" + id + "': proto_spread must be >= 0, got " +
                      std::to_string(proto_spread));
  }
  if (!(within_class_noise > 0.0)) {
    throw ConfigError("synthetic spec '" + id + "': within_class_noise must be > 0, got " +
                      std::to_string(within_class_noise));
  }
  if (center_norm < 0.0) {
    throw ConfigError("synthetic spec '" + id + "': center_norm must be >= 0");
  }
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kAll:
      return "all";
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

std::pair<Array, std::vector<int>> TaskBatch::all_rows() const {
  const int64_t d = support_x.rank() == 2 ? support_x.cols() : 0;
  const int64_t ns = support_x.rank() == 2 ? support_x.rows() : 0;
  const int64_t nq = query_x.rank() == 2 && query_x.size() > 0 ? query_x.rows() : 0;
  Array x({ns + nq, d});
  std::copy_n(support_x.data(), ns * d, x.data());
  if (nq > 0) std::copy_n(query_x.data(), nq * d, x.data() + ns * d);
  std::vector<int> y = support_y;
  y.insert(y.end(), query_y.begin(), query_y.end());
  return {std::move(x), std::move(y)};
}

DatasetHandle DatasetHandle::over(std::shared_ptr<const Dataset> ds) {
  if (!ds || ds->class_count < 1) throw ContractError("dataset handle: empty dataset");
  DatasetHandle h;
  h.ds_ = std::move(ds);
  h.split_ = Split::kAll;
  h.classes_.resize(static_cast<size_t>(h.ds_->class_count));
  for (size_t c = 0; c < h.classes_.size(); ++c) h.classes_[c] = static_cast<int>(c);
  std::vector<int> all(static_cast<size_t>(h.ds_->samples_per_class));
  for (size_t s = 0; s < all.size(); ++s) all[s] = static_cast<int>(s);
  h.samples_.assign(h.classes_.size(), all);
  return h;
}

int64_t DatasetHandle::samples_per_class() const {
  return samples_.empty() ? 0 : static_cast<int64_t>(samples_.front().size());
}

DatasetHandle DatasetHandle::split_view(Split s) const {
  if (split_ != Split::kAll) {
    throw ContractError("split_view: handle is already restricted to split '" +
                        split_name(split_) + "'");
  }
  if (s == Split::kAll) return *this;
  const int64_t c = static_cast<int64_t>(classes_.size());
  Rng rng(derive_seed(fnv1a64(ds_->dataset_id), "split"));
  const auto perm = rng.permutation(static_cast<int>(c));
  const int64_t n_train = (c * 6) / 10;
  const int64_t n_val = (c * 2) / 10;
  int64_t begin = 0, count = 0;
  switch (s) {
    case Split::kTrain:
      begin = 0;
      count = n_train;
      break;
    case Split::kVal:
      begin = n_train;
      count = n_val;
      break;
    case Split::kTest:
      begin = n_train + n_val;
      count = c - n_train - n_val;
      break;
    case Split::kAll:
      break;
  }
  if (count < 1) {
    throw ContractError("split_view: split '" + split_name(s) + "' of dataset '" +
                        ds_->dataset_id + "' is empty (" + std::to_string(c) + " classes)");
  }
  DatasetHandle h;
  h.ds_ = ds_;
  h.split_ = s;
  std::vector<int> chosen(perm.begin() + begin, perm.begin() + begin + count);
  std::sort(chosen.begin(), chosen.end());
  h.classes_ = std::move(chosen);
  h.samples_.reserve(h.classes_.size());
  for (int cls : h.classes_) h.samples_.push_back(samples_[static_cast<size_t>(cls)]);
  return h;
}

DatasetHandle DatasetHandle::subsample_per_class(double fraction, uint64_t seed) const {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ContractError("subsample_per_class: fraction must be in (0,1], got " +
                        std::to_string(fraction));
  }
  const int64_t keep =
      std::max<int64_t>(1, std::llround(fraction * static_cast<double>(samples_per_class())));
  DatasetHandle h;
  h.ds_ = ds_;
  h.split_ = split_;
  h.classes_ = classes_;
  h.samples_.reserve(samples_.size());
  Rng rng(seed);
  for (const auto& pool : samples_) {
    std::vector<int> ids = pool;
    rng.shuffle(ids);
    ids.resize(static_cast<size_t>(keep));
    std::sort(ids.begin(), ids.end());
    h.samples_.push_back(std::move(ids));
  }
  return h;
}

TaskBatch DatasetHandle::sample_batch(int64_t n_way, int64_t k_shot, int64_t q_size,
                                      uint64_t seed) const {
  if (n_way < 1 || k_shot < 1 || q_size < 0) {
    throw ContractError("episode: n_way/k_shot must be >= 1, q_size >= 0");
  }
  if (n_way > class_count()) {
    throw ContractError("episode: n_way " + std::to_string(n_way) + " exceeds class count " +
                        std::to_string(class_count()) + " of dataset '" + ds_->dataset_id + "' (" +
                        split_name(split_) + " split)");
  }
  if (k_shot + q_size > samples_per_class()) {
    throw ContractError("episode: k_shot + q_size = " + std::to_string(k_shot + q_size) +
                        " exceeds per-class sample count " + std::to_string(samples_per_class()));
  }
  const int64_t d = feature_dim();
  Rng rng(seed);
  auto cls_perm = rng.permutation(static_cast<int>(class_count()));

  TaskBatch b;
  b.n_way = n_way;
  b.k_shot = k_shot;
  b.q_size = q_size;
  b.support_x = Array({n_way * k_shot, d});
  b.query_x = Array({n_way * q_size, d});
  b.support_y.reserve(static_cast<size_t>(n_way * k_shot));
  b.query_y.reserve(static_cast<size_t>(n_way * q_size));
  b.episode_classes.assign(cls_perm.begin(), cls_perm.begin() + n_way);
  b.batch_id = ds_->dataset_id + "/" + split_name(split_) + ":" + std::to_string(seed);

  for (int64_t label = 0; label < n_way; ++label) {
    const int view_cls = b.episode_classes[static_cast<size_t>(label)];
    const int ds_cls = classes_[static_cast<size_t>(view_cls)];
    std::vector<int> ids = samples_[static_cast<size_t>(view_cls)];
    rng.shuffle(ids);
    for (int64_t k = 0; k < k_shot; ++k) {
      const float* src = ds_->row(ds_cls, ids[static_cast<size_t>(k)]);
      double* dst = b.support_x.data() + (label * k_shot + k) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]);
      b.support_y.push_back(static_cast<int>(label));
    }
    for (int64_t q = 0; q < q_size; ++q) {
      const float* src = ds_->row(ds_cls, ids[static_cast<size_t>(k_shot + q)]);
      double* dst = b.query_x.data() + (label * q_size + q) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]);
      b.query_y.push_back(static_cast<int>(label));
    }
  }
  return b;
}

TaskBatch DatasetHandle::sample_uniform_batch(int64_t rows, uint64_t seed) const {
  if (rows < 2) throw ContractError("uniform batch: need >= 2 rows");
  if (class_count() < 2) {
    throw ContractError("uniform batch: dataset '" + ds_->dataset_id +
                        "' view has fewer than 2 classes");
  }
  const int64_t d = feature_dim();
  Rng rng(seed);
  TaskBatch b;
  b.n_way = class_count();
  b.k_shot = 0;
  b.q_size = 0;
  b.support_x = Array({rows, d});
  b.support_y.reserve(static_cast<size_t>(rows));
  b.query_x = Array({0, d});
  b.batch_id = ds_->dataset_id + "/" + split_name(split_) + ":u" + std::to_string(seed);
  for (int64_t i = 0; i < rows; ++i) {
    const int view_cls = static_cast<int>(rng.below(static_cast<uint64_t>(class_count())));
    const int sample = static_cast<int>(rng.below(static_cast<uint64_t>(samples_per_class())));
    const int ds_cls = classes_[static_cast<size_t>(view_cls)];
    const float* src = ds_->row(ds_cls, samples_[static_cast<size_t>(view_cls)]
                                                [static_cast<size_t>(sample)]);
    double* dst = b.support_x.data() + i * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]);
    b.support_y.push_back(view_cls);
  }
  bool two_classes = false;
  for (int y : b.support_y) {
    if (y != b.support_y.front()) {
      two_classes = true;
      break;
    }
  }
  if (!two_classes) throw ContractError("uniform batch: drew a single-class batch");
  return b;
}

std::pair<Array, std::vector<int>> DatasetHandle::all_samples() const {
  const int64_t d = feature_dim();
  const int64_t per = samples_per_class();
  const int64_t n = class_count() * per;
  Array x({n, d});
  std::vector<int> y;
  y.reserve(static_cast<size_t>(n));
  int64_t row = 0;
  for (int64_t c = 0; c < class_count(); ++c) {
    const int ds_cls = classes_[static_cast<size_t>(c)];
    for (int64_t s = 0; s < per; ++s, ++row) {
      const float* src = ds_->row(ds_cls, samples_[static_cast<size_t>(c)][static_cast<size_t>(s)]);
      double* dst = x.data() + row * d;
      for (int64_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]);
      y.push_back(static_cast<int>(c));
    }
  }
  return {std::move(x), std::move(y)};
}

DatasetHandle generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticSpec> gens;
  if (spec.is_union()) {
    gens = spec.generators;
  } else {
    gens.push_back(spec);
  }
  const int64_t d = gens.front().feature_dim;
  const int64_t per = gens.front().samples_per_class;
  int64_t total_classes = 0;
  for (const auto& g : gens) total_classes += g.class_count;
  const int64_t n = total_classes * per;

  std::vector<double> raw(static_cast<size_t>(n * d));
  int64_t class_base = 0;
  for (const auto& g : gens) {
    Rng rng(g.seed);
    std::vector<double> center(static_cast<size_t>(d), 0.0);
    if (g.center_norm > 0.0) {
      double norm2 = 0.0;
      for (auto& v : center) {
        v = rng.normal();
        norm2 += v * v;
      }
      const double s = g.center_norm / std::sqrt(norm2);
      for (auto& v : center) v *= s;
    }
    for (int64_t c = 0; c < g.class_count; ++c) {
      std::vector<double> proto(static_cast<size_t>(d));
      for (int64_t j = 0; j < d; ++j) proto[static_cast<size_t>(j)] =
          center[static_cast<size_t>(j)] + g.proto_spread * rng.normal();
      for (int64_t s = 0; s < per; ++s) {
        double* dst = raw.data() + ((class_base + c) * per + s) * d;
        for (int64_t j = 0; j < d; ++j) {
          dst[j] = proto[static_cast<size_t>(j)] + g.within_class_noise * rng.normal();
        }
      }
    }
    class_base += g.class_count;
  }

  // Standardize per dimension (population moments), then quantize to the f32
  // grid the DVDS format stores, re-centering so the stored values themselves
  // satisfy the zero-mean contract.
  auto ds = std::make_shared<Dataset>();
  ds->dataset_id = spec.id;
  ds->class_count = total_classes;
  ds->samples_per_class = per;
  ds->feature_dim = d;
  ds->data.resize(static_cast<size_t>(n * d));
  std::vector<double> col(static_cast<size_t>(n));
  std::vector<float> qcol;
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += raw[static_cast<size_t>(i * d + j)];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double dev = raw[static_cast<size_t>(i * d + j)] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      throw NumericError("generate_synthetic: dimension " + std::to_string(j) +
                         " of dataset '" + spec.id + "' is constant");
    }
    for (int64_t i = 0; i < n; ++i) {
      col[static_cast<size_t>(i)] = (raw[static_cast<size_t>(i * d + j)] - mean) / sd;
    }
    quantize_column(col, qcol);
    for (int64_t i = 0; i < n; ++i) ds->data[static_cast<size_t>(i * d + j)] =
        qcol[static_cast<size_t>(i)];
  }
  return DatasetHandle::over(std::move(ds));
}

void save_dvds(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("DVDS: cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<uint32_t>(ds.class_count));
  write_u32(out, static_cast<uint32_t>(ds.samples_per_class));
  write_u32(out, static_cast<uint32_t>(ds.feature_dim));
  for (float v : ds.data) write_f32(out, v);
  if (!out) throw FormatError("DVDS: short write to '" + path.string() + "'");
}

std::shared_ptr<const Dataset> load_dvds(const std::filesystem::path& path,
                                         std::string dataset_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("DVDS: cannot open '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("DVDS: bad magic in '" + path.string() + "'");
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw FormatError("DVDS: unsupported version " + std::to_string(version) + " in '" +
                      path.string() + "'");
  }
  auto ds = std::make_shared<Dataset>();
  ds->dataset_id = std::move(dataset_id);
  ds->class_count = read_u32(in);
  ds->samples_per_class = read_u32(in);
  ds->feature_dim = read_u32(in);
  const int64_t count = ds->class_count * ds->samples_per_class * ds->feature_dim;
  ds->data.resize(static_cast<size_t>(count));
  std::vector<unsigned char> bytes(static_cast<size_t>(count) * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  const auto got = in.gcount();
  if (got != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("DVDS: payload size mismatch in '" + path.string() + "': expected " +
                      std::to_string(count * 4) + " bytes, got " + std::to_string(got));
  }
  for (int64_t i = 0; i < count; ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<uint32_t>(bytes[static_cast<size_t>(i * 4 + b)]) << (8 * b);
    }
    ds->data[static_cast<size_t>(i)] = bits_to_f32(bits);
  }
  return ds;
}

DatasetHandle load_dataset(const std::filesystem::path& path) {
  return DatasetHandle::over(load_dvds(path, path.stem().string()));
}

}  // namespace divlab
