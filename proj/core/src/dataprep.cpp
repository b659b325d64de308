#include "rego/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <thread>

#include "rego/errors.hpp"
#include "rego/image_io.hpp"
#include "rego/logging.hpp"

namespace rego {

namespace fs = std::filesystem;
using nlohmann::json;

void ImageSample::validate() const {
  require_rank3(pixels, "ImageSample");
  if (pixels.channels() != 3) throw ShapeError("image " + id + ": expected 3 channels, got " + pixels.shape_string());
  if (pixels.width() % 2 != 0) throw ShapeError("image " + id + ": width must be even, got " + pixels.shape_string());
  for (double v : pixels.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidValueError("image " + id + ": pixel value outside [0,1]");
  }
}

Tensor GradientEdgeDetector::detect(const Tensor& rgb) const {
  require_rank3(rgb, "edge detector");
  if (rgb.channels() != 3) throw ShapeError("edge detector expects RGB input, got " + rgb.shape_string());
  const int h = rgb.height(), w = rgb.width();
  std::vector<double> luma(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      luma[static_cast<std::size_t>(y) * w + x] =
          0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2);
  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return luma[static_cast<std::size_t>(y) * w + x];
  };
  Tensor mag({h, w, 1});
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag.at(y, x, 0) = m;
      peak = std::max(peak, m);
    }
  }
  if (peak < 1e-12) {
    mag.fill(0.0);
    return mag;
  }
  for (double& v : mag.values()) v /= peak;
  return mag;
}

RandomProjectionEmbedder::RandomProjectionEmbedder(std::uint64_t seed, int dim, int grid_h, int grid_w)
    : seed_(seed), dim_(dim), grid_h_(grid_h), grid_w_(grid_w) {
  if (dim < 1 || grid_h < 1 || grid_w < 1) throw ConfigError("embedder dimensions must be positive");
  const std::size_t in = static_cast<std::size_t>(grid_h) * grid_w * 3;
  projection_.resize(static_cast<std::size_t>(dim) * in);
  Rng rng(seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  for (double& v : projection_) v = dist(rng);
}

std::vector<double> RandomProjectionEmbedder::embed(const Tensor& rgb) const {
  require_rank3(rgb, "embedder");
  if (rgb.channels() != 3) throw ShapeError("embedder expects RGB input, got " + rgb.shape_string());
  const Tensor small = resize(rgb, grid_h_, grid_w_);
  const std::size_t in = small.size();
  std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
  for (int d = 0; d < dim_; ++d) {
    const double* row = projection_.data() + static_cast<std::size_t>(d) * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * (small[i] - 0.5);
    out[static_cast<std::size_t>(d)] = acc;
  }
  return out;
}

std::string RandomProjectionEmbedder::id() const {
  std::ostringstream os;
  os << "random-projection:seed=" << seed_ << ":dim=" << dim_ << ":grid=" << grid_h_ << "x" << grid_w_;
  return os.str();
}

std::unique_ptr<EmbeddingPlugin> make_embedder(const std::string& embedder_id) {
  unsigned long long seed = 0;
  int dim = 0, gh = 0, gw = 0;
  if (std::sscanf(embedder_id.c_str(), "random-projection:seed=%llu:dim=%d:grid=%dx%d", &seed, &dim, &gh, &gw) == 4) {
    return std::make_unique<RandomProjectionEmbedder>(seed, dim, gh, gw);
  }
  throw ConfigError("unknown embedder id: " + embedder_id);
}

Sketch binarize(const Tensor& edge, double threshold) {
  require_rank3(edge, "binarize");
  if (edge.channels() != 1) throw ShapeError("binarize expects a single-channel map, got " + edge.shape_string());
  Sketch s{Tensor(edge.dims())};
  for (std::size_t i = 0; i < edge.size(); ++i) s.mask[i] = edge[i] >= threshold ? 1.0 : 0.0;
  return s;
}

Sketch extract_sketch(const ImageSample& image, const EdgePlugin& detector, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("sketch threshold must lie in (0,1), got " + std::to_string(threshold));
  }
  const Tensor edge = detector.detect(image.pixels);
  if (edge.rank() != 3 || edge.height() != image.height() || edge.width() != image.width() || edge.channels() != 1) {
    throw ShapeError("edge detector " + detector.id() + " returned " + edge.shape_string() + " for image " +
                     image.pixels.shape_string());
  }
  return binarize(edge, threshold);
}

Sketch augment_sketch(const Sketch& sketch, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probability must lie in [0,1]");
  const int h = sketch.mask.height(), w = sketch.mask.width();
  cv::Mat binary(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) binary.at<std::uint8_t>(y, x) = sketch.mask.at(y, x, 0) > 0.5 ? 1 : 0;
  cv::Mat labels;
  const int count = cv::connectedComponents(binary, labels, 8, CV_32S);
  std::bernoulli_distribution drop(p);
  std::vector<char> keep(static_cast<std::size_t>(count), 1);
  for (int label = 1; label < count; ++label) keep[static_cast<std::size_t>(label)] = drop(rng) ? 0 : 1;
  Sketch out{Tensor(sketch.mask.dims())};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int label = labels.at<int>(y, x);
      out.mask.at(y, x, 0) = (label > 0 && keep[static_cast<std::size_t>(label)]) ? 1.0 : 0.0;
    }
  return out;
}

void normalize_embedding(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 1e-12) || !std::isfinite(n)) throw DegenerateEmbeddingError("embedding has zero (or non-finite) norm");
  for (double& x : v) x /= n;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: embedding length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

namespace {

void sort_neighbors(std::vector<Neighbor>& v) {
  std::sort(v.begin(), v.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
}

void validate_k(int k, std::size_t n) {
  if (k < 1 || static_cast<std::size_t>(k) >= n) {
    throw ConfigError("neighbor count k=" + std::to_string(k) + " must satisfy 1 <= k < " + std::to_string(n));
  }
}

}  // namespace

ReferenceIndex ReferenceIndex::build(std::span<const ImageSample> samples, const EmbeddingPlugin& embedder, int k,
                                     unsigned workers) {
  if (samples.size() < 2) throw ConfigError("reference index needs at least 2 samples");
  validate_k(k, samples.size());
  ReferenceIndex index;
  index.k_ = k;
  index.embedder_id_ = embedder.id();
  index.ids_.reserve(samples.size());
  for (const auto& s : samples) {
    if (index.contains(s.id)) throw ConfigError("duplicate sample id " + s.id);
    index.ids_.push_back(s.id);
  }
  index.embeddings_.resize(samples.size());

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(samples.size()));
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < samples.size(); i += workers) {
        auto e = embedder.embed(samples[i].pixels);
        normalize_embedding(e);
        index.embeddings_[i] = std::move(e);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  index.compute_neighbors();
  return index;
}

void ReferenceIndex::compute_neighbors() {
  neighbors_.clear();
  neighbors_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) neighbors_.push_back(rank(embeddings_[i], k_, ids_[i]));
}

bool ReferenceIndex::contains(const std::string& id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

std::size_t ReferenceIndex::position(const std::string& id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw NotFoundError("id not in reference index: " + id);
  return static_cast<std::size_t>(it - ids_.begin());
}

double ReferenceIndex::similarity(const std::string& a, const std::string& b) const {
  return cosine(embeddings_[position(a)], embeddings_[position(b)]);
}

const std::vector<Neighbor>& ReferenceIndex::neighbors(const std::string& id) const {
  return neighbors_.at(position(id));
}

std::vector<Neighbor> ReferenceIndex::rank(const std::vector<double>& query, int k, const std::string& exclude) const {
  std::vector<Neighbor> all;
  all.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == exclude) continue;
    all.push_back({ids_[i], cosine(query, embeddings_[i])});
  }
  sort_neighbors(all);
  if (k >= 0 && static_cast<std::size_t>(k) < all.size()) all.resize(static_cast<std::size_t>(k));
  return all;
}

json ReferenceIndex::to_json() const {
  json entries = json::array();
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    json nb = json::array();
    for (const auto& n : neighbors_[i]) nb.push_back({{"id", n.id}, {"similarity", n.similarity}});
    entries.push_back({{"id", ids_[i]}, {"embedding", embeddings_[i]}, {"neighbors", nb}});
  }
  return {{"version", 1}, {"embedder_id", embedder_id_}, {"k", k_}, {"entries", entries}};
}

ReferenceIndex ReferenceIndex::from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported index.json version");
    ReferenceIndex index;
    index.embedder_id_ = j.at("embedder_id").get<std::string>();
    index.k_ = j.at("k").get<int>();
    for (const auto& e : j.at("entries")) {
      index.ids_.push_back(e.at("id").get<std::string>());
      auto emb = e.at("embedding").get<std::vector<double>>();
      double n2 = 0.0;
      for (double x : emb) n2 += x * x;
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
        throw InvalidValueError("index entry " + index.ids_.back() + " embedding is not unit norm");
      }
      index.embeddings_.push_back(std::move(emb));
    }
    if (index.ids_.size() < 2) throw ConfigError("reference index needs at least 2 entries");
    validate_k(index.k_, index.ids_.size());
    index.compute_neighbors();
    return index;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed index.json: ") + e.what());
  }
}

void ReferenceIndex::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

ReferenceIndex ReferenceIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read index " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed index " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<Neighbor> query_neighbors(const ReferenceIndex& index, const std::string& query_id, int k) {
  const std::size_t pos = index.position(query_id);
  validate_k(k, index.size());
  return index.rank(index.embedding(pos), k, query_id);
}

TrainingExample make_training_example(const ImageSample& sample, const Sketch& sketch, const ReferenceIndex& index,
                                      const SampleLookup& lookup, Rng& rng, int k) {
  require_rank3(sample.pixels, "make_training_example");
  if (sample.width() % 2 != 0) throw ShapeError("sample " + sample.id + " has odd width");
  if (sketch.mask.rank() != 3 || sketch.mask.height() != sample.height() || sketch.mask.width() != sample.width()) {
    throw ShapeError("sketch shape " + sketch.mask.shape_string() + " does not match image " +
                     sample.pixels.shape_string());
  }
  const auto& candidates = index.neighbors(sample.id);
  if (k <= 0) k = index.k();
  if (static_cast<std::size_t>(k) > candidates.size()) {
    throw ConfigError("requested " + std::to_string(k) + " neighbors but the index stores " +
                      std::to_string(candidates.size()));
  }
  std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(k) - 1);
  const std::string& ref_id = candidates[pick(rng)].id;
  const ImageSample& ref = lookup(ref_id);
  if (!ref.pixels.same_shape(sample.pixels)) {
    throw ShapeError("reference " + ref_id + " shape " + ref.pixels.shape_string() + " differs from sample");
  }
  TrainingExample ex;
  ex.id = sample.id;
  ex.reference_id = ref_id;
  ex.left = left_half(sample.pixels);
  ex.sketch_right = right_half(sketch.mask);
  ex.reference_right = right_half(ref.pixels);
  ex.groundtruth = sample.pixels;
  return ex;
}

const ImageSample& Dataset::sample(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw NotFoundError("sample not in dataset: " + id);
}

const Sketch& Dataset::sketch(const std::string& id) const {
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].id == id) return sketches.at(i);
  throw NotFoundError("sketch not in dataset: " + id);
}

SampleLookup Dataset::lookup() const {
  return [this](const std::string& id) -> const ImageSample& { return sample(id); };
}

Dataset prepare_dataset(const fs::path& images_dir, const PrepareOptions& options, const EdgePlugin& detector,
                        const EmbeddingPlugin& embedder) {
  if (!fs::is_directory(images_dir)) throw IoError("image directory not found: " + images_dir.string());
  if (options.width % 2 != 0 || options.width < 2 || options.height < 1) {
    throw ConfigError("target resolution must have positive height and even width");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw ConfigError("need at least 2 images in " + images_dir.string());

  Dataset ds;
  for (const auto& f : files) {
    ImageSample s{f.stem().string(), resize(load_rgb(f), options.height, options.width)};
    // store exactly what will be written to disk
    s.pixels = quantize_8bit(s.pixels);
    s.validate();
    ds.samples.push_back(std::move(s));
  }
  for (const auto& s : ds.samples) ds.sketches.push_back(extract_sketch(s, detector, options.threshold));
  ds.index = ReferenceIndex::build(ds.samples, embedder, options.k);
  log::info("prepared " + std::to_string(ds.samples.size()) + " samples from " + images_dir.string());
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "sketches");
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    save_png(out_dir / "images" / (dataset.samples[i].id + ".png"), dataset.samples[i].pixels);
    save_png(out_dir / "sketches" / (dataset.samples[i].id + ".png"), dataset.sketches[i].mask);
  }
  dataset.index.save(out_dir / "index.json");
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.index = ReferenceIndex::load(dir / "index.json");
  for (const auto& id : ds.index.ids()) {
    ImageSample s{id, load_rgb(dir / "images" / (id + ".png"))};
    s.validate();
    Tensor gray = load_gray(dir / "sketches" / (id + ".png"));
    ds.sketches.push_back(binarize(gray, 0.5));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rego
