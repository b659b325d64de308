#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rego/nn.hpp"
#include "rego/tensor.hpp"

namespace rego {

/// An RGB image with values in [0,1] and even width.
struct ImageSample {
  std::string id;
  Tensor pixels;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
  /// Throws ShapeError / InvalidValueError when the invariants fail.
  void validate() const;
};

/// Binary HxWx1 mask; every entry is exactly 0 or 1.
struct Sketch {
  Tensor mask;
};

/// Edge-strength map in [0,1] for an RGB image.
class EdgePlugin {
 public:
  virtual ~EdgePlugin() = default;
  virtual Tensor detect(const Tensor& rgb) const = 0;
  virtual std::string id() const = 0;
};

/// Sobel gradient magnitude on luma, normalized by the image's maximum
/// response (constant images map to all zeros). Borders replicate.
class GradientEdgeDetector final : public EdgePlugin {
 public:
  Tensor detect(const Tensor& rgb) const override;
  std::string id() const override { return "sobel-magnitude-v1"; }
};

class EmbeddingPlugin {
 public:
  virtual ~EmbeddingPlugin() = default;
  virtual std::vector<double> embed(const Tensor& rgb) const = 0;
  virtual std::string id() const = 0;
};

/// Area-downsamples to a fixed grid, centers pixels at 0.5 and applies a
/// seeded Gaussian random projection.
class RandomProjectionEmbedder final : public EmbeddingPlugin {
 public:
  explicit RandomProjectionEmbedder(std::uint64_t seed = 0, int dim = 128, int grid_h = 16, int grid_w = 32);
  std::vector<double> embed(const Tensor& rgb) const override;
  std::string id() const override;

 private:
  std::uint64_t seed_;
  int dim_, grid_h_, grid_w_;
  std::vector<double> projection_;  // dim x (grid_h * grid_w * 3)
};

/// Rebuilds an embedder from the id string stored in index.json.
std::unique_ptr<EmbeddingPlugin> make_embedder(const std::string& embedder_id);

inline constexpr double kDefaultSketchThreshold = 0.6;
inline constexpr int kDefaultNeighbors = 5;

/// mask = 1 where edge >= threshold.
Sketch binarize(const Tensor& edge, double threshold);
Sketch extract_sketch(const ImageSample& image, const EdgePlugin& detector,
                      double threshold = kDefaultSketchThreshold);
/// Drops each 8-connected stroke with probability `p`.
Sketch augment_sketch(const Sketch& sketch, double p, Rng& rng);

struct Neighbor {
  std::string id;
  double similarity;
};

/// Exhaustive cosine-similarity index over unit-normalized embeddings.
/// Immutable after construction.
class ReferenceIndex {
 public:
  static ReferenceIndex build(std::span<const ImageSample> samples, const EmbeddingPlugin& embedder,
                              int k = kDefaultNeighbors, unsigned workers = 0);

  std::size_t size() const noexcept { return ids_.size(); }
  int k() const noexcept { return k_; }
  const std::string& embedder_id() const noexcept { return embedder_id_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  bool contains(const std::string& id) const;
  std::size_t position(const std::string& id) const;
  const std::vector<double>& embedding(std::size_t i) const { return embeddings_.at(i); }

  double similarity(const std::string& a, const std::string& b) const;
  /// The stored top-k list for `id` (self excluded).
  const std::vector<Neighbor>& neighbors(const std::string& id) const;
  /// Ranks all entries (optionally excluding one id) against a raw embedding.
  std::vector<Neighbor> rank(const std::vector<double>& query, int k, const std::string& exclude = {}) const;

  nlohmann::json to_json() const;
  static ReferenceIndex from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ReferenceIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> embeddings_;
  std::vector<std::vector<Neighbor>> neighbors_;
  std::string embedder_id_;
  int k_ = kDefaultNeighbors;

  void compute_neighbors();
};

/// Top-k most similar indexed items to `query_id`, descending, self excluded.
std::vector<Neighbor> query_neighbors(const ReferenceIndex& index, const std::string& query_id, int k);

/// Unit-normalizes in place; throws DegenerateEmbeddingError on a zero vector.
void normalize_embedding(std::vector<double>& v);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct TrainingExample {
  std::string id;
  std::string reference_id;
  Tensor left;             // H x W/2 x 3
  Tensor sketch_right;     // H x W/2 x 1
  Tensor reference_right;  // H x W/2 x 3
  Tensor groundtruth;      // H x W x 3
};

using SampleLookup = std::function<const ImageSample&(const std::string& id)>;

/// Reference drawn uniformly from the first `k` stored neighbors of the
/// sample (`k` <= 0 means the index's k).
TrainingExample make_training_example(const ImageSample& sample, const Sketch& sketch, const ReferenceIndex& index,
                                      const SampleLookup& lookup, Rng& rng, int k = 0);

/// A prepared dataset directory: images/, sketches/, index.json.
struct Dataset {
  std::vector<ImageSample> samples;
  std::vector<Sketch> sketches;
  ReferenceIndex index;

  const ImageSample& sample(const std::string& id) const;
  const Sketch& sketch(const std::string& id) const;
  SampleLookup lookup() const;
};

struct PrepareOptions {
  double threshold = kDefaultSketchThreshold;
  int k = kDefaultNeighbors;
  std::uint64_t seed = 0;
  int height = 64;
  int width = 128;
};

/// Reads every PNG/JPEG under `images_dir` (sorted by name, id = file stem),
/// resizes to the target resolution, and derives sketches and the index.
Dataset prepare_dataset(const std::filesystem::path& images_dir, const PrepareOptions& options,
                        const EdgePlugin& detector, const EmbeddingPlugin& embedder);
void save_dataset(const Dataset& dataset, const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace rego
