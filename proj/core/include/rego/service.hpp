#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rego/checkpoint.hpp"
#include "rego/dataprep.hpp"
#include "rego/generator.hpp"

namespace rego {

/// Indexed reference images the service retrieves from. Left-half embeddings
/// are precomputed so a bare left image can be matched against the pool.
struct ReferencePool {
  ReferenceIndex index;
  std::map<std::string, Tensor> images;
  std::unique_ptr<EmbeddingPlugin> embedder;
  std::vector<std::vector<double>> left_embeddings;  // aligned with index.ids()

  /// `path` is a prepared dataset directory or the index.json inside one.
  static std::shared_ptr<const ReferencePool> load(const std::filesystem::path& path);
  static std::shared_ptr<const ReferencePool> from_dataset(const Dataset& dataset);

  std::vector<Neighbor> rank_left(const Tensor& left, int k) const;
};

struct LoadedModel {
  std::unique_ptr<Model> model;
  int checkpoint_version = 0;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Request handlers are independent of the HTTP transport; `run` binds them
/// to cpp-httplib. Model and pool are swapped atomically between requests.
class OutpaintService {
 public:
  OutpaintService();
  ~OutpaintService();
  OutpaintService(const OutpaintService&) = delete;
  OutpaintService& operator=(const OutpaintService&) = delete;

  void set_model(std::shared_ptr<const LoadedModel> model);
  void set_pool(std::shared_ptr<const ReferencePool> pool);
  void load_checkpoint(const std::filesystem::path& path);
  void load_pool(const std::filesystem::path& path);

  HttpReply outpaint(const std::string& request_body) const;
  /// `image` is an indexed id or a base64 PNG; `k` empty means 5.
  HttpReply neighbors(const std::string& image, const std::optional<std::string>& k) const;
  HttpReply health() const;

  /// Blocks until stop(). Returns false when the port cannot be bound.
  bool run(const std::string& host, int port);
  /// Binds an ephemeral port and serves in the background; returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

 private:
  std::shared_ptr<const LoadedModel> model() const;
  std::shared_ptr<const ReferencePool> pool() const;

  mutable std::mutex mutex_;
  std::shared_ptr<const LoadedModel> model_;
  std::shared_ptr<const ReferencePool> pool_;

  struct Server;
  std::unique_ptr<Server> server_;
};

}  // namespace rego
