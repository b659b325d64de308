#include "rego/service.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>

#include "rego/errors.hpp"
#include "rego/image_io.hpp"
#include "rego/logging.hpp"

namespace rego {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kThumbHeight = 32;

HttpReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::string png_b64(const Tensor& t) { return base64_encode(encode_png(t)); }

Tensor decode_b64_image(const std::string& text, int channels, const char* what) {
  try {
    return decode_image(base64_decode(text), channels);
  } catch (const Error& e) {
    throw InvalidValueError(std::string(what) + " is not a decodable image: " + e.what());
  }
}

}  // namespace

std::shared_ptr<const ReferencePool> ReferencePool::from_dataset(const Dataset& dataset) {
  auto pool = std::make_shared<ReferencePool>();
  pool->index = dataset.index;
  pool->embedder = make_embedder(dataset.index.embedder_id());
  for (const auto& s : dataset.samples) pool->images.emplace(s.id, s.pixels);
  for (const auto& id : pool->index.ids()) {
    auto e = pool->embedder->embed(left_half(pool->images.at(id)));
    normalize_embedding(e);
    pool->left_embeddings.push_back(std::move(e));
  }
  return pool;
}

std::shared_ptr<const ReferencePool> ReferencePool::load(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  if (!fs::exists(dir / "index.json")) throw IoError("no index.json at " + dir.string());
  if (!fs::is_directory(dir / "images")) throw IoError("no images/ directory next to the index in " + dir.string());
  return from_dataset(load_dataset(dir));
}

std::vector<Neighbor> ReferencePool::rank_left(const Tensor& left, int k) const {
  auto q = embedder->embed(left);
  normalize_embedding(q);
  std::vector<Neighbor> all;
  all.reserve(left_embeddings.size());
  for (std::size_t i = 0; i < left_embeddings.size(); ++i) all.push_back({index.ids()[i], cosine(q, left_embeddings[i])});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

struct OutpaintService::Server {
  httplib::Server http;
  std::thread thread;
};

OutpaintService::OutpaintService() = default;

OutpaintService::~OutpaintService() { stop(); }

void OutpaintService::set_model(std::shared_ptr<const LoadedModel> model) {
  std::lock_guard lock(mutex_);
  model_ = std::move(model);
}

void OutpaintService::set_pool(std::shared_ptr<const ReferencePool> pool) {
  std::lock_guard lock(mutex_);
  pool_ = std::move(pool);
}

std::shared_ptr<const LoadedModel> OutpaintService::model() const {
  std::lock_guard lock(mutex_);
  return model_;
}

std::shared_ptr<const ReferencePool> OutpaintService::pool() const {
  std::lock_guard lock(mutex_);
  return pool_;
}

void OutpaintService::load_checkpoint(const fs::path& path) {
  const ModelCheckpoint ckpt = rego::load_checkpoint(path);
  auto loaded = std::make_shared<LoadedModel>();
  loaded->model = model_from_checkpoint(ckpt);
  loaded->checkpoint_version = ckpt.version;
  set_model(std::move(loaded));
  log::info("service: loaded checkpoint " + path.string());
}

void OutpaintService::load_pool(const fs::path& path) {
  set_pool(ReferencePool::load(path));
  log::info("service: loaded reference pool " + path.string());
}

HttpReply OutpaintService::outpaint(const std::string& request_body) const {
  const auto start = std::chrono::steady_clock::now();
  const auto m = model();
  if (!m) return error_reply(503, "model not loaded");
  const auto p = pool();
  const GeneratorConfig& cfg = m->model->config();

  json req;
  try {
    req = json::parse(request_body);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("request is not valid JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("left_image") || !req["left_image"].is_string()) {
    return error_reply(400, "left_image (base64 PNG) is required");
  }
  const std::string mode = req.value("mode", req.contains("sketch") ? "sketch" : "random");
  if (mode != "sketch" && mode != "random") return error_reply(400, "mode must be \"sketch\" or \"random\"");

  try {
    const Tensor left = decode_b64_image(req["left_image"].get<std::string>(), 3, "left_image");
    if (left.height() != cfg.height || left.width() != cfg.half_width()) {
      return error_reply(400, "left_image is " + left.shape_string() + ", expected " + std::to_string(cfg.height) + "x" +
                                  std::to_string(cfg.half_width()));
    }

    std::optional<Tensor> sketch;
    if (mode == "sketch") {
      if (!req.contains("sketch") || !req["sketch"].is_string()) return error_reply(400, "sketch mode requires a sketch");
      const Tensor gray = decode_b64_image(req["sketch"].get<std::string>(), 1, "sketch");
      if (gray.height() != cfg.height || gray.width() != cfg.half_width()) {
        return error_reply(400, "sketch is " + gray.shape_string() + ", expected " + std::to_string(cfg.height) + "x" +
                                    std::to_string(cfg.half_width()));
      }
      sketch = binarize(gray, 0.5).mask;
    }

    std::optional<Tensor> reference;
    std::string reference_id;
    if (req.contains("reference_id") && !req["reference_id"].is_null()) {
      if (!req["reference_id"].is_string()) return error_reply(400, "reference_id must be a string");
      reference_id = req["reference_id"].get<std::string>();
      if (!p || !p->images.count(reference_id)) return error_reply(404, "unknown reference_id '" + reference_id + "'");
    } else if (p && p->index.size() > 0) {
      reference_id = p->rank_left(left, 1).front().id;
    }
    if (!reference_id.empty()) {
      const Tensor& ref = p->images.at(reference_id);
      if (ref.height() != cfg.height || ref.width() != cfg.width) {
        return error_reply(400, "reference image resolution does not match the checkpoint");
      }
      reference = right_half(ref);
    }

    const OutpaintResult out = rego::outpaint(*m->model, left, sketch, reference);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return {200,
            {{"composite", png_b64(out.composite)},
             {"right_half", png_b64(out.right_half)},
             {"reference_id_used", reference_id},
             {"latency_ms", ms}}};
  } catch (const InvalidValueError& e) {
    return error_reply(400, e.what());
  } catch (const ShapeError& e) {
    return error_reply(400, e.what());
  } catch (const ConfigError& e) {
    return error_reply(400, e.what());
  }
}

HttpReply OutpaintService::neighbors(const std::string& image, const std::optional<std::string>& k_text) const {
  const auto p = pool();
  if (!p) return error_reply(503, "index not loaded");
  if (image.empty()) return error_reply(400, "image parameter is required");

  const bool indexed = p->index.contains(image);
  const int candidates = static_cast<int>(p->index.size()) - (indexed ? 1 : 0);
  int k = std::min(kDefaultNeighbors, candidates);
  if (k_text) {
    try {
      std::size_t used = 0;
      k = std::stoi(*k_text, &used);
      if (used != k_text->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      return error_reply(400, "k must be an integer");
    }
    if (k < 1 || k > candidates) return error_reply(400, "k must lie in [1, " + std::to_string(candidates) + "]");
  }

  std::vector<Neighbor> ranked;
  try {
    if (indexed) {
      ranked = p->index.rank(p->index.embedding(p->index.position(image)), k, image);
    } else {
      const Tensor img = decode_b64_image(image, 3, "image");
      const auto full = p->images.begin()->second;
      if (img.height() == full.height() && img.width() * 2 == full.width()) {
        ranked = p->rank_left(img, k);
      } else {
        auto q = p->embedder->embed(img);
        normalize_embedding(q);
        ranked = p->index.rank(q, k);
      }
    }
  } catch (const InvalidValueError& e) {
    return error_reply(400, e.what());
  } catch (const IoError& e) {
    return error_reply(400, e.what());
  } catch (const DegenerateEmbeddingError& e) {
    return error_reply(400, e.what());
  }

  json list = json::array();
  for (const auto& n : ranked) {
    const Tensor& src = p->images.at(n.id);
    const int th = std::min(kThumbHeight, src.height());
    const int tw = std::max(1, src.width() * th / src.height());
    list.push_back({{"id", n.id}, {"similarity", n.similarity}, {"thumbnail", png_b64(resize(src, th, tw))}});
  }
  return {200, {{"neighbors", list}}};
}

HttpReply OutpaintService::health() const {
  const auto m = model();
  const auto p = pool();
  json body{{"status", m ? "ready" : "loading"},
            {"checkpoint_version", m ? json(m->checkpoint_version) : json(nullptr)},
            {"index_size", p ? p->index.size() : 0}};
  return {200, body};
}

namespace {

void send(httplib::Response& res, const HttpReply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

void bind_routes(httplib::Server& http, const OutpaintService& svc) {
  http.Post("/outpaint", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.outpaint(req.body)); });
  http.Get("/neighbors", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> k;
    if (req.has_param("k")) k = req.get_param_value("k");
    send(res, svc.neighbors(req.get_param_value("image"), k));
  });
  http.Get("/health", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  // The sketch UI is served from another origin during development.
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    log::error("service: " + what);
    send(res, error_reply(500, what));
  });
}

}  // namespace

bool OutpaintService::run(const std::string& host, int port) {
  server_ = std::make_unique<Server>();
  bind_routes(server_->http, *this);
  log::info("service: listening on " + host + ":" + std::to_string(port));
  return server_->http.listen(host, port);
}

int OutpaintService::start_background(const std::string& host) {
  server_ = std::make_unique<Server>();
  bind_routes(server_->http, *this);
  const int port = server_->http.bind_to_any_port(host);
  if (port < 0) throw IoError("cannot bind a port on " + host);
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return port;
}

void OutpaintService::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

}  // namespace rego
