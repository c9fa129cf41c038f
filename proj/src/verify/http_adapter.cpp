// HTTP black-box adapter: the owner's side of a probability-available API.
// Request: {"height":H,"width":W,"images":[[H*W floats row-major], ...]}
// Response: {"probs":[[K floats], ...]}

#include <httplib.h>
#include <json.hpp>

#include "xmark/verify/verify.hpp"

namespace xmark::verify {

namespace {

class HttpBlackBox final : public BlackBoxModel {
 public:
  explicit HttpBlackBox(const HttpAdapterConfig& cfg) : cfg_(cfg) {
    XM_CHECK(cfg_.port > 0, "http black box needs a port");
    XM_CHECK(cfg_.batch_size >= 1, "http black box batch size must be >= 1");
  }

  Tensor query(const Tensor& images_nchw) override {
    XM_CHECK(images_nchw.rank() == 4 && images_nchw.dim(1) == 1,
             "http query expects [N,1,H,W]");
    int n = images_nchw.dim(0), h = images_nchw.dim(2), w = images_nchw.dim(3);
    std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({n, cfg_.num_classes});

    httplib::Client client(cfg_.host, cfg_.port);
    client.set_read_timeout(cfg_.timeout_s, 0);
    client.set_write_timeout(cfg_.timeout_s, 0);

    for (int b0 = 0; b0 < n; b0 += cfg_.batch_size) {
      int bs = std::min(cfg_.batch_size, n - b0);
      nlohmann::json req;
      req["height"] = h;
      req["width"] = w;
      nlohmann::json images = nlohmann::json::array();
      for (int i = 0; i < bs; ++i) {
        const float* p = images_nchw.data() + static_cast<std::size_t>(b0 + i) * plane;
        images.push_back(std::vector<float>(p, p + plane));
      }
      req["images"] = std::move(images);

      auto res = client.Post(cfg_.endpoint, req.dump(), "application/json");
      XM_CHECK(res != nullptr, "black-box query failed: no response from ", cfg_.host, ":",
               cfg_.port, cfg_.endpoint, " after ", b0, " of ", n, " samples");
      XM_CHECK(res->status == 200, "black-box query failed: HTTP ", res->status, " after ", b0,
               " of ", n, " samples");
      nlohmann::json body = nlohmann::json::parse(res->body);
      const auto& probs = body.at("probs");
      XM_CHECK(static_cast<int>(probs.size()) == bs, "black-box response row count mismatch");
      for (int i = 0; i < bs; ++i) {
        auto row = probs[static_cast<std::size_t>(i)].get<std::vector<double>>();
        XM_CHECK(static_cast<int>(row.size()) == cfg_.num_classes,
                 "black-box response class count mismatch");
        for (int k = 0; k < cfg_.num_classes; ++k)
          out.at(static_cast<std::size_t>(b0 + i) * cfg_.num_classes + static_cast<std::size_t>(k)) =
              static_cast<float>(row[static_cast<std::size_t>(k)]);
      }
    }
    return out;
  }

  int input_resolution() const override { return cfg_.resolution; }
  int num_classes() const override { return cfg_.num_classes; }

 private:
  HttpAdapterConfig cfg_;
};

}  // namespace

std::unique_ptr<BlackBoxModel> make_http_blackbox(const HttpAdapterConfig& cfg) {
  return std::make_unique<HttpBlackBox>(cfg);
}

}  // namespace xmark::verify
