#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shadeadapt/c_api.h"

#include <cstdlib>
#include <string>
#include <vector>

TEST_CASE("status names") {
  CHECK(std::string(sa_status_name(SA_OK)) == "ok");
  CHECK(std::string(sa_status_name(SA_ERR_CONFIG)) == "config");
  CHECK(std::string(sa_status_name(SA_ERR_LOAD)) == "load");
}

TEST_CASE("config handle") {
  sa_config* cfg = nullptr;
  REQUIRE(sa_config_parse("preset = toy\n", 0, &cfg) == SA_OK);
  CHECK(std::string(sa_last_error()).empty());
  CHECK(sa_config_set(cfg, "tau", "0.3") == SA_OK);
  CHECK(sa_config_set(cfg, "taux", "0.3") == SA_ERR_CONFIG);
  CHECK(std::string(sa_last_error()).find("did you mean 'tau'") != std::string::npos);
  CHECK(sa_config_set(cfg, "tau", "1.5") == SA_ERR_CONFIG);
  char* text = nullptr;
  REQUIRE(sa_config_to_text(cfg, &text) == SA_OK);
  CHECK(std::string(text).find("tau = 0.29999999999999999") != std::string::npos);
  sa_string_free(text);

  int64_t trainable = 0, total = 0;
  CHECK(sa_census(cfg, nullptr, nullptr, nullptr, &trainable, &total) == SA_OK);
  CHECK(trainable > 0);
  CHECK(total > trainable);
  sa_config_free(cfg);

  CHECK(sa_config_parse("name = sbu\n", 1, &cfg) == SA_ERR_CONFIG);
  CHECK(sa_config_load("/nonexistent/cfg.txt", 0, &cfg) != SA_OK);
  CHECK(sa_config_to_text(nullptr, &text) == SA_ERR_REQUEST);
}

TEST_CASE("numeric kernels") {
  std::vector<float> probs(16, 0.2f);
  probs[5] = 0.9f;
  std::vector<sa_point> pts(4);
  size_t n = 0;
  REQUIRE(sa_grid_sample(probs.data(), 4, 4, 2, 1, 0.5, pts.data(), pts.size(), &n) == SA_OK);
  CHECK(n == 4);
  CHECK(pts[0].x == 1);
  CHECK(pts[0].y == 1);
  CHECK(pts[0].label == 1);
  CHECK(pts[1].label == 0);
  CHECK(sa_grid_sample(probs.data(), 4, 4, 4, 1, 0.5, pts.data(), pts.size(), &n) == SA_ERR_REQUEST);
  CHECK(n == 16);
  CHECK(sa_grid_sample(probs.data(), 4, 4, 5, 1, 0.5, pts.data(), pts.size(), &n) == SA_ERR_REQUEST);
  REQUIRE(sa_topk_sample(probs.data(), 4, 4, 1, 1, pts.data(), pts.size(), &n) == SA_OK);
  CHECK(n == 2);
  CHECK(pts[0].score == 0.9f);

  std::vector<uint8_t> gt{1, 1, 0, 0}, pred{1, 0, 0, 0};
  double ber = -1;
  REQUIRE(sa_ber(pred.data(), gt.data(), 4, &ber) == SA_OK);
  CHECK(ber == 25.0);
  std::vector<uint8_t> bad{3, 0, 0, 0};
  CHECK(sa_ber(bad.data(), gt.data(), 4, &ber) == SA_ERR_REQUEST);

  float p = 0.5f, y = 1.0f;
  double loss = 0;
  REQUIRE(sa_focal_loss(&p, &y, 1, 8.0 / 9.0, 2.0, &loss) == SA_OK);
  CHECK(loss == doctest::Approx(0.154033).epsilon(1e-4));
  CHECK(sa_focal_loss(&p, &y, 1, 1.5, 2.0, &loss) == SA_ERR_CONFIG);
}

TEST_CASE("missing files map to status codes") {
  sa_model* model = nullptr;
  CHECK(sa_model_load("/nonexistent.ckpt", nullptr, &model) != SA_OK);
  CHECK(model == nullptr);
  sa_config* cfg = nullptr;
  REQUIRE(sa_config_parse("preset = toy\nname = custom\nroot = /nonexistent/data\n", 1, &cfg) ==
          SA_OK);
  char* summary = nullptr;
  CHECK(sa_train(cfg, &summary) == SA_ERR_INGEST);
  sa_config_free(cfg);
}
