#include <gtest/gtest.h>

#include "pixmatch/config.hpp"
#include "pixmatch/errors.hpp"

using namespace pixmatch;

namespace {

const char* kMinimal = R"(
[data]
source_manifest = "d/source.manifest"
target_manifest = "d/target.manifest"
)";

}  // namespace

TEST(Toml, ScalarsArraysAndComments) {
  const auto t = parse_toml(R"(
top = 3   # trailing comment
[a]
s = "x \"q\" \\ y"
f = -1.5e-3
b = true
arr = [1, 2.5,
       "z"]
[a.b]
n = -7
)");
  EXPECT_EQ(std::get<std::int64_t>(t.at("top").value), 3);
  EXPECT_EQ(std::get<std::string>(t.at("a.s").value), "x \"q\" \\ y");
  EXPECT_EQ(std::get<double>(t.at("a.f").value), -1.5e-3);
  EXPECT_TRUE(std::get<bool>(t.at("a.b").value));
  const auto& arr = std::get<TomlValue::Array>(t.at("a.arr").value);
  ASSERT_EQ(arr.size(), 3u);
  EXPECT_EQ(std::get<double>(arr[1].value), 2.5);
  EXPECT_EQ(std::get<std::int64_t>(t.at("a.b.n").value), -7);
}

TEST(Toml, SyntaxErrorsNameTheLine) {
  try {
    parse_toml("a = 1\nb = \n", "cfg.toml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.toml:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_toml("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(parse_toml("[open\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = \"unterminated\n"), ConfigError);
  EXPECT_THROW(parse_toml("a = 1 2\n"), ConfigError);
}

TEST(TrainConfigFile, MinimalUsesDefaults) {
  const auto cfg = parse_train_config(kMinimal, "/base");
  EXPECT_EQ(cfg.source_manifest, std::filesystem::path("/base/d/source.manifest"));
  EXPECT_EQ(cfg.eval_path(), cfg.target_manifest);
  EXPECT_EQ(cfg.optim.base_lr, 1e-4);
  EXPECT_EQ(cfg.optim.momentum, 0.9);
  EXPECT_EQ(cfg.loss.lambda_t, 0.1);
  EXPECT_EQ(cfg.eval_every, 500u);
  EXPECT_EQ(cfg.fourier.beta, 0.01);
  EXPECT_EQ(cfg.augment.gray_prob, 0.2);
  ASSERT_EQ(cfg.perturbations.size(), 1u);
  EXPECT_EQ(cfg.perturbations[0], PerturbKind::augment);
}

TEST(TrainConfigFile, FieldsAreRead) {
  const auto cfg = parse_train_config(std::string(kMinimal) + R"(
eval_manifest = "held/target.manifest"
[model]
num_classes = 4
widths = [8, 16, 24]
[optim]
base_lr = 0.01
max_iter = 300
[loss]
lambda_t = 0.05
tau = 0.9
lambda_msl = 0.1
soft = true
[perturb]
order = ["fourier", "cutmix"]
[perturb.cutmix]
ratio = [0.2, 0.3]
[perturb.fourier]
beta = 0.05
[run]
seed = 12
eval_every = 100
out_dir = "runs/x"
)",
                                       "/b");
  EXPECT_EQ(cfg.eval_path(), std::filesystem::path("/b/held/target.manifest"));
  EXPECT_EQ(cfg.model.num_classes, 4u);
  EXPECT_EQ(cfg.model.widths, (std::vector<std::size_t>{8, 16, 24}));
  EXPECT_EQ(cfg.model.init_seed, 12u);
  EXPECT_EQ(cfg.optim.max_iter, 300u);
  EXPECT_EQ(cfg.loss.tau, 0.9);
  EXPECT_TRUE(cfg.loss.soft);
  EXPECT_EQ(cfg.perturbations, (std::vector<PerturbKind>{PerturbKind::fourier, PerturbKind::cutmix}));
  EXPECT_EQ(cfg.cutmix.ratio_max, 0.3);
  EXPECT_EQ(cfg.fourier.beta, 0.05);
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_EQ(cfg.out_dir, std::filesystem::path("/b/runs/x"));
  EXPECT_EQ(cfg.perturbation_chain().size(), 2u);
}

TEST(TrainConfigFile, RoundTripThroughToml) {
  auto cfg = parse_train_config(std::string(kMinimal) + R"(
[loss]
lambda_t = 0.15
tau = 0.95
[optim]
base_lr = 0.0123456789012345
[perturb.augment]
crop_scale = [0.3, 0.9]
hue_shift = 0.05
)",
                                  "/");
  const auto again = parse_train_config(to_toml(cfg), "/");
  EXPECT_EQ(to_toml(again), to_toml(cfg));
  EXPECT_EQ(again.optim.base_lr, cfg.optim.base_lr);
  EXPECT_EQ(again.augment.crop_scale_min, 0.3);
  EXPECT_EQ(again.augment.hue_shift, 0.05);
  EXPECT_EQ(again.loss.tau, 0.95);
  EXPECT_EQ(again.source_manifest, cfg.source_manifest);
}

TEST(TrainConfigFile, Errors) {
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[loss]\nlamda_t = 0.1\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config("[data]\ntarget_manifest = \"t\"\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config("[data]\nsource_manifest = \"s\"\n[loss]\nlambda_t = 0.1\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[perturb]\norder = [\"style\"]\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[perturb]\norder = []\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[loss]\ntau = 1.5\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[optim]\nmax_iter = -3\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[optim]\nbase_lr = \"fast\"\n", "/"), ConfigError);
  EXPECT_THROW(parse_train_config(std::string(kMinimal) + "[run]\neval_every = 0\n", "/"), ConfigError);
  EXPECT_THROW(load_train_config("/nonexistent/config.toml"), ConfigError);
}

TEST(TrainConfigFile, SourceOnlyNeedsNoTargetStream) {
  auto cfg = parse_train_config(R"(
[data]
source_manifest = "s"
eval_manifest = "e"
[loss]
lambda_t = 0.0
)",
                                "/");
  EXPECT_FALSE(cfg.uses_target());
  cfg.loss.lambda_ent = 0.1;
  EXPECT_TRUE(cfg.uses_target());
}
