#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "diec/checkpoint.hpp"
#include "diec/clusterability.hpp"
#include "diec/config.hpp"
#include "diec/dataset.hpp"
#include "diec/diec_train.hpp"
#include "diec/experiment.hpp"
#include "diec/metrics.hpp"
#include "diec/svg.hpp"

using namespace diec;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("diec_io_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
  fs::create_directories(p);
  return p.string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void put_u32be(std::string& s, uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Two 2x3 images with all-corner pixel values, labels 3 and 7.
std::pair<std::string, std::string> tiny_idx_pair() {
  std::string img;
  put_u32be(img, 0x803);
  put_u32be(img, 2);
  put_u32be(img, 2);
  put_u32be(img, 3);
  for (unsigned char b : {0, 255, 128, 64, 32, 16}) img.push_back(static_cast<char>(b));
  for (unsigned char b : {1, 2, 3, 4, 5, 6}) img.push_back(static_cast<char>(b));
  std::string lab;
  put_u32be(lab, 0x801);
  put_u32be(lab, 2);
  lab.push_back(3);
  lab.push_back(7);
  return {img, lab};
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.dataset.kind = DatasetKind::GAUSSIAN_DIGITS;
  c.dataset.image_size = 20;
  c.dataset.classes = 5;
  c.dataset.per_class = 7;
  c.dataset.seed = 9;
  c.dataset.noise = 0.5;
  c.backbone.image_size = 20;
  c.backbone.widths = {4, 8, 12, 16};
  c.backbone.temb_dim = 32;
  c.schedule.timesteps = 50;
  c.schedule.beta_start = 2e-4;
  c.schedule.beta_end = 0.03;
  c.pretrain.epochs = 3;
  c.pretrain.batch = 16;
  c.pretrain.lr = 5e-4;
  c.search.T_s = 40;
  c.search.dt = 10;
  c.search.m = 20;
  c.search.R = 2;
  c.search.d = 6;
  c.search.w = 3;
  c.search.rho = 0.5;
  c.search.patience = 2;
  c.search.K = 5;
  c.search.kmeans_restarts = 3;
  c.search.kmeans_iters = 50;
  c.diec.K = 5;
  c.diec.alpha_kl = 0.2;
  c.diec.beta_gr = 0.02;
  c.diec.gamma_en = 0.002;
  c.diec.init_trials = 2;
  c.diec.target_interval = 3;
  c.diec.knn = 4;
  c.diec.epochs = 5;
  c.diec.batch = 8;
  c.diec.lr = 2e-3;
  c.sample_count = 4;
  c.seed = 77;
  c.out = "rt";
  return c;
}

}  // namespace

TEST_CASE("synthetic shapes dataset basics") {
  DatasetSpec spec;
  spec.classes = 3;
  spec.per_class = 10;
  spec.seed = 5;
  Dataset ds = generate_synthetic(spec);
  REQUIRE(ds.images.rank() == 4);
  REQUIRE(ds.images.dim(0) == 30);
  REQUIRE(ds.images.dim(1) == 1);
  REQUIRE(ds.images.dim(2) == 16);
  REQUIRE(ds.images.dim(3) == 16);
  REQUIRE(ds.labels.size() == 30);
  for (size_t i = 0; i < ds.images.numel(); ++i) {
    REQUIRE(ds.images[i] >= -1.0f);
    REQUIRE(ds.images[i] <= 1.0f);
  }
  auto hist = label_histogram(ds.labels, 3);
  for (size_t c = 0; c < 3; ++c) REQUIRE(hist[c] == 10);

  // Deterministic regeneration.
  Dataset ds2 = generate_synthetic(spec);
  REQUIRE(ds2.labels == ds.labels);
  REQUIRE(0 == std::memcmp(ds.images.data(), ds2.images.data(),
                           ds.images.numel() * sizeof(float)));

  // The shuffle must have broken the class-block layout.
  bool all_first_class = true;
  for (int i = 0; i < 10; ++i) all_first_class &= ds.labels[i] == 0;
  REQUIRE(!all_first_class);
}

TEST_CASE("noiseless images collapse onto the placement grid") {
  DatasetSpec spec;
  spec.classes = 3;
  spec.per_class = 40;
  spec.noise = 0.0;
  spec.seed = 6;
  Dataset ds = generate_synthetic(spec);
  const size_t px = 16 * 16;
  // placement offsets lie on a (2*2+1)^2 grid at S = 16
  const size_t max_distinct = 25;
  for (int c = 0; c < 3; ++c) {
    std::set<std::string> uniq;
    for (size_t i = 0; i < ds.labels.size(); ++i)
      if (ds.labels[i] == static_cast<uint32_t>(c))
        uniq.emplace(reinterpret_cast<const char*>(ds.images.data() + i * px),
                     px * sizeof(float));
    REQUIRE(uniq.size() <= max_distinct);
    REQUIRE(uniq.size() >= 2);  // placement jitter is actually present
  }
}

TEST_CASE("empty and invalid dataset specs") {
  DatasetSpec spec;
  spec.per_class = 0;
  Dataset ds = generate_synthetic(spec);
  REQUIRE(ds.images.dim(0) == 0);
  REQUIRE(ds.labels.empty());

  DatasetSpec bad;
  bad.image_size = 7;
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.classes = 0;
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.classes = 9;
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.per_class = -1;
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.noise = -0.1;
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.normalization = "unit";
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);
  bad = DatasetSpec{};
  bad.kind = DatasetKind::IDX_PAIR;
  REQUIRE_THROWS_AS(bad.validate(), param_error);  // paths required
  bad.idx_images = "a";
  bad.idx_labels = "b";
  REQUIRE_THROWS_AS(generate_synthetic(bad), param_error);  // loaded, not generated

  REQUIRE_THROWS_AS(dataset_kind_from_name("mnist"), param_error);
  REQUIRE(dataset_kind_from_name(dataset_kind_name(DatasetKind::SHAPES)) ==
          DatasetKind::SHAPES);
}

TEST_CASE("pixel-space kmeans is above chance but far from solved") {
  // This gap is the headroom the learned features are supposed to close.
  DatasetSpec spec;  // default: 4-class shapes, 16x16, noise 0.35
  Dataset ds = generate_synthetic(spec);
  Tensorf flat = detail::flatten_rows(ds.images);
  Rng rng(7);
  KMeansResult km = kmeans(flat, spec.classes, 5, 100, rng);
  double acc = hungarian_acc(ds.labels, km.assignments);
  REQUIRE(acc > 0.30);  // chance is 0.25
  REQUIRE(acc < 0.80);

  DatasetSpec dig;
  dig.kind = DatasetKind::GAUSSIAN_DIGITS;
  Dataset dd = generate_synthetic(dig);
  Rng rng2(7);
  KMeansResult km2 = kmeans(detail::flatten_rows(dd.images), dig.classes, 5, 100, rng2);
  double acc2 = hungarian_acc(dd.labels, km2.assignments);
  REQUIRE(acc2 > 0.35);
  REQUIRE(acc2 < 0.85);
}

TEST_CASE("label_histogram rejects out-of-range labels") {
  REQUIRE_THROWS_AS(label_histogram({0, 1, 5}, 3), data_error);
  auto h = label_histogram({0, 0, 2}, 3);
  REQUIRE(h == std::vector<size_t>{2, 0, 1});
}

TEST_CASE("idx pair loads with exact value mapping") {
  auto [img, lab] = tiny_idx_pair();
  std::string dir = fresh_dir("idx");
  write_bytes(dir + "/im.idx", img);
  write_bytes(dir + "/la.idx", lab);
  Dataset ds = load_idx(dir + "/im.idx", dir + "/la.idx");
  REQUIRE(ds.images.dim(0) == 2);
  REQUIRE(ds.images.dim(1) == 1);
  REQUIRE(ds.images.dim(2) == 2);
  REQUIRE(ds.images.dim(3) == 3);
  REQUIRE(ds.labels == std::vector<uint32_t>{3, 7});
  REQUIRE(ds.images[0] == -1.0f);                                  // byte 0
  REQUIRE(ds.images[1] == 1.0f);                                   // byte 255
  REQUIRE(ds.images[2] == static_cast<float>(128 / 255.0 * 2 - 1)); // byte 128
  REQUIRE(ds.images[6] == static_cast<float>(1 / 255.0 * 2 - 1));   // second image
}

TEST_CASE("idx rejects malformed containers") {
  auto [img, lab] = tiny_idx_pair();
  std::string dir = fresh_dir("idxbad");
  auto stage = [&](const std::string& i, const std::string& l) {
    write_bytes(dir + "/im.idx", i);
    write_bytes(dir + "/la.idx", l);
  };

  stage(img.substr(0, 10), lab);
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  std::string bad_magic = img;
  bad_magic[3] = 0x01;
  stage(bad_magic, lab);
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  stage(img + "x", lab);  // payload size mismatch
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  std::string lab_bad_magic = lab;
  lab_bad_magic[3] = 0x03;
  stage(img, lab_bad_magic);
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  stage(img, lab.substr(0, 6));  // truncated label header
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  std::string lab3;  // count disagrees with the image file
  put_u32be(lab3, 0x801);
  put_u32be(lab3, 3);
  lab3.append(3, '\0');
  stage(img, lab3);
  REQUIRE_THROWS_AS(load_idx(dir + "/im.idx", dir + "/la.idx"), data_error);

  REQUIRE_THROWS_AS(load_idx(dir + "/missing.idx", dir + "/la.idx"), data_error);
}

TEST_CASE("resize_center pads, crops, and passes through") {
  Tensorf x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensorf same = resize_center(x, 2);
  REQUIRE(0 == std::memcmp(same.data(), x.data(), x.numel() * sizeof(float)));

  Tensorf pad = resize_center(x, 4);
  REQUIRE(pad.dim(2) == 4);
  REQUIRE(pad.dim(3) == 4);
  // content lands at offset (1, 1); background is -1
  REQUIRE(pad.at4(0, 0, 0, 0) == -1.0f);
  REQUIRE(pad.at4(0, 0, 1, 1) == 1.0f);
  REQUIRE(pad.at4(0, 0, 1, 2) == 2.0f);
  REQUIRE(pad.at4(0, 0, 2, 1) == 3.0f);
  REQUIRE(pad.at4(0, 0, 2, 2) == 4.0f);
  REQUIRE(pad.at4(0, 0, 3, 3) == -1.0f);

  Tensorf big({1, 1, 4, 4});
  for (size_t i = 0; i < 16; ++i) big[i] = static_cast<float>(i);
  Tensorf crop = resize_center(big, 2);
  // keeps the central 2x2 block: rows 1..2, cols 1..2
  REQUIRE(crop.at4(0, 0, 0, 0) == 5.0f);
  REQUIRE(crop.at4(0, 0, 0, 1) == 6.0f);
  REQUIRE(crop.at4(0, 0, 1, 0) == 9.0f);
  REQUIRE(crop.at4(0, 0, 1, 1) == 10.0f);

  Tensorf flat({2, 4});
  REQUIRE_THROWS_AS(resize_center(flat, 4), shape_error);
}

TEST_CASE("checkpoint container round-trips byte-identically") {
  Checkpoint ck;
  ck.meta = "{\"stage\":\"test\"}";
  Rng rng(13);
  Tensorf a({3, 4});
  rng.fill_normal(a);
  Tensorf b({2, 1, 5, 5});
  rng.fill_normal(b);
  Tensorf c({7});
  rng.fill_normal(c);
  ck.records = {{"alpha", a}, {"beta", b}, {"gamma", c}};

  std::string buf = checkpoint_encode(ck);
  Checkpoint rt = checkpoint_decode(buf);
  REQUIRE(rt.meta == ck.meta);
  REQUIRE(rt.records.size() == 3);
  REQUIRE(rt.records[1].first == "beta");
  REQUIRE(checkpoint_encode(rt) == buf);

  REQUIRE(ck.find("gamma") != nullptr);
  REQUIRE(ck.find("delta") == nullptr);
  const Tensorf* got = rt.find("alpha");
  REQUIRE(got->shape() == a.shape());
  REQUIRE(0 == std::memcmp(got->data(), a.data(), a.numel() * sizeof(float)));

  std::string dir = fresh_dir("ck");
  checkpoint_save(ck, dir + "/m.dck");
  Checkpoint from_file = checkpoint_load(dir + "/m.dck");
  REQUIRE(checkpoint_encode(from_file) == buf);
}

TEST_CASE("checkpoint decoder rejects damage") {
  Checkpoint ck;
  ck.meta = "{}";
  Tensorf t({2, 2}, std::vector<float>{1, 2, 3, 4});
  ck.records = {{"t", t}};
  std::string buf = checkpoint_encode(ck);

  REQUIRE_THROWS_AS(checkpoint_decode("DCK"), data_error);
  std::string wrong = buf;
  wrong[0] = 'X';
  REQUIRE_THROWS_AS(checkpoint_decode(wrong), data_error);
  std::string ver = buf;
  ver[4] = 2;
  REQUIRE_THROWS_AS(checkpoint_decode(ver), data_error);
  REQUIRE_THROWS_AS(checkpoint_decode(buf.substr(0, 13)), data_error);
  REQUIRE_THROWS_AS(checkpoint_decode(buf + "x"), data_error);
  // record count (after the 2-byte meta) says one more than present
  std::string over = buf;
  over[14] = 2;
  REQUIRE_THROWS_AS(checkpoint_decode(over), data_error);
  REQUIRE_THROWS_AS(checkpoint_load("/nonexistent/path.dck"), data_error);
}

TEST_CASE("model and head survive a checkpoint cycle") {
  ArchDescriptor arch;
  arch.image_size = 16;
  arch.widths = {8, 8, 8, 8};
  arch.temb_dim = 16;
  Rng ra(101), rb(202), rh(303), rh2(404);
  UNetf src(arch, ra);
  UNetf dst(arch, rb);
  ResidualHead<float> hsrc(8, rh);
  ResidualHead<float> hdst(8, rh2);

  Checkpoint ck;
  ck.meta = "{}";
  checkpoint_add_model(ck, src);
  checkpoint_add_head(ck, hsrc);
  Checkpoint rt = checkpoint_decode(checkpoint_encode(ck));
  checkpoint_load_model(rt, dst);
  checkpoint_load_head(rt, hdst);

  auto ps = src.params(), pd = dst.params();
  REQUIRE(ps.size() == pd.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    REQUIRE(ps[i]->shape() == pd[i]->shape());
    REQUIRE(0 == std::memcmp(ps[i]->data(), pd[i]->data(),
                             ps[i]->numel() * sizeof(float)));
  }
  REQUIRE(0 == std::memcmp(hsrc.w1.data(), hdst.w1.data(),
                           hsrc.w1.numel() * sizeof(float)));

  Checkpoint missing = rt;
  missing.records.pop_back();  // drops head.b2
  REQUIRE_THROWS_AS(checkpoint_load_head(missing, hdst), data_error);

  Checkpoint wrong_shape = rt;
  wrong_shape.records[0].second = Tensorf({1});
  REQUIRE_THROWS_AS(checkpoint_load_model(wrong_shape, dst), shape_error);
}

TEST_CASE("config json round-trips canonically") {
  ExperimentConfig c = small_config();
  config_validate(c);
  std::string canon = config_canonical(c);
  ExperimentConfig c2 = config_from_json(config_to_json(c));
  REQUIRE(config_canonical(c2) == canon);
  REQUIRE(config_hash(c2) == config_hash(c));
  REQUIRE(config_hash(c).size() == 16);
  for (char ch : config_hash(c)) REQUIRE(std::string("0123456789abcdef").find(ch) != std::string::npos);

  // Cluster count and geometry follow the dataset.
  REQUIRE(c2.search.K == 5);
  REQUIRE(c2.diec.K == 5);
  REQUIRE(c2.backbone.image_size == 20);

  // Any field change moves the hash.
  ExperimentConfig c3 = small_config();
  c3.dataset.per_class = 8;
  REQUIRE(config_hash(c3) != config_hash(c));
}

TEST_CASE("config parser rejects unknown keys and bad values") {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::object();
  REQUIRE_THROWS_AS(config_from_json(j), param_error);

  nlohmann::json j2;
  j2["diec"] = {{"alpha_kl", 0.1}};  // the key is spelled "alpha"
  REQUIRE_THROWS_AS(config_from_json(j2), param_error);

  nlohmann::json j3;
  j3["pretrain"] = {{"epochs", "ten"}};
  REQUIRE_THROWS_AS(config_from_json(j3), param_error);

  nlohmann::json ok;
  ok["dataset"] = {{"classes", 3}};
  ExperimentConfig c = config_from_json(ok);
  REQUIRE(c.dataset.classes == 3);
  REQUIRE(c.diec.K == 3);

  std::string dir = fresh_dir("cfg");
  REQUIRE_THROWS_AS(config_from_file(dir + "/none.json"), data_error);
  write_bytes(dir + "/bad.json", "not json");
  REQUIRE_THROWS_AS(config_from_file(dir + "/bad.json"), param_error);
  write_bytes(dir + "/ok.json", "{\"seed\": 4}");
  REQUIRE(config_from_file(dir + "/ok.json").seed == 4);
}

TEST_CASE("config validation checks cross-field constraints") {
  ExperimentConfig c = small_config();
  config_validate(c);
  ExperimentConfig bad = c;
  bad.backbone.temb_dim = 15;
  REQUIRE_THROWS_AS(config_validate(bad), param_error);
  bad = c;
  bad.search.T_s = 51;  // beyond schedule.timesteps
  REQUIRE_THROWS_AS(config_validate(bad), param_error);
  bad = c;
  bad.backbone.in_channels = 3;
  REQUIRE_THROWS_AS(config_validate(bad), param_error);
  bad = c;
  bad.backbone.widths[2] = 0;
  REQUIRE_THROWS_AS(config_validate(bad), param_error);
  bad = c;
  bad.sample_count = -1;
  REQUIRE_THROWS_AS(config_validate(bad), param_error);
}

TEST_CASE("csv emitters round-trip through the reader") {
  std::vector<EpochLog> log(2);
  log[0].epoch = 1;
  log[0].l_re = 0.987654321987654;
  log[0].l_kl = 1e-17;
  log[0].acc = 0.75;
  log[1].epoch = 2;
  log[1].l_re = 0.5;
  log[1].label_change = 1.0 / 3.0;
  std::string dir = fresh_dir("csv");
  write_text_file(dir + "/train_log.csv", csv_train_log("cafe0123cafe0123", log));

  expdetail::CsvTable t = expdetail::read_csv(dir + "/train_log.csv");
  REQUIRE(t.hash == "cafe0123cafe0123");
  REQUIRE(t.header.size() == 10);
  REQUIRE(t.header[0] == "epoch");
  REQUIRE(t.header[9] == "denoise_probe");
  REQUIRE(t.rows.size() == 2);
  REQUIRE(t.rows[0][0] == 1.0);
  REQUIRE(t.rows[0][1] == log[0].l_re);  // %.17g is lossless for doubles
  REQUIRE(t.rows[0][2] == log[0].l_kl);
  REQUIRE(t.rows[1][8] == log[1].label_change);
  REQUIRE(std::isnan(t.rows[1][5]));  // acc unset -> nan text -> nan value

  std::string pre = csv_pretrain_log("cafe0123cafe0123", {1.25, 0.5});
  write_text_file(dir + "/p.csv", pre);
  expdetail::CsvTable tp = expdetail::read_csv(dir + "/p.csv");
  REQUIRE(tp.header == std::vector<std::string>{"epoch", "loss"});
  REQUIRE(tp.rows.size() == 2);
  REQUIRE(tp.rows[1][1] == 0.5);

  ScoreGrid grid;
  grid.layers = {Tap::D1, Tap::D2};
  grid.timesteps = {1, 11};
  grid.raw = Tensord({2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  grid.smoothed = grid.raw;
  std::string gtxt = csv_score_grid("cafe0123cafe0123", grid, false);
  write_text_file(dir + "/g.csv", gtxt);
  expdetail::CsvTable tg = expdetail::read_csv(dir + "/g.csv");
  REQUIRE(tg.header == std::vector<std::string>{"layer", "t1", "t11"});
  REQUIRE(tg.cells[0][0] == std::string(tap_name(Tap::D1)));
  REQUIRE(tg.rows[1][2] == 0.4);
  REQUIRE(std::isnan(tg.rows[0][0]));  // layer name is not a number

  SearchResult sr;
  sr.trace_t = {1, 11, 21};
  sr.trace_raw = {0.5, 0.6, 0.55};
  sr.trace_smoothed = {0.55, 0.55, 0.575};
  AccTrace acc;
  acc.raw = {0.7, 0.8, 0.75};
  acc.smoothed = {0.75, 0.75, 0.775};
  write_text_file(dir + "/c.csv", csv_cot_trace("cafe0123cafe0123", sr, &acc));
  expdetail::CsvTable tc = expdetail::read_csv(dir + "/c.csv");
  REQUIRE(tc.header.size() == 5);
  REQUIRE(tc.rows.size() == 3);
  REQUIRE(tc.rows[2][0] == 21.0);
  REQUIRE(tc.rows[2][4] == 0.775);
}

TEST_CASE("csv reader handles crlf, blanks, and text cells") {
  std::string dir = fresh_dir("csv2");
  write_bytes(dir + "/r.csv",
              "# config_hash=deadbeefdeadbeef\r\n"
              "a,b,c\r\n"
              "\r\n"
              "1,x,2.5\r\n");
  expdetail::CsvTable t = expdetail::read_csv(dir + "/r.csv");
  REQUIRE(t.hash == "deadbeefdeadbeef");
  REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 1);
  REQUIRE(t.rows[0][0] == 1.0);
  REQUIRE(std::isnan(t.rows[0][1]));
  REQUIRE(t.cells[0][1] == "x");
  REQUIRE(t.rows[0][2] == 2.5);
  REQUIRE_THROWS_AS(expdetail::read_csv(dir + "/none.csv"), data_error);
}

TEST_CASE("pgm grid has exact geometry and value mapping") {
  Tensorf imgs({3, 1, 2, 2});
  for (size_t i = 0; i < imgs.numel(); ++i) imgs[i] = 0.0f;
  imgs[0] = -1.0f;  // first pixel of image 0
  imgs[1] = 1.0f;
  imgs[8] = 2.0f;  // image 2, clamped to 1
  std::string pgm = pgm_grid(imgs, 2);
  // 2 columns x 2 rows of 2x2 cells with 1px separators: 7x7 canvas
  REQUIRE(pgm.rfind("P5\n7 7\n255\n", 0) == 0);
  const size_t header = std::string("P5\n7 7\n255\n").size();
  REQUIRE(pgm.size() == header + 49);
  const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header);
  REQUIRE(px[0] == 128);           // separator
  REQUIRE(px[1 * 7 + 1] == 0);     // -1
  REQUIRE(px[1 * 7 + 2] == 255);   // +1
  REQUIRE(px[1 * 7 + 4] == 128);   // 0.0 -> 127.5 rounds to 128
  REQUIRE(px[4 * 7 + 1] == 255);   // clamped 2.0

  REQUIRE_THROWS_AS(pgm_grid(imgs, 0), param_error);
  Tensorf rgb({1, 3, 2, 2});
  REQUIRE_THROWS_AS(pgm_grid(rgb, 1), shape_error);
}

TEST_CASE("svg artifacts are well-formed") {
  SvgSeries s1;
  s1.label = "loss";
  s1.x = {1, 2, 3};
  s1.y = {0.5, 0.25, 0.125};
  SvgSeries s2;
  s2.label = "probe";
  s2.color = "#1f78b4";
  s2.x = {1, 2, 3};
  s2.y = {0.4, 0.3, 0.2};
  std::string chart = svg_line_chart("demo", "epoch", "loss", {s1, s2});
  REQUIRE(chart.rfind("<svg ", 0) == 0);
  REQUIRE(chart.find("</svg>") != std::string::npos);
  REQUIRE(chart.find("polyline") != std::string::npos);
  REQUIRE(chart.find("demo") != std::string::npos);
  REQUIRE(chart.find("probe") != std::string::npos);

  Tensord vals({2, 3}, std::vector<double>{0.0, 0.5, 1.0, 0.25,
                                           std::numeric_limits<double>::quiet_NaN(), 0.75});
  std::string heat = svg_heatmap("grid", {"D1", "D2"}, {1, 11, 21}, vals);
  REQUIRE(heat.rfind("<svg ", 0) == 0);
  REQUIRE(heat.find("#bbbbbb") != std::string::npos);  // NaN cell
  REQUIRE(heat.find("D2") != std::string::npos);
  Tensord wrong({3, 3});
  REQUIRE_THROWS_AS(svg_heatmap("grid", {"D1", "D2"}, {1, 11, 21}, wrong), shape_error);
}

TEST_CASE("report refuses to mix artifacts from different configs") {
  std::string dir = fresh_dir("rep");
  write_bytes(dir + "/search.json", "{\"config_hash\":\"aaaaaaaaaaaaaaaa\"}");
  write_bytes(dir + "/trace_cot.csv",
              "# config_hash=bbbbbbbbbbbbbbbb\nt,ss_raw,ss_smoothed\n1,0.5,0.6\n2,0.7,0.8\n");
  REQUIRE_THROWS_AS(exp_report(dir), data_error);

  std::string dir2 = fresh_dir("rep2");
  REQUIRE_THROWS_AS(exp_report(dir2), data_error);  // nothing hashed at all

  std::string dir3 = fresh_dir("rep3");
  write_bytes(dir3 + "/search.json", "{\"config_hash\":\"cccccccccccccccc\"}");
  write_bytes(dir3 + "/trace_cot.csv",
              "# config_hash=cccccccccccccccc\nt,ss_raw,ss_smoothed\n1,0.5,0.6\n2,0.7,0.8\n");
  exp_report(dir3);
  REQUIRE(fs::exists(dir3 + "/curve_cot.svg"));
  std::ifstream f(dir3 + "/curve_cot.svg");
  std::string svg((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(svg.find("</svg>") != std::string::npos);
}
