#include "ssit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ssit {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + where + it.key() +
                                  "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ViewSpec RunConfig::query_spec() const {
  ViewSpec s = ViewSpec::query_default(vit.image_size);
  s.area_lo = query_area_lo;
  s.area_hi = query_area_hi;
  return s;
}

ViewSpec RunConfig::key_spec() const {
  ViewSpec s = ViewSpec::key_default(vit.image_size);
  s.area_lo = key_area_lo;
  s.area_hi = key_area_hi;
  return s;
}

void RunConfig::validate() const {
  vit.validate();
  sched.validate();
  query_spec().validate();
  key_spec().validate();
  if (saliency_backend != "fine" && saliency_backend != "spectral")
    throw std::invalid_argument("config: saliency_backend must be 'fine' or 'spectral'");
  if (checkpoint_every_epochs == 0)
    throw std::invalid_argument("config: checkpoint_every_epochs must be > 0");
  if (heads.proj_out == 0 || heads.proj_hidden == 0 || heads.pred_hidden == 0)
    throw std::invalid_argument("config: zero-sized head dimension");
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.vit = ViTConfig::vit_micro();
  c.heads = HeadConfig::desk(c.vit.embed_dim);
  return c;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  RunConfig c = desk_default();
  reject_unknown(j, {"seed", "data_dir", "out_dir", "saliency", "vit", "heads",
                     "train", "augment"},
                 "");
  get_if(j, "seed", c.seed);
  get_if(j, "data_dir", c.data_dir);
  get_if(j, "out_dir", c.out_dir);
  if (j.contains("saliency")) {
    const json& s = j.at("saliency");
    reject_unknown(s, {"backend", "threshold", "cache_dir"}, "saliency.");
    get_if(s, "backend", c.saliency_backend);
    get_if(s, "threshold", c.sched.bin_threshold);
    get_if(s, "cache_dir", c.saliency_cache_dir);
  }
  if (j.contains("vit")) {
    const json& v = j.at("vit");
    reject_unknown(v,
                   {"patch", "depth", "heads", "embed_dim", "mlp_ratio",
                    "image_size", "channels"},
                   "vit.");
    get_if(v, "patch", c.vit.patch);
    get_if(v, "depth", c.vit.depth);
    get_if(v, "heads", c.vit.heads);
    get_if(v, "embed_dim", c.vit.embed_dim);
    get_if(v, "mlp_ratio", c.vit.mlp_ratio);
    get_if(v, "image_size", c.vit.image_size);
    get_if(v, "channels", c.vit.channels);
  }
  if (j.contains("heads")) {
    const json& h = j.at("heads");
    reject_unknown(h, {"proj_hidden", "proj_out", "pred_hidden"}, "heads.");
    get_if(h, "proj_hidden", c.heads.proj_hidden);
    get_if(h, "proj_out", c.heads.proj_out);
    get_if(h, "pred_hidden", c.heads.pred_hidden);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"base_lr", "warmup_epochs", "total_epochs", "alpha_lo",
                    "alpha_hi", "tau", "mask_ratio", "lambda_cl", "lambda_seg",
                    "batch_size", "weight_decay", "checkpoint_every_epochs"},
                   "train.");
    get_if(t, "base_lr", c.sched.base_lr);
    get_if(t, "warmup_epochs", c.sched.warmup_epochs);
    get_if(t, "total_epochs", c.sched.total_epochs);
    get_if(t, "alpha_lo", c.sched.alpha_lo);
    get_if(t, "alpha_hi", c.sched.alpha_hi);
    get_if(t, "tau", c.sched.tau);
    get_if(t, "mask_ratio", c.sched.mask_ratio);
    get_if(t, "lambda_cl", c.sched.lambda_cl);
    get_if(t, "lambda_seg", c.sched.lambda_seg);
    get_if(t, "batch_size", c.sched.batch_size);
    get_if(t, "weight_decay", c.sched.weight_decay);
    get_if(t, "checkpoint_every_epochs", c.checkpoint_every_epochs);
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    reject_unknown(a,
                   {"query_area_lo", "query_area_hi", "key_area_lo",
                    "key_area_hi"},
                   "augment.");
    get_if(a, "query_area_lo", c.query_area_lo);
    get_if(a, "query_area_hi", c.query_area_hi);
    get_if(a, "key_area_lo", c.key_area_lo);
    get_if(a, "key_area_hi", c.key_area_hi);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j{{"seed", seed},
         {"data_dir", data_dir},
         {"out_dir", out_dir},
         {"saliency",
          {{"backend", saliency_backend},
           {"threshold", sched.bin_threshold},
           {"cache_dir", saliency_cache_dir}}},
         {"vit",
          {{"patch", vit.patch},
           {"depth", vit.depth},
           {"heads", vit.heads},
           {"embed_dim", vit.embed_dim},
           {"mlp_ratio", vit.mlp_ratio},
           {"image_size", vit.image_size},
           {"channels", vit.channels}}},
         {"heads",
          {{"proj_hidden", heads.proj_hidden},
           {"proj_out", heads.proj_out},
           {"pred_hidden", heads.pred_hidden}}},
         {"train",
          {{"base_lr", sched.base_lr},
           {"warmup_epochs", sched.warmup_epochs},
           {"total_epochs", sched.total_epochs},
           {"alpha_lo", sched.alpha_lo},
           {"alpha_hi", sched.alpha_hi},
           {"tau", sched.tau},
           {"mask_ratio", sched.mask_ratio},
           {"lambda_cl", sched.lambda_cl},
           {"lambda_seg", sched.lambda_seg},
           {"batch_size", sched.batch_size},
           {"weight_decay", sched.weight_decay},
           {"checkpoint_every_epochs", checkpoint_every_epochs}}},
         {"augment",
          {{"query_area_lo", query_area_lo},
           {"query_area_hi", query_area_hi},
           {"key_area_lo", key_area_lo},
           {"key_area_hi", key_area_hi}}}};
  return j.dump(2) + "\n";
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  os << to_json_text();
}

}  // namespace ssit
