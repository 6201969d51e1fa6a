#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "moeisr/checkpoint.hpp"
#include "moeisr/errors.hpp"
#include "moeisr/expert_map.hpp"
#include "moeisr/flops.hpp"
#include "moeisr/pipeline.hpp"

namespace moeisr::cli {

using nlohmann::json;

namespace {

// Keys in application order: `variant` before `expert_hidden` and `experts`
// before `expert_depths`/`weights`, so an explicit value wins.
const std::vector<std::string> kKeys{
    "variant",     "experts",      "expert_depths", "expert_hidden", "feat_dim",   "res_blocks",
    "mapper_layers", "mapper_hidden", "alpha",     "beta",          "tau",        "weights",
    "lr",          "beta1",        "beta2",         "eps",           "steps",      "batch",
    "seed",        "patch_size",   "sample_count",  "scale_min",     "scale_max",  "gumbel_noise",
    "log_every",   "eval_every",   "eval_scale",    "checkpoint_every", "dataset", "checkpoint"};

std::uint64_t as_uint(const std::string& key, const json& v) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return std::uint64_t(v.get<std::int64_t>());
    throw ConfigError("config key " + key + ": expected a non-negative integer");
}

double as_real(const std::string& key, const json& v) {
    if (!v.is_number()) throw ConfigError("config key " + key + ": expected a number");
    return v.get<double>();
}

std::string as_string(const std::string& key, const json& v) {
    if (!v.is_string()) throw ConfigError("config key " + key + ": expected a string");
    return v.get<std::string>();
}

std::vector<double> as_reals(const std::string& key, const json& v) {
    if (!v.is_array()) throw ConfigError("config key " + key + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(as_real(key, e));
    return out;
}

std::vector<std::size_t> consecutive_depths(std::size_t experts) {
    if (experts == 0) throw ConfigError("experts must be >= 1");
    std::vector<std::size_t> d;
    for (std::size_t j = 0; j < experts; ++j) d.push_back(j + 2);
    return d;
}

std::vector<double> parse_list(const std::string& what, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw ConfigError(what + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

std::string join(const std::vector<double>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

void echo(std::ostream& os, const json& values) {
    for (const auto& [k, v] : values.items()) os << "config " << k << ' ' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
}

std::vector<Rgb8> palette_for(std::size_t experts) {
    if (experts <= default_palette().size()) return default_palette();
    // Grey ramp, darker = shallower, for banks wider than the fixed palette.
    std::vector<Rgb8> p;
    for (std::size_t j = 0; j < experts; ++j) {
        const auto g = static_cast<unsigned char>(std::lround(255.0 * double(j) / double(experts - 1)));
        p.push_back({g, g, g});
    }
    return p;
}

std::pair<std::size_t, std::size_t> output_size(const Image& lr, const std::optional<double>& scale,
                                                const std::optional<std::string>& size) {
    if (size) return parse_size(*size);
    if (!scale) throw ConfigError("one of --scale or --out-size is required");
    if (!(*scale >= 1)) throw ConfigError("--scale must be >= 1");
    return {std::size_t(std::lround(double(lr.height()) * *scale)), std::size_t(std::lround(double(lr.width()) * *scale))};
}

}  // namespace

void apply_config(TrainSettings& s, const json& config) {
    if (!config.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : config.items()) {
        if (std::find(kKeys.begin(), kKeys.end(), k) == kKeys.end()) throw ConfigError("unknown config key: " + k);
    }
    TrainConfig& t = s.train;
    for (const auto& key : kKeys) {
        if (!config.contains(key)) continue;
        const json& v = config.at(key);
        if (key == "variant") {
            try {
                t.model.expert_hidden = variant_hidden(parse_variant(as_string(key, v)));
            } catch (const UsageError& e) {
                throw ConfigError(std::string("config key variant: ") + e.what());
            }
        } else if (key == "experts") {
            t.model.expert_depths = consecutive_depths(as_uint(key, v));
        } else if (key == "expert_depths") {
            if (!v.is_array()) throw ConfigError("config key expert_depths: expected an array");
            t.model.expert_depths.clear();
            for (const auto& e : v) t.model.expert_depths.push_back(as_uint(key, e));
        } else if (key == "expert_hidden") {
            t.model.expert_hidden = as_uint(key, v);
        } else if (key == "feat_dim") {
            t.model.encoder.feat_dim = as_uint(key, v);
        } else if (key == "res_blocks") {
            t.model.encoder.n_res_blocks = as_uint(key, v);
        } else if (key == "mapper_layers") {
            t.model.mapper.n_layers = as_uint(key, v);
        } else if (key == "mapper_hidden") {
            t.model.mapper.hidden_channels = as_uint(key, v);
        } else if (key == "alpha") {
            t.loss.alpha = as_real(key, v);
        } else if (key == "beta") {
            t.loss.beta = as_real(key, v);
        } else if (key == "tau") {
            t.tau = as_real(key, v);
        } else if (key == "weights") {
            t.balance_weights = as_reals(key, v);
        } else if (key == "lr") {
            t.adam.lr = as_real(key, v);
        } else if (key == "beta1") {
            t.adam.beta1 = as_real(key, v);
        } else if (key == "beta2") {
            t.adam.beta2 = as_real(key, v);
        } else if (key == "eps") {
            t.adam.eps = as_real(key, v);
        } else if (key == "steps") {
            t.steps = as_uint(key, v);
        } else if (key == "batch") {
            t.batch = as_uint(key, v);
        } else if (key == "seed") {
            t.seed = as_uint(key, v);
        } else if (key == "patch_size") {
            t.sampling.patch_size = as_uint(key, v);
        } else if (key == "sample_count") {
            t.sampling.sample_count = as_uint(key, v);
        } else if (key == "scale_min") {
            t.sampling.scale_min = as_real(key, v);
        } else if (key == "scale_max") {
            t.sampling.scale_max = as_real(key, v);
        } else if (key == "gumbel_noise") {
            if (!v.is_boolean()) throw ConfigError("config key gumbel_noise: expected a boolean");
            t.gumbel_noise = v.get<bool>();
        } else if (key == "log_every") {
            t.log_every = as_uint(key, v);
        } else if (key == "eval_every") {
            t.eval_every = as_uint(key, v);
        } else if (key == "eval_scale") {
            t.eval_scale = as_real(key, v);
        } else if (key == "checkpoint_every") {
            t.checkpoint_every = as_uint(key, v);
        } else if (key == "dataset") {
            s.dataset = as_string(key, v);
        } else if (key == "checkpoint") {
            s.checkpoint = as_string(key, v);
        }
    }
}

json effective_config(const TrainSettings& s) {
    const TrainConfig& t = s.train;
    json j = json::object();
    j["feat_dim"] = t.model.encoder.feat_dim;
    j["res_blocks"] = t.model.encoder.n_res_blocks;
    j["mapper_layers"] = t.model.mapper.n_layers;
    j["mapper_hidden"] = t.model.mapper.hidden_channels;
    j["expert_hidden"] = t.model.expert_hidden;
    j["expert_depths"] = t.model.expert_depths;
    j["alpha"] = t.loss.alpha;
    j["beta"] = t.loss.beta;
    j["tau"] = t.tau;
    j["weights"] = t.balance_weights.empty() ? std::vector<double>(t.model.experts(), 1.0) : t.balance_weights;
    j["lr"] = t.adam.lr;
    j["beta1"] = t.adam.beta1;
    j["beta2"] = t.adam.beta2;
    j["eps"] = t.adam.eps;
    j["steps"] = t.steps;
    j["batch"] = t.batch;
    j["seed"] = t.seed;
    j["patch_size"] = t.sampling.patch_size;
    j["sample_count"] = t.sampling.sample_count;
    j["scale_min"] = t.sampling.scale_min;
    j["scale_max"] = t.sampling.scale_max;
    j["gumbel_noise"] = t.gumbel_noise;
    j["log_every"] = t.log_every;
    j["eval_every"] = t.eval_every;
    j["eval_scale"] = t.eval_scale;
    j["checkpoint_every"] = t.checkpoint_every;
    j["dataset"] = s.dataset.string();
    j["checkpoint"] = s.checkpoint.string();
    return j;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
    const auto x = text.find_first_of("xX");
    std::size_t h = 0, w = 0;
    try {
        std::size_t used_h = 0, used_w = 0;
        const std::string hs = text.substr(0, x), ws = x == std::string::npos ? "" : text.substr(x + 1);
        h = std::stoul(hs, &used_h);
        w = std::stoul(ws, &used_w);
        if (used_h != hs.size() || used_w != ws.size()) h = w = 0;
    } catch (const std::exception&) {
        h = w = 0;
    }
    if (h == 0 || w == 0) throw ConfigError("--out-size: expected HxW with positive extents, got '" + text + "'");
    return {h, w};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Arbitrary-scale super-resolution with per-pixel expert routing"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant, weights, dataset, checkpoint;
    std::optional<double> tau, alpha, beta, train_scale;
    std::optional<std::size_t> mapper_layers, experts;
    train_cmd->add_option("--config", config_path, "JSON file with flat config keys");
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--variant", variant, "b (hidden 256) or s (hidden 128)");
    train_cmd->add_option("--weights", weights, "balance weights w1,..,wJ");
    train_cmd->add_option("--tau", tau);
    train_cmd->add_option("--alpha", alpha);
    train_cmd->add_option("--beta", beta);
    train_cmd->add_option("--scale", train_scale, "fixed training scale");
    train_cmd->add_option("--mapper-layers", mapper_layers);
    train_cmd->add_option("--experts", experts, "number of experts J (depths 2..J+1)");
    train_cmd->add_option("--dataset", dataset);
    train_cmd->add_option("--checkpoint", checkpoint, "output checkpoint path");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "upscale one image");
    std::string infer_ckpt, infer_input, infer_out;
    std::optional<std::string> infer_size, infer_map;
    std::optional<double> infer_scale;
    infer_cmd->add_option("--checkpoint", infer_ckpt)->required();
    infer_cmd->add_option("input", infer_input, "LR image (PPM)")->required();
    infer_cmd->add_option("--out", infer_out, "output PPM")->required();
    infer_cmd->add_option("--map", infer_map, "expert map PPM (default <out>.experts.ppm)");
    auto* infer_scale_opt = infer_cmd->add_option("--scale", infer_scale);
    infer_cmd->add_option("--out-size", infer_size, "HxW")->excludes(infer_scale_opt);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "mean PSNR and FLOPs ratio per scale");
    std::string eval_ckpt, eval_dataset, eval_scales = "2,3,4";
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--dataset", eval_dataset)->required();
    eval_cmd->add_option("--scale", eval_scales, "comma-separated scales");

    // profile
    auto* profile_cmd = app.add_subcommand("profile", "FLOPs report for one reconstruction");
    std::string profile_ckpt, profile_input;
    std::optional<std::string> profile_size, profile_out;
    std::optional<double> profile_scale;
    profile_cmd->add_option("--checkpoint", profile_ckpt)->required();
    profile_cmd->add_option("input", profile_input, "LR image (PPM)")->required();
    auto* profile_scale_opt = profile_cmd->add_option("--scale", profile_scale);
    profile_cmd->add_option("--out-size", profile_size, "HxW")->excludes(profile_scale_opt);
    profile_cmd->add_option("--out", profile_out, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*train_cmd) {
            TrainSettings s;
            if (!config_path.empty()) {
                std::ifstream in(config_path);
                if (!in) throw IoError("cannot open config " + config_path);
                json j;
                try {
                    j = json::parse(in);
                } catch (const json::parse_error& e) {
                    throw ConfigError(config_path + ": " + e.what());
                }
                apply_config(s, j);
            }
            json flags = json::object();
            if (variant) flags["variant"] = *variant;
            if (experts) flags["experts"] = *experts;
            if (mapper_layers) flags["mapper_layers"] = *mapper_layers;
            if (tau) flags["tau"] = *tau;
            if (alpha) flags["alpha"] = *alpha;
            if (beta) flags["beta"] = *beta;
            if (seed) flags["seed"] = *seed;
            if (weights) flags["weights"] = parse_list("--weights", *weights);
            if (dataset) flags["dataset"] = *dataset;
            if (checkpoint) flags["checkpoint"] = *checkpoint;
            if (train_scale) {
                flags["scale_min"] = *train_scale;
                flags["scale_max"] = *train_scale;
            }
            apply_config(s, flags);
            // --experts alone resizes the bank; drop weights that no longer fit.
            if (experts && !weights && s.train.balance_weights.size() != s.train.model.experts()) {
                s.train.balance_weights.clear();
            }
            if (s.dataset.empty()) throw ConfigError("dataset is required (--dataset or config key dataset)");
            try {
                s.train.validate();
            } catch (const UsageError& e) {
                throw ConfigError(e.what());
            }
            echo(out, effective_config(s));
            train_to_file(s.dataset, s.train, s.checkpoint, &out);
            out << "checkpoint " << s.checkpoint.string() << '\n';
        } else if (*infer_cmd) {
            echo(err, json{{"checkpoint", infer_ckpt}, {"input", infer_input}, {"out", infer_out}});
            const auto params = load_checkpoint(infer_ckpt);
            const Image lr = load_image(infer_input);
            const auto [h, w] = output_size(lr, infer_scale, infer_size);
            err << "config out_size " << h << 'x' << w << '\n';
            const Reconstruction r = reconstruct(params, lr, h, w);
            write_ppm(infer_out, r.image);
            const std::filesystem::path map_path =
                infer_map ? std::filesystem::path(*infer_map)
                          : std::filesystem::path(infer_out).replace_extension(".experts.ppm");
            export_expert_map(r.query_experts, h, w, map_path, palette_for(params.experts.size()));
            out << "image " << infer_out << '\n';
            out << "expert_map " << map_path.string() << '\n';
            out << "shares " << join(expert_shares(r.query_experts, params.experts.size())) << '\n';
        } else if (*eval_cmd) {
            const auto scales = parse_list("--scale", eval_scales);
            for (double sc : scales) {
                if (!(sc >= 1)) throw ConfigError("--scale: every scale must be >= 1");
            }
            echo(err, json{{"checkpoint", eval_ckpt}, {"dataset", eval_dataset}, {"scale", join(scales)}});
            const auto params = load_checkpoint(eval_ckpt);
            const auto images = load_dataset(eval_dataset);
            out << "scale\tpsnr\tflops_ratio\tshares\n";
            for (double sc : scales) {
                const EvalResult r = evaluate(params, images, sc);
                err << format_eval(r) << '\n';
                out << sc << '\t' << std::fixed << std::setprecision(4) << r.psnr << '\t' << std::setprecision(6)
                    << r.flops_ratio << std::defaultfloat << '\t' << join(r.shares) << '\n';
            }
        } else if (*profile_cmd) {
            echo(err, json{{"checkpoint", profile_ckpt}, {"input", profile_input}});
            const auto params = load_checkpoint(profile_ckpt);
            const Image lr = load_image(profile_input);
            const auto [h, w] = output_size(lr, profile_scale, profile_size);
            err << "config out_size " << h << 'x' << w << '\n';
            const Reconstruction r = reconstruct(params, lr, h, w);
            const std::string report =
                flops_pipeline(params.spec, lr.height(), lr.width(), h, w, r.query_experts).to_text();
            out << report;
            if (profile_out) {
                std::ofstream f(*profile_out);
                if (!(f << report)) throw IoError("cannot write " + *profile_out);
            }
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace moeisr::cli
