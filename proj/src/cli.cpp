#include "tokred/cli.hpp"

#include "tokred/align.hpp"
#include "tokred/io.hpp"
#include "tokred/merge.hpp"
#include "tokred/metrics.hpp"
#include "tokred/prune.hpp"
#include "tokred/rng.hpp"
#include "tokred/toyvit.hpp"
#include "tokred/types.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

namespace tokred::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int thread_budget() {
    if (const char* env = std::getenv("TOKREDUCE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Data-parallel loop over samples; work items are independent and results
// land in caller-owned slots, so output order never depends on scheduling.
void parallel_for(int count, const std::function<void(int)>& fn) {
    const int threads = std::min(thread_budget(), count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& worker : pool) worker.join();
    if (failure) std::rethrow_exception(failure);
}

Grid parse_grid(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos)
        throw Error::usage("grid must look like HxW, got '" + text + "'");
    Grid grid;
    grid.h = std::atoi(text.substr(0, x).c_str());
    grid.w = std::atoi(text.substr(x + 1).c_str());
    if (!grid.is_set()) throw Error::usage("grid sides must be positive, got '" + text + "'");
    return grid;
}

std::vector<int> parse_stage_list(const std::string& text) {
    std::vector<int> stages;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) stages.push_back(std::atoi(item.c_str()));
    if (stages.empty()) throw Error::usage("empty stage list");
    return stages;
}

std::string sample_name(const std::string& prefix, int id, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix.c_str(), id, ext.c_str());
    return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& prefix,
                                   const std::string& ext) {
    if (!fs::is_directory(dir)) throw Error::data("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix + "_", 0) == 0 && name.size() > ext.size() &&
            name.compare(name.size() - ext.size() - 1, ext.size() + 1, "." + ext) == 0)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw Error::data("no " + prefix + "_*." + ext + " files in '" + dir.string() + "'");
    return files;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::vector<std::string>& argv, const json& extra) {
    json manifest;
    manifest["schema"] = "tokred.manifest.v1";
    manifest["command"] = command;
    manifest["argv"] = argv;
    manifest["timestamp"] = timestamp_utc();
    for (const auto& [key, value] : extra.items()) manifest[key] = value;
    io::write_json((out_dir / "manifest.json").string(), manifest);
}

// ---------------------------------------------------------------- synth --

struct SynthArgs {
    std::string out;
    int samples = 10;
    std::string grid = "14x14";
    int dim = 64;
    std::string kind = "random";
    int blobs = 3;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& args, const std::vector<std::string>& argv) {
    const Grid grid = parse_grid(args.grid);
    const vit::SynthKind kind = vit::synth_kind_from_name(args.kind);
    if (args.samples < 1) throw Error::usage("need at least one sample");
    fs::create_directories(args.out);

    std::vector<vit::SynthResult> results(args.samples);
    parallel_for(args.samples, [&](int i) {
        results[i] = vit::synth_tokens(grid, args.dim, kind, mix_seed(args.seed, i), args.blobs);
    });

    json labels = json::array();
    std::vector<std::string> outputs;
    for (int i = 0; i < args.samples; ++i) {
        const std::string name = sample_name("sample", i, "tokd");
        io::write_tokens((fs::path(args.out) / name).string(), results[i].tokens);
        outputs.push_back(name);
        if (kind == vit::SynthKind::blob_planted) labels.push_back(results[i].labels);
    }
    if (kind == vit::SynthKind::blob_planted) {
        json sidecar;
        sidecar["schema"] = "tokred.labels.v1";
        sidecar["labels"] = std::move(labels);
        io::write_json((fs::path(args.out) / "labels.json").string(), sidecar);
        outputs.push_back("labels.json");
    }

    json extra;
    extra["seed"] = args.seed;
    extra["outputs"] = outputs;
    write_manifest(args.out, "synth", argv, extra);
    return 0;
}

// --------------------------------------------------------------- reduce --

struct ReduceArgs {
    std::string method;
    double rate = 0.9;
    std::string preset = "tiny";
    std::uint64_t seed = 0;
    std::string in;
    std::string out;
    std::string stages = "4,7,10";
    int depth = 12;
    std::string ats_mode = "fixed";
    bool tome_keys = false;
    bool no_evit_fused = false;
};

int cmd_reduce(const ReduceArgs& args, const std::vector<std::string>& argv) {
    const vit::Method method = vit::method_from_name(args.method);
    vit::ToyVitConfig config = vit::ToyVitConfig::preset(args.preset, args.seed);
    config.depth = args.depth;

    vit::MethodParams params;
    if (args.ats_mode == "fixed")
        params.ats_mode = prune::AtsMode::fixed_quantile;
    else if (args.ats_mode == "uniform")
        params.ats_mode = prune::AtsMode::seeded_uniform;
    else
        throw Error::usage("--ats-mode must be fixed or uniform");
    params.tome_use_keys = args.tome_keys;
    params.evit_fused_in_later_stages = !args.no_evit_fused;

    const auto files = sorted_files(args.in, "sample", "tokd");
    const int samples = static_cast<int>(files.size());

    // grid and input width come from the first sample; a seeded embedding
    // bridges dumps narrower or wider than the preset
    const TokenSet first = io::read_tokens(files.front().string());
    config.grid = first.grid;
    if (first.dim() != config.dim) config.input_dim = first.dim();
    const KeepSchedule schedule =
        make_schedule(first.grid.count(), args.rate, parse_stage_list(args.stages), args.depth);
    const vit::ToyVit model(config);

    std::vector<vit::ForwardTrace> traces(samples);
    parallel_for(samples, [&](int i) {
        TokenSet tokens = io::read_tokens(files[i].string());
        vit::ForwardTrace trace =
            model.forward(tokens, method, params, schedule, mix_seed(args.seed, i));
        trace.record.sample_id = i;
        traces[i] = std::move(trace);
    });

    fs::create_directories(args.out);
    std::vector<std::string> outputs;
    const int probe_points = schedule.stages() + 1;
    std::vector<Matrix> probes(probe_points, Matrix(samples, config.dim));
    Vector kept_sums = Vector::Zero(schedule.stages());
    double total_flops_mean = 0.0;

    for (int i = 0; i < samples; ++i) {
        const vit::ForwardTrace& trace = traces[i];
        const std::string record_name = sample_name("record", i, "json");
        io::write_json((fs::path(args.out) / record_name).string(),
                       io::record_to_json(trace.record));
        outputs.push_back(record_name);

        json tj;
        tj["schema"] = "tokred.trace.v1";
        tj["sample_id"] = i;
        tj["method"] = trace.record.method;
        tj["keep_rate"] = trace.record.keep_rate;
        tj["flops"] = trace.flops;
        tj["token_counts"] = trace.token_counts;
        tj["stage_kept_counts"] = trace.stage_kept_counts;
        tj["total_flops"] = trace.total_flops;
        const std::string trace_name = sample_name("trace", i, "json");
        io::write_json((fs::path(args.out) / trace_name).string(), tj);
        outputs.push_back(trace_name);

        for (int p = 0; p < probe_points; ++p) probes[p].row(i) = trace.cls_probe[p].transpose();
        for (int s = 0; s < schedule.stages(); ++s)
            kept_sums(s) += static_cast<double>(trace.record.stages[s].kept.size());
        total_flops_mean += static_cast<double>(trace.total_flops) / samples;
    }

    for (int p = 0; p < probe_points; ++p) {
        const std::string name = p < schedule.stages()
                                     ? "probes_s" + std::to_string(p + 1) + ".tokd"
                                     : std::string("probes_final.tokd");
        io::write_matrix((fs::path(args.out) / name).string(), probes[p]);
        outputs.push_back(name);
    }

    json summary;
    summary["schema"] = "tokred.summary.v1";
    summary["method"] = args.method;
    summary["keep_rate"] = args.rate;
    summary["samples"] = samples;
    summary["budgets"] = schedule.budgets;
    json mean_kept_json = json::array();
    json actual = json::array();
    for (int s = 0; s < schedule.stages(); ++s) {
        const double mean = kept_sums(s) / samples;
        mean_kept_json.push_back(mean);
        actual.push_back(mean / schedule.initial_tokens);
    }
    summary["mean_kept"] = mean_kept_json;
    summary["mean_actual_keep_fraction"] = actual;
    summary["mean_total_flops"] = total_flops_mean;
    io::write_json((fs::path(args.out) / "summary.json").string(), summary);
    outputs.push_back("summary.json");

    json extra;
    extra["method"] = args.method;
    extra["keep_rate"] = args.rate;
    extra["preset"] = args.preset;
    extra["seed"] = args.seed;
    extra["inputs"] = json::array();
    for (const auto& f : files) extra["inputs"].push_back(f.string());
    extra["outputs"] = outputs;
    extra["schedule"] = {{"stage_blocks", schedule.stage_blocks},
                         {"total_blocks", schedule.total_blocks},
                         {"budgets", schedule.budgets},
                         {"initial_tokens", schedule.initial_tokens}};
    write_manifest(args.out, "reduce", argv, extra);
    return 0;
}

// -------------------------------------------------------------- compare --

struct CompareArgs {
    std::string a;
    std::string b;
    std::string metric = "auto";
    std::string out;
    std::string csv;
    std::string pair_by = "sample";
    std::string emit_depthmaps;
    std::string id_a;
    std::string id_b;
};

std::map<int, ReductionRecord> load_records(const std::string& dir) {
    std::map<int, ReductionRecord> records;
    for (const auto& path : sorted_files(dir, "record", "json")) {
        ReductionRecord record = io::record_from_json(io::read_json(path.string()));
        records.emplace(record.sample_id, std::move(record));
    }
    return records;
}

std::vector<int> stage_partition(const StageRecord& stage) {
    if (stage.kind == StageKind::hard_merged) return stage.assignment;
    if (stage.kind == StageKind::soft_merged)
        return metrics::harden_soft_assignment(stage.weights);
    throw Error::data("clustering metrics need merged records; got a pruned stage");
}

int cmd_compare(const CompareArgs& args, const std::vector<std::string>& argv) {
    if (args.pair_by != "sample") throw Error::usage("--pair-by supports only 'sample'");
    const auto records_a = load_records(args.a);
    const auto records_b = load_records(args.b);
    for (const auto& [id, record] : records_a)
        if (!records_b.count(id))
            throw Error::data("sample " + std::to_string(id) + " missing from '" + args.b + "'");
    for (const auto& [id, record] : records_b)
        if (!records_a.count(id))
            throw Error::data("sample " + std::to_string(id) + " missing from '" + args.a + "'");

    const ReductionRecord& head_a = records_a.begin()->second;
    const ReductionRecord& head_b = records_b.begin()->second;
    const int stages = static_cast<int>(head_a.stage_blocks.size());
    if (static_cast<int>(head_b.stage_blocks.size()) != stages)
        throw Error::data("record sets have different stage counts");

    // clustering metrics need partitions on both sides; kept-set metrics
    // work for every record kind (merge records expose their centers)
    const bool a_merged = head_a.stages.front().kind != StageKind::pruned;
    const bool b_merged = head_b.stages.front().kind != StageKind::pruned;
    std::vector<std::string> wanted;
    if (args.metric == "auto")
        wanted = a_merged && b_merged ? std::vector<std::string>{"homogeneity", "nmi"}
                                      : std::vector<std::string>{"ioa", "iou"};
    else
        wanted = {args.metric};

    const std::set<std::string> set_metrics{"ioa", "iou"};
    const std::set<std::string> cluster_metrics{"homogeneity", "nmi"};
    const std::set<std::string> depth_metrics{"pearson", "spearman", "jsd", "emd", "histogram"};

    // IoA orientation: M1 comes from the higher keep rate
    const bool a_is_m1 = head_a.keep_rate >= head_b.keep_rate;
    const double r1 = a_is_m1 ? head_a.keep_rate : head_b.keep_rate;
    const double r2 = a_is_m1 ? head_b.keep_rate : head_a.keep_rate;
    const int tokens = head_a.tokens();

    json report;
    report["schema"] = "tokred.compare.v1";
    report["model_a"] = args.id_a.empty() ? args.a : args.id_a;
    report["model_b"] = args.id_b.empty() ? args.b : args.id_b;
    report["pairs"] = records_a.size();
    report["inputs"] = {args.a, args.b};
    report["parameters"] = {{"metric", args.metric}, {"pair_by", args.pair_by}};
    report["metrics"] = json::object();

    if (!fs::path(args.out).parent_path().empty())
        fs::create_directories(fs::path(args.out).parent_path());
    std::ofstream csv;
    if (!args.csv.empty()) {
        if (!fs::path(args.csv).parent_path().empty())
            fs::create_directories(fs::path(args.csv).parent_path());
        csv.open(args.csv);
        if (!csv) throw Error::data("cannot open '" + args.csv + "' for writing");
        csv << "sample_id,stage,metric,value\n";
    }

    for (const std::string& name : wanted) {
        json entry;
        if (set_metrics.count(name) || cluster_metrics.count(name)) {
            std::vector<double> mean(stages, 0.0);
            for (const auto& [id, record_a] : records_a) {
                const ReductionRecord& record_b = records_b.at(id);
                for (int s = 0; s < stages; ++s) {
                    double value = 0.0;
                    if (set_metrics.count(name)) {
                        const auto& m1 =
                            a_is_m1 ? record_a.stages[s].kept : record_b.stages[s].kept;
                        const auto& m2 =
                            a_is_m1 ? record_b.stages[s].kept : record_a.stages[s].kept;
                        value = name == "ioa" ? metrics::ioa(m1, m2) : metrics::iou(m1, m2);
                    } else {
                        const auto part_a = stage_partition(record_a.stages[s]);
                        const auto part_b = stage_partition(record_b.stages[s]);
                        const auto& c = a_is_m1 ? part_a : part_b;
                        const auto& k = a_is_m1 ? part_b : part_a;
                        value = name == "homogeneity" ? metrics::homogeneity(c, k)
                                                      : metrics::nmi(c, k);
                    }
                    mean[s] += value / double(records_a.size());
                    if (csv.is_open())
                        csv << id << ',' << (s + 1) << ',' << name << ',' << value << '\n';
                }
            }
            entry["mean_per_stage"] = mean;
            if (set_metrics.count(name)) {
                try {
                    entry["lower_bound"] = name == "ioa"
                                               ? metrics::ioa_lower_bound(tokens, r1, r2, stages)
                                               : metrics::iou_lower_bound(tokens, r1, r2, stages);
                } catch (const Error&) {
                    entry["lower_bound"] = nullptr;  // undefined for these rates
                }
            }
        } else if (depth_metrics.count(name)) {
            std::vector<ReductionRecord> list_a, list_b;
            for (const auto& [id, r] : records_a) list_a.push_back(r);
            for (const auto& [id, r] : records_b) list_b.push_back(r);
            const DepthMap map_a = metrics::averaged_depth_map(list_a);
            const DepthMap map_b = metrics::averaged_depth_map(list_b);
            entry["value"] =
                metrics::depth_map_similarity(map_a, map_b, metrics::map_metric_from_name(name));
            if (!args.emit_depthmaps.empty()) {
                io::write_json(args.emit_depthmaps + "_a.json", io::depth_map_to_json(map_a));
                io::write_json(args.emit_depthmaps + "_b.json", io::depth_map_to_json(map_b));
            }
            if (csv.is_open()) csv << "-1,0," << name << ',' << entry["value"].get<double>() << '\n';
        } else {
            throw Error::usage("unknown compare metric '" + name + "'");
        }
        report["metrics"][name] = std::move(entry);
    }

    report["keep_rates"] = {head_a.keep_rate, head_b.keep_rate};
    io::write_json(args.out, report);
    if (!args.out.empty()) {
        const fs::path out_dir = fs::path(args.out).parent_path();
        json extra;
        extra["inputs"] = {args.a, args.b};
        extra["outputs"] = {args.out};
        write_manifest(out_dir.empty() ? fs::path(".") : out_dir, "compare", argv, extra);
    }
    return 0;
}

// ---------------------------------------------------------------- align --

struct AlignArgs {
    std::string a;
    std::string b;
    std::string metric = "procrustes";
    std::string out;
    std::string id;
};

int cmd_align(const AlignArgs& args, const std::vector<std::string>& argv) {
    std::vector<std::string> points;
    for (int s = 1; fs::exists(fs::path(args.a) / ("probes_s" + std::to_string(s) + ".tokd")); ++s)
        points.push_back("probes_s" + std::to_string(s) + ".tokd");
    points.push_back("probes_final.tokd");

    json per_point = json::object();
    double mean = 0.0;
    double mean_reverse = 0.0;
    for (const std::string& point : points) {
        const Matrix a = io::read_matrix((fs::path(args.a) / point).string());
        const Matrix b = io::read_matrix((fs::path(args.b) / point).string());
        if (a.rows() != b.rows())
            throw Error::data("probe '" + point + "' sample counts differ between models");
        json value;
        if (args.metric == "procrustes") {
            value = align::procrustes_distance(a, b);
            mean += value.get<double>() / points.size();
        } else if (args.metric == "cka") {
            value = align::linear_cka(a, b);
            mean += value.get<double>() / points.size();
        } else if (args.metric == "pwcca") {
            const double ab = align::pwcca(a, b);
            const double ba = align::pwcca(b, a);
            value = json{{"ab", ab}, {"ba", ba}};
            mean += ab / points.size();
            mean_reverse += ba / points.size();
        } else {
            throw Error::usage("unknown align metric '" + args.metric + "'");
        }
        per_point[point] = std::move(value);
    }

    if (!fs::path(args.out).parent_path().empty())
        fs::create_directories(fs::path(args.out).parent_path());
    json report;
    report["schema"] = "tokred.align.v1";
    report["metric"] = args.metric;
    report["model_id"] = args.id.empty() ? fs::path(args.b).filename().string() : args.id;
    report["model_a"] = args.a;
    report["model_b"] = args.b;
    report["inputs"] = {args.a, args.b};
    report["parameters"] = {{"metric", args.metric}, {"probe_points", points}};
    report["per_point"] = std::move(per_point);
    report["value"] = mean;
    if (args.metric == "pwcca") report["value_reverse"] = mean_reverse;
    io::write_json(args.out, report);

    const fs::path out_dir = fs::path(args.out).parent_path();
    json extra;
    extra["inputs"] = {args.a, args.b};
    extra["outputs"] = {args.out};
    write_manifest(out_dir.empty() ? fs::path(".") : out_dir, "align", argv, extra);
    return 0;
}

// ---------------------------------------------------------------- proxy --

struct ProxyArgs {
    std::string scores;
    std::vector<std::string> reports;
    std::string out;
    std::string anchor;
};

int cmd_proxy(const ProxyArgs& args, const std::vector<std::string>& argv) {
    std::ifstream in(args.scores);
    if (!in) throw Error::data("cannot open scores file '" + args.scores + "'");
    std::map<std::string, double> scores;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        const std::string id = line.substr(0, comma);
        try {
            scores[id] = std::stod(line.substr(comma + 1));
        } catch (const std::exception&) {
            continue;  // header or malformed line
        }
    }
    if (scores.empty()) throw Error::data("no model scores found in '" + args.scores + "'");

    double anchor_score = 0.0;
    if (!args.anchor.empty()) {
        const auto it = scores.find(args.anchor);
        if (it == scores.end())
            throw Error::data("anchor model '" + args.anchor + "' has no score");
        anchor_score = it->second;
    }

    std::map<std::string, std::vector<std::pair<double, double>>> by_metric;
    json models = json::array();
    for (const std::string& path : args.reports) {
        const json report = io::read_json(path);
        const std::string model = report.at("model_id").get<std::string>();
        const std::string metric = report.value("metric", std::string("pattern"));
        const double value = report.at("value").get<double>();
        const auto it = scores.find(model);
        if (it == scores.end())
            throw Error::data("model '" + model + "' from '" + path + "' has no score");
        const double score = args.anchor.empty() ? it->second : anchor_score - it->second;
        by_metric[metric].push_back({score, value});
        models.push_back(model);
    }

    json rho = json::object();
    for (const auto& [metric, pairs] : by_metric) {
        if (pairs.size() < 3)
            throw Error::data("metric '" + metric + "' has fewer than three models");
        std::vector<double> x, y;
        for (const auto& [score, value] : pairs) {
            x.push_back(score);
            y.push_back(value);
        }
        rho[metric] = metrics::rank_correlation(x, y);
    }

    if (!fs::path(args.out).parent_path().empty())
        fs::create_directories(fs::path(args.out).parent_path());
    json report;
    report["schema"] = "tokred.proxy.v1";
    report["rho"] = std::move(rho);
    report["models"] = std::move(models);
    if (!args.anchor.empty()) report["anchor"] = args.anchor;
    io::write_json(args.out, report);

    const fs::path out_dir = fs::path(args.out).parent_path();
    json extra;
    extra["inputs"] = args.reports;
    extra["outputs"] = {args.out};
    write_manifest(out_dir.empty() ? fs::path(".") : out_dir, "proxy", argv, extra);
    return 0;
}

// ---------------------------------------------------------------- rerun --

int cmd_rerun(const std::string& manifest_path, const std::string& out_override) {
    const json manifest = io::read_json(manifest_path);
    if (manifest.value("schema", "") != "tokred.manifest.v1")
        throw Error::data("'" + manifest_path + "' is not a run manifest");
    std::vector<std::string> argv = manifest.at("argv").get<std::vector<std::string>>();
    if (!out_override.empty()) {
        bool replaced = false;
        for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
            if (argv[i] == "--out") {
                argv[i + 1] = out_override;
                replaced = true;
            }
        }
        if (!replaced) {
            argv.push_back("--out");
            argv.push_back(out_override);
        }
    }
    return run(argv);
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"token reduction analysis toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic token dumps");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--n", synth.samples, "number of samples");
    synth_cmd->add_option("--grid", synth.grid, "token grid, HxW");
    synth_cmd->add_option("--dim", synth.dim, "feature dimension");
    synth_cmd->add_option("--kind", synth.kind, "random | blobs | center");
    synth_cmd->add_option("--blobs", synth.blobs, "blob count for kind=blobs");
    synth_cmd->add_option("--seed", synth.seed, "base seed");

    ReduceArgs reduce;
    CLI::App* reduce_cmd = app.add_subcommand("reduce", "run the harness over token dumps");
    reduce_cmd->add_option("--method", reduce.method, "reduction method id")->required();
    reduce_cmd->add_option("--rate", reduce.rate, "keep rate r in (0, 1]")->required();
    reduce_cmd->add_option("--preset", reduce.preset, "tiny | small | base");
    reduce_cmd->add_option("--seed", reduce.seed, "backbone + sampling seed");
    reduce_cmd->add_option("--in", reduce.in, "directory of sample_*.tokd")->required();
    reduce_cmd->add_option("--out", reduce.out, "output directory")->required();
    reduce_cmd->add_option("--stages", reduce.stages, "comma list of stage blocks");
    reduce_cmd->add_option("--depth", reduce.depth, "transformer depth");
    reduce_cmd->add_option("--ats-mode", reduce.ats_mode, "fixed | uniform");
    reduce_cmd->add_flag("--tome-keys", reduce.tome_keys, "score ToMe similarity on keys");
    reduce_cmd->add_flag("--no-evit-fused", reduce.no_evit_fused,
                         "exclude fused tokens from later stages");

    CompareArgs compare;
    CLI::App* compare_cmd = app.add_subcommand("compare", "compare two record sets");
    compare_cmd->add_option("--a", compare.a, "first record directory")->required();
    compare_cmd->add_option("--b", compare.b, "second record directory")->required();
    compare_cmd->add_option("--metric", compare.metric,
                            "ioa|iou|homogeneity|nmi|pearson|spearman|jsd|emd|histogram|auto");
    compare_cmd->add_option("--out", compare.out, "report JSON path")->required();
    compare_cmd->add_option("--csv", compare.csv, "per-pair CSV path");
    compare_cmd->add_option("--pair-by", compare.pair_by, "pairing key (sample)");
    compare_cmd->add_option("--emit-depthmaps", compare.emit_depthmaps,
                            "path prefix for averaged depth maps");
    compare_cmd->add_option("--id-a", compare.id_a, "label for model A");
    compare_cmd->add_option("--id-b", compare.id_b, "label for model B");

    AlignArgs align_args;
    CLI::App* align_cmd = app.add_subcommand("align", "feature alignment between probe dumps");
    align_cmd->add_option("--a", align_args.a, "first reduce output directory")->required();
    align_cmd->add_option("--b", align_args.b, "second reduce output directory")->required();
    align_cmd->add_option("--metric", align_args.metric, "procrustes | cka | pwcca");
    align_cmd->add_option("--out", align_args.out, "report JSON path")->required();
    align_cmd->add_option("--id", align_args.id, "model id stored in the report");

    ProxyArgs proxy;
    CLI::App* proxy_cmd = app.add_subcommand("proxy", "correlate metric reports with scores");
    proxy_cmd->add_option("--scores", proxy.scores, "CSV of model_id,score")->required();
    proxy_cmd->add_option("--report", proxy.reports, "metric report JSON (repeatable)")
        ->required();
    proxy_cmd->add_option("--out", proxy.out, "report JSON path")->required();
    proxy_cmd->add_option("--anchor", proxy.anchor, "anchor model id for score differences");

    std::string rerun_manifest;
    std::string rerun_out;
    CLI::App* rerun_cmd = app.add_subcommand("rerun", "re-execute a recorded manifest");
    rerun_cmd->add_option("--manifest", rerun_manifest, "manifest JSON path")->required();
    rerun_cmd->add_option("--out", rerun_out, "override output location");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help() << std::endl;
            return 0;
        }
        std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << std::endl;
        return 2;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth, args);
        if (reduce_cmd->parsed()) return cmd_reduce(reduce, args);
        if (compare_cmd->parsed()) return cmd_compare(compare, args);
        if (align_cmd->parsed()) return cmd_align(align_args, args);
        if (proxy_cmd->parsed()) return cmd_proxy(proxy, args);
        if (rerun_cmd->parsed()) return cmd_rerun(rerun_manifest, rerun_out);
    } catch (const Error& e) {
        const bool usage = e.kind() == Error::Kind::usage;
        std::cerr << json{{"error", e.what()}, {"kind", usage ? "usage" : "data"}}.dump()
                  << std::endl;
        return usage ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"kind", "data"}}.dump() << std::endl;
        return 3;
    }
    return 2;
}

} // namespace tokred::cli
