// Command-line front end: corpus generation, vocabulary building,
// pre-training, probes, the FLOPs report, cache inspection and the ablation
// harness. Every subcommand exits 0 on success and nonzero with a one-line
// reason on stderr otherwise.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "saslm/augment.hpp"
#include "saslm/checkpoint.hpp"
#include "saslm/corpus.hpp"
#include "saslm/flops.hpp"
#include "saslm/markov.hpp"
#include "saslm/probe.hpp"
#include "saslm/runconfig.hpp"
#include "saslm/trainer.hpp"

namespace fs = std::filesystem;
using namespace saslm;

namespace {

int mlm_positions_for(const EncoderConfig& cfg) {
  return static_cast<int>(std::ceil(kMaskPercent * static_cast<double>(cfg.seq_len - 1)));
}

struct LoadedCorpus {
  Vocab vocab;
  SequenceStore store;
  std::vector<double> unigram;
};

LoadedCorpus load_corpus(const std::string& corpus_path, const std::string& vocab_path, int seq_len) {
  LoadedCorpus out;
  out.vocab = Vocab::load(vocab_path);
  auto lines = read_lines(corpus_path);
  out.vocab.recount(lines);
  out.store = SequenceStore(lines, out.vocab, seq_len);
  out.unigram = out.vocab.unigram();
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

// ---- gen-corpus -------------------------------------------------------------

struct GenCorpusArgs {
  std::string out;
  std::string oracle_out;
  std::string oracle_in;
  int num_seqs = 1000;
  int seq_len = 32;
  int vocab_size = 16;
  double peak = 0.8;
  int branch = 3;
  std::uint64_t seed = 1;
};

int cmd_gen_corpus(const GenCorpusArgs& a) {
  MarkovOracle oracle;
  if (!a.oracle_in.empty()) {
    oracle = MarkovOracle::load(a.oracle_in);
  } else {
    oracle = MarkovOracle::random(a.vocab_size, a.peak, a.branch, a.seed);
  }
  if (!a.oracle_out.empty()) oracle.save(a.oracle_out);
  auto lines = oracle.generate(a.num_seqs, a.seq_len, a.seed);
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text_file(a.out, text);
  std::cout << "wrote " << lines.size() << " sequences to " << a.out;
  if (!a.oracle_out.empty()) std::cout << " (oracle: " << a.oracle_out << ")";
  std::cout << "\n";
  return 0;
}

// ---- build-vocab ------------------------------------------------------------

int cmd_build_vocab(const std::string& input, int max_size, const std::string& out) {
  auto lines = read_lines(input);
  Vocab vocab = Vocab::build(lines, max_size);
  vocab.save(out);
  std::cout << "vocabulary of " << vocab.size() << " tokens written to " << out << "\n";
  return 0;
}

// ---- pretrain ---------------------------------------------------------------

int cmd_pretrain(const std::string& config_path, const std::string& strategy_override,
                 const std::string& resume_path) {
  RunConfig rc = parse_run_config(config_path);
  if (!strategy_override.empty()) rc.train.strategy = parse_strategy(strategy_override);
  rc.validate();

  LoadedCorpus corpus = load_corpus(rc.corpus_train, rc.corpus_vocab, rc.train.encoder.seq_len);
  rc.train.encoder.vocab_size = corpus.vocab.size();
  rc.train.validate();

  RunDirLock lock(rc.output_dir);
  write_text_file(rc.output_dir + "/config.resolved", serialize_run_config(rc));

  Trainer trainer(rc.train, corpus.store, corpus.unigram, rc.output_dir);
  if (!resume_path.empty()) trainer.restore(resume_path);
  TrainSummary summary = trainer.run();
  std::cout << "trained " << strategy_name(rc.train.strategy) << " for " << summary.steps
            << " steps; final checkpoint " << summary.final_checkpoint << "\n";
  return 0;
}

// ---- probe ------------------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint;
  std::string heldout;
  std::string vocab;
  std::string oracle;
  std::string probe_a, probe_b;
  std::string out;
  std::uint64_t seed = 1234;
  int max_kl_positions = 2000;
};

EvalReport run_probe(const ProbeArgs& a) {
  TrainCheckpoint ckpt = load_checkpoint(a.checkpoint);
  LoadedCorpus heldout = load_corpus(a.heldout, a.vocab, ckpt.encoder.seq_len);
  if (heldout.store.size() == 0) throw std::runtime_error("held-out corpus is empty");

  EvalReport report;
  IntrinsicResult ir = intrinsic_eval(ckpt.model, heldout.store, heldout.unigram, a.seed);
  report.mlm_ce = ir.mlm_ce;
  report.mlm_ppl = std::exp(ir.mlm_ce);
  report.rtd_accuracy = ir.rtd_accuracy;
  report.rtd_auc = ir.rtd_auc;
  if (!a.oracle.empty()) {
    MarkovOracle oracle = MarkovOracle::load(a.oracle);
    report.generator_mean_kl =
        generator_kl(ckpt.model, oracle, heldout.store, heldout.vocab, heldout.unigram, a.seed, a.max_kl_positions);
  }
  if (!a.probe_a.empty() || !a.probe_b.empty()) {
    if (a.probe_a.empty() || a.probe_b.empty())
      throw std::runtime_error("probe: --probe-a and --probe-b must be given together");
    auto lines_a = read_lines(a.probe_a);
    auto lines_b = read_lines(a.probe_b);
    SequenceStore sa(lines_a, heldout.vocab, ckpt.encoder.seq_len);
    SequenceStore sb(lines_b, heldout.vocab, ckpt.encoder.seq_len);
    report.probe_accuracy = linear_probe(ckpt.model, sa, sb, 0.8, a.seed);
  }
  return report;
}

int cmd_probe(const ProbeArgs& a) {
  EvalReport report = run_probe(a);
  std::string row = eval_report_csv_row(a.checkpoint, report);
  if (!a.out.empty()) {
    bool fresh = !fs::exists(a.out) || fs::file_size(a.out) == 0;
    std::ofstream out(a.out, std::ios::app);
    if (!out) throw std::runtime_error("cannot write report: " + a.out);
    if (fresh) out << eval_report_csv_header() << "\n";
    out << row << "\n";
  }
  std::cout << eval_report_csv_header() << "\n" << row << "\n";
  return 0;
}

// ---- flops ------------------------------------------------------------------

// Externally reported training totals for the published Small-shape runs;
// annotations only, never targets.
struct ReferenceRow {
  Strategy strategy;
  double reported_total;
};

int cmd_flops(const std::string& config_path, std::uint64_t steps, int batch_override, const std::string& csv_path) {
  EncoderConfig cfg;
  int batch = 64;
  if (!config_path.empty()) {
    RunConfig rc = parse_run_config(config_path);
    cfg = rc.train.encoder;
    batch = rc.train.batch_size;
    if (cfg.vocab_size == 0) {
      Vocab vocab = Vocab::load(rc.corpus_vocab);
      cfg.vocab_size = vocab.size();
    }
  } else {
    cfg.vocab_size = 20;
    cfg.seq_len = 32;
  }
  if (batch_override > 0) batch = batch_override;
  const int m = mlm_positions_for(cfg);

  std::string csv = "section,strategy,layers,hidden,heads,ffn,vocab,seq_len,batch,mlm_positions,steps,"
                    "forward_flops,backward_flops,step_flops,run_flops,reference_total\n";
  std::printf("per-step and per-run FLOPs (L=%d H=%d A=%d F=%d V=%d k=%d batch=%d m=%d steps=%llu)\n", cfg.layers,
              cfg.hidden, cfg.heads, cfg.ffn, cfg.vocab_size, cfg.seq_len, batch, m,
              static_cast<unsigned long long>(steps));
  std::printf("%-16s %14s %14s %14s %14s\n", "strategy", "forward", "backward", "step", "run");
  for (Strategy s : kAllStrategies) {
    FlopsBreakdown fb = step_flops(cfg, s, batch, m);
    std::uint64_t run = run_flops(cfg, s, batch, m, steps);
    std::printf("%-16s %14llu %14llu %14llu %14.6e\n", strategy_name(s),
                static_cast<unsigned long long>(fb.forward()), static_cast<unsigned long long>(fb.backward()),
                static_cast<unsigned long long>(fb.total()), static_cast<double>(run));
    char line[512];
    std::snprintf(line, sizeof(line), "config,%s,%d,%d,%d,%d,%d,%d,%d,%d,%llu,%llu,%llu,%llu,%llu,\n",
                  strategy_name(s), cfg.layers, cfg.hidden, cfg.heads, cfg.ffn, cfg.vocab_size, cfg.seq_len, batch, m,
                  static_cast<unsigned long long>(steps), static_cast<unsigned long long>(fb.forward()),
                  static_cast<unsigned long long>(fb.backward()), static_cast<unsigned long long>(fb.total()),
                  static_cast<unsigned long long>(run));
    csv += line;
  }

  // Published Small shapes, for ordering comparison only.
  EncoderConfig small;
  small.layers = 12;
  small.hidden = 256;
  small.heads = 4;
  small.ffn = 1024;
  small.vocab_size = 30522;
  small.seq_len = 128;
  const int small_batch = 512;
  const std::uint64_t small_steps = 250000;
  const int small_m = mlm_positions_for(small);
  const std::vector<ReferenceRow> refs = {
      {Strategy::MASK_MLM, 1.274e18},
      {Strategy::SAS_C, 1.279e18},
      {Strategy::SAS, 1.279e18},
      {Strategy::ELECTRA_2NET, 1.294e18},
  };
  std::printf("\nSmall-shape comparison (L=12 H=256 A=4 F=1024 V=30522 k=128 batch=512 steps=250000)\n");
  std::printf("%-16s %14s %18s\n", "strategy", "run", "reference_total");
  for (const auto& ref : refs) {
    std::uint64_t run = run_flops(small, ref.strategy, small_batch, small_m, small_steps);
    std::printf("%-16s %14.6e %18.3e\n", strategy_name(ref.strategy), static_cast<double>(run), ref.reported_total);
    char line[512];
    std::snprintf(line, sizeof(line), "small_shapes,%s,%d,%d,%d,%d,%d,%d,%d,%d,%llu,,,,%llu,%.3e\n",
                  strategy_name(ref.strategy), small.layers, small.hidden, small.heads, small.ffn, small.vocab_size,
                  small.seq_len, small_batch, small_m, static_cast<unsigned long long>(small_steps),
                  static_cast<unsigned long long>(run), ref.reported_total);
    csv += line;
  }

  if (!csv_path.empty()) write_text_file(csv_path, csv);
  return 0;
}

// ---- inspect-aug ------------------------------------------------------------

int cmd_inspect_aug(const std::string& run_dir, int epoch, std::int64_t instance, int limit) {
  if (epoch < 1)
    throw std::runtime_error("epoch " + std::to_string(epoch) +
                             " uses cold-start draws; the cache only covers epochs >= 1");
  RunConfig rc = parse_run_config(run_dir + "/config.resolved");
  std::string cache_path = run_dir + "/cache_epoch_" + std::to_string(epoch) + ".bin";
  ReplacementCache cache = ReplacementCache::load(cache_path, epoch - 1);
  const CacheEntry* entry = cache.peek(instance);
  if (!entry) throw std::runtime_error("no cache entry for instance " + std::to_string(instance));

  Vocab vocab = Vocab::load(rc.corpus_vocab);
  auto lines = read_lines(rc.corpus_train);
  if (instance < 0 || static_cast<std::size_t>(instance) >= lines.size())
    throw std::runtime_error("instance " + std::to_string(instance) + " outside corpus of " +
                             std::to_string(lines.size()) + " lines");
  TokenSequence seq = encode(lines[static_cast<std::size_t>(instance)], vocab, rc.train.encoder.seq_len, instance);

  std::printf("position\toriginal_id\toriginal\treplacement_id\treplacement\tlabel\n");
  int shown = 0;
  for (std::size_t j = 0; j < entry->positions.size(); ++j) {
    if (limit > 0 && shown >= limit) break;
    int pos = entry->positions[j];
    int rep = entry->token_ids[j];
    int orig = seq.ids.at(static_cast<std::size_t>(pos));
    std::printf("%d\t%d\t%s\t%d\t%s\t%d\n", pos, orig, vocab.token(orig).c_str(), rep, vocab.token(rep).c_str(),
                rep == orig ? 1 : 0);
    ++shown;
  }
  return 0;
}

// ---- ablation ---------------------------------------------------------------

int cmd_ablation(const std::string& config_path) {
  RunConfig rc = parse_run_config(config_path);
  rc.validate();
  if (rc.corpus_heldout.empty()) throw std::runtime_error("ablation: corpus.heldout is required");

  const std::vector<Strategy> ladder = {Strategy::MASK_MLM,     Strategy::UNIG_MLM, Strategy::UNIG_MLM_SAS,
                                        Strategy::UNIG_MLM_RTD, Strategy::SAS_C,    Strategy::SAS};

  LoadedCorpus corpus = load_corpus(rc.corpus_train, rc.corpus_vocab, rc.train.encoder.seq_len);
  rc.train.encoder.vocab_size = corpus.vocab.size();

  RunDirLock lock(rc.output_dir);
  write_text_file(rc.output_dir + "/config.resolved", serialize_run_config(rc));

  std::string csv = "strategy,steps,train_flops," + eval_report_csv_header() + "\n";
  std::uint64_t common_steps = 0;
  for (Strategy s : ladder) {
    TrainConfig tc = rc.train;
    tc.strategy = s;
    std::string dir = rc.output_dir + "/" + strategy_name(s);
    Trainer trainer(tc, corpus.store, corpus.unigram, dir);
    TrainSummary summary = trainer.run(nullptr);
    if (common_steps == 0) common_steps = summary.steps;
    if (summary.steps != common_steps) throw std::runtime_error("ablation: uneven step budgets across strategies");

    ProbeArgs pa;
    pa.checkpoint = summary.final_checkpoint;
    pa.heldout = rc.corpus_heldout;
    pa.vocab = rc.corpus_vocab;
    pa.oracle = rc.corpus_oracle;
    pa.probe_a = rc.corpus_probe_a;
    pa.probe_b = rc.corpus_probe_b;
    pa.seed = rc.train.seed + 9001;
    EvalReport report = run_probe(pa);
    char head[128];
    std::snprintf(head, sizeof(head), "%s,%llu,%llu,", strategy_name(s),
                  static_cast<unsigned long long>(summary.steps),
                  static_cast<unsigned long long>(trainer.cumulative_flops()));
    csv += head + eval_report_csv_row(summary.final_checkpoint, report) + "\n";
    std::cout << strategy_name(s) << ": done (" << summary.steps << " steps)\n";
  }
  write_text_file(rc.output_dir + "/ablation.csv", csv);
  std::cout << "ablation table written to " << rc.output_dir << "/ablation.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-network self-augmented pre-training workbench"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* sc_gen = app.add_subcommand("gen-corpus", "generate a synthetic Markov corpus");
  sc_gen->add_option("--out", gen.out, "output corpus file")->required();
  sc_gen->add_option("--num-seqs", gen.num_seqs, "number of sequences");
  sc_gen->add_option("--seq-len", gen.seq_len, "tokens per sequence");
  sc_gen->add_option("--vocab-size", gen.vocab_size, "oracle token count");
  sc_gen->add_option("--peak", gen.peak, "mass on the designated successor");
  sc_gen->add_option("--branch", gen.branch, "alternative successors per state");
  sc_gen->add_option("--seed", gen.seed, "generation seed");
  sc_gen->add_option("--oracle-out", gen.oracle_out, "write the oracle definition here");
  sc_gen->add_option("--oracle-in", gen.oracle_in, "sample from an existing oracle file");

  std::string bv_input, bv_out;
  int bv_max = 10000;
  auto* sc_bv = app.add_subcommand("build-vocab", "build a vocabulary from a corpus");
  sc_bv->add_option("--input", bv_input, "corpus file")->required();
  sc_bv->add_option("--max-size", bv_max, "maximum vocabulary size");
  sc_bv->add_option("--out", bv_out, "vocabulary file")->required();

  std::string pt_config, pt_strategy, pt_resume;
  auto* sc_pt = app.add_subcommand("pretrain", "run pre-training from a config file");
  sc_pt->add_option("--config", pt_config, "run configuration file")->required();
  sc_pt->add_option("--strategy", pt_strategy,
                    "strategy override (SAS, SAS_C, MASK_MLM, UNIG_MLM, UNIG_MLM_SAS, "
                    "UNIG_MLM_RTD_C, UNIG_MLM_RTD, ELECTRA_2NET)");
  sc_pt->add_option("--resume", pt_resume, "checkpoint to resume from");

  ProbeArgs pr;
  auto* sc_pr = app.add_subcommand("probe", "evaluate a checkpoint");
  sc_pr->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
  sc_pr->add_option("--heldout", pr.heldout, "held-out corpus")->required();
  sc_pr->add_option("--vocab", pr.vocab, "vocabulary file")->required();
  sc_pr->add_option("--oracle", pr.oracle, "oracle file for generator KL");
  sc_pr->add_option("--probe-a", pr.probe_a, "class-A corpus for the linear probe");
  sc_pr->add_option("--probe-b", pr.probe_b, "class-B corpus for the linear probe");
  sc_pr->add_option("--seed", pr.seed, "evaluation seed");
  sc_pr->add_option("--max-kl-positions", pr.max_kl_positions, "cap on KL evaluation positions");
  sc_pr->add_option("--out", pr.out, "append the report row to this CSV");

  std::string fl_config, fl_csv;
  std::uint64_t fl_steps = 10000;
  int fl_batch = 0;
  auto* sc_fl = app.add_subcommand("flops", "emit the per-strategy cost table");
  sc_fl->add_option("--config", fl_config, "take shapes from this run config");
  sc_fl->add_option("--steps", fl_steps, "steps for run totals");
  sc_fl->add_option("--batch", fl_batch, "batch size override");
  sc_fl->add_option("--csv", fl_csv, "also write the table as CSV");

  std::string ia_run_dir;
  int ia_epoch = 1;
  std::int64_t ia_instance = 0;
  int ia_limit = 0;
  auto* sc_ia = app.add_subcommand("inspect-aug", "dump cached replacements for one instance");
  sc_ia->add_option("--run-dir", ia_run_dir, "pretrain output directory")->required();
  sc_ia->add_option("--epoch", ia_epoch, "epoch whose replacements to show")->required();
  sc_ia->add_option("--instance", ia_instance, "instance id")->required();
  sc_ia->add_option("--limit", ia_limit, "maximum rows (0 = all)");

  std::string ab_config;
  auto* sc_ab = app.add_subcommand("ablation", "train the strategy ladder under one budget");
  sc_ab->add_option("--config", ab_config, "run configuration file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_gen->parsed()) return cmd_gen_corpus(gen);
    if (sc_bv->parsed()) return cmd_build_vocab(bv_input, bv_max, bv_out);
    if (sc_pt->parsed()) return cmd_pretrain(pt_config, pt_strategy, pt_resume);
    if (sc_pr->parsed()) return cmd_probe(pr);
    if (sc_fl->parsed()) return cmd_flops(fl_config, fl_steps, fl_batch, fl_csv);
    if (sc_ia->parsed()) return cmd_inspect_aug(ia_run_dir, ia_epoch, ia_instance, ia_limit);
    if (sc_ab->parsed()) return cmd_ablation(ab_config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
