// refundctl: runs the refund scenarios and inspects their ledgers and databases.
// Exit status is 0 iff every assertion of the invoked command holds.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "refund/refund.hpp"

using namespace refund;
using namespace refund::scenario;
using nlohmann::json;

namespace {

struct RunArgs {
  std::string name = "HonestRefund";
  std::uint64_t seed = 1;
  bool disable_defense = false;
  std::string config;
  std::string out = ".";

  Options options() const {
    Options o;
    o.seed = seed;
    o.defense = !disable_defense;
    o.params = Params::parse(config);
    std::filesystem::create_directories(out);
    o.workdir = out;
    o.keep_files = true;
    return o;
  }
};

void add_run_flags(CLI::App* cmd, RunArgs& a, bool positional) {
  if (positional) cmd->add_option("name", a.name, "scenario name (see `scenario list`)")->required();
  else cmd->add_option("--scenario", a.name, "scenario whose ledger to use")->capture_default_str();
  cmd->add_option("--seed", a.seed, "seed")->capture_default_str();
  cmd->add_flag("--disable-defense", a.disable_defense, "plain payment protocol refunds");
  cmd->add_option("--config", a.config, "k=v,... scenario parameters");
  cmd->add_option("--out", a.out, "directory for transcripts and database files")->capture_default_str();
}

std::string hex_point(const Point& p) { return to_hex(Group::secp256k1().encode(p).view()); }

json output_json(const tx::TxOutput& o) {
  json j{{"value", o.value}};
  if (auto* p = std::get_if<tx::PayToPubkeyHash>(&o.script)) {
    j["type"] = "p2pkh";
    j["pubkey_hash"] = to_hex(p->pubkey_hash.view());
  } else if (auto* s = std::get_if<tx::ScriptHash>(&o.script)) {
    j["type"] = "p2sh";
    j["script_hash"] = to_hex(s->script_hash.view());
  } else {
    j["type"] = "data";
    j["payload"] = to_hex(std::get<tx::DataCarrier>(o.script).payload);
  }
  return j;
}

json ledger_json(const SimLedger& l) {
  json txs = json::array();
  for (const auto& c : l.chain()) {
    json ins = json::array();
    for (const auto& in : c.tx.inputs) {
      json w = json::array();
      for (const auto& item : in.witness)
        w.push_back({{"pubkey", hex_point(item.pubkey)}, {"signature", to_hex(item.signature.view())}});
      json i{{"prev_txid", to_hex(in.prev.txid.view())}, {"prev_index", in.prev.index}, {"witness", w}};
      if (in.revealed_script) {
        json keys = json::array();
        for (const auto& k : in.revealed_script->keys) keys.push_back(hex_point(k));
        i["script"] = keys;
      }
      ins.push_back(i);
    }
    json outs = json::array();
    for (const auto& o : c.tx.outputs) outs.push_back(output_json(o));
    txs.push_back({{"txid", to_hex(c.id.view())},
                   {"height", c.height},
                   {"position", c.position},
                   {"minted", c.seed},
                   {"lock_height", c.tx.lock_height},
                   {"inputs", ins},
                   {"outputs", outs}});
  }
  auto a = l.audit();
  return {{"height", l.height()},
          {"transactions", txs},
          {"audit",
           {{"ok", a.ok()},
            {"no_double_spends", a.no_double_spends},
            {"locks_respected", a.locks_respected},
            {"value_conserved", a.value_conserved},
            {"problems", a.problems}}}};
}

void print_records(const std::vector<RefundRecord>& rows) {
  std::cout << "main_txid tc1_txid tc2_txid redeem_txid\n";
  for (const auto& r : rows) {
    auto cell = [](const TxId& id) { return id.is_zero() ? std::string("-") : to_hex(id.view()); };
    std::cout << cell(r.main_txid) << " " << cell(r.tc1_txid) << " " << cell(r.tc2_txid) << " " << cell(r.redeem_txid)
              << "\n";
  }
  std::cout << rows.size() << " records, " << rows.size() * RefundRecord::kSize << " bytes\n";
}

bool is_mixing(Kind k) { return k == Kind::Mixer || k == Kind::Aggregate; }

int cmd_scenario_run(const RunArgs& a) {
  auto kind = parse_kind(a.name);
  auto v = run_scenario(kind, a.options());
  auto path = std::filesystem::path(a.out) /
              (v.scenario + "-" + std::to_string(a.seed) + (a.disable_defense ? "-vanilla" : "") + ".log");
  std::ofstream(path) << v.transcript;
  std::cout << v.summary() << "transcript: " << path.string() << "\n";
  return v.passed() ? 0 : 1;
}

int cmd_ledger_dump(const RunArgs& a, const std::string& file) {
  auto v = run_scenario(parse_kind(a.name), a.options());
  auto j = ledger_json(*v.ledger);
  j["scenario"] = v.scenario;
  j["seed"] = a.seed;
  j["scenario_passed"] = v.passed();
  if (file.empty()) std::cout << j.dump(2) << "\n";
  else std::ofstream(file) << j.dump(2) << "\n";
  return v.passed() && j["audit"]["ok"].get<bool>() ? 0 : 1;
}

int cmd_db_dump(const RunArgs& a, const std::string& file) {
  if (!file.empty()) {
    print_records(RefundDatabase::load(file));
    return 0;
  }
  auto kind = parse_kind(a.name);
  if (is_mixing(kind)) throw Error(Errc::ConfigError, "mixing scenarios keep no refund database");
  auto v = run_scenario(kind, a.options());
  print_records(v.records);
  return v.passed() ? 0 : 1;
}

int cmd_db_recover(const RunArgs& a) {
  auto kind = parse_kind(a.name);
  if (is_mixing(kind)) throw Error(Errc::ConfigError, "mixing scenarios keep no refund database");
  auto opt = a.options();
  auto v = run_scenario(kind, opt);
  DeterministicWallet wallet(to_bytes("wallet:shop-" + std::to_string(a.seed)),
                             static_cast<unsigned>(opt.params.get("wallet_bits", 8, 4, 16)));
  auto res = recovery::recover_database(wallet, *v.ledger);
  print_records(res.records);
  std::cout << "payments=" << res.stats.payments << " refund_txs=" << res.stats.refund_txs
            << " key_generations=" << res.stats.key_generations << " searches=" << res.stats.searches
            << " pending=" << res.pending.size() << " unmatched=" << res.unmatched.size() << "\n";
  const bool match = res.records == recovery::sorted(v.records);
  std::cout << (match ? "recovered records match the merchant's database\n"
                      : "recovered records DIFFER from the merchant's database\n");
  return match && v.passed() ? 0 : 1;
}

int cmd_storage(std::uint32_t n, std::uint64_t ls, std::uint64_t lpay) {
  recovery::StorageModel m{n, ls, lpay};
  std::cout << recovery::storage_table(m);
  const bool ok = recovery::mccorry_storage(m) > RefundRecord::kSize;
  std::cout << "txid record saves " << recovery::mccorry_storage(m) - RefundRecord::kSize << " bytes per refund\n";
  return ok ? 0 : 1;
}

int cmd_mixer(std::uint32_t customers, std::uint32_t k, std::uint64_t seed, std::size_t trials, bool unmixed) {
  Options o;
  o.seed = seed;
  o.defense = !unmixed;
  o.params.set("customers", std::to_string(customers));
  o.params.set("k", std::to_string(k));
  o.params.set("trials", std::to_string(trials));
  auto v = run_scenario(Kind::Mixer, o);
  std::cout << v.summary();
  return v.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refund protocol scenarios"};
  app.require_subcommand(1);
  int rc = 0;

  auto* scenario = app.add_subcommand("scenario", "run or list scenarios");
  scenario->require_subcommand(1);
  RunArgs run_args;
  auto* run = scenario->add_subcommand("run", "run one scenario and print its verdict");
  add_run_flags(run, run_args, true);
  run->callback([&] { rc = cmd_scenario_run(run_args); });
  scenario->add_subcommand("list", "list scenario names")->callback([] {
    for (auto k : kAllKinds) std::cout << to_string(k) << "  " << describe(k) << "\n";
  });

  auto* ledger_cmd = app.add_subcommand("ledger", "ledger inspection");
  ledger_cmd->require_subcommand(1);
  RunArgs ledger_args;
  std::string ledger_file;
  auto* dump = ledger_cmd->add_subcommand("dump", "run a scenario and dump its ledger as JSON");
  add_run_flags(dump, ledger_args, false);
  dump->add_option("--file", ledger_file, "write JSON here instead of stdout");
  dump->callback([&] { rc = cmd_ledger_dump(ledger_args, ledger_file); });

  auto* db = app.add_subcommand("db", "merchant refund database");
  db->require_subcommand(1);
  RunArgs db_args;
  db_args.name = "Recovery";
  std::string db_file;
  auto* db_dump = db->add_subcommand("dump", "print the records of a scenario (or of a database file)");
  add_run_flags(db_dump, db_args, false);
  db_dump->add_option("--file", db_file, "database file of 128-byte rows");
  db_dump->callback([&] { rc = cmd_db_dump(db_args, db_file); });
  auto* db_recover = db->add_subcommand("recover", "rebuild the records from wallet seed and chain");
  add_run_flags(db_recover, db_args, false);
  db_recover->callback([&] { rc = cmd_db_recover(db_args); });

  auto* storage = app.add_subcommand("storage", "storage comparison");
  storage->require_subcommand(1);
  std::uint32_t n = 1;
  std::uint64_t ls = 72, lpay = 0;
  auto* compare = storage->add_subcommand("compare", "bytes per refund: endorsement scheme vs txid record");
  compare->add_option("--n", n, "refundees")->check(CLI::Range(1u, 1'000'000u))->capture_default_str();
  compare->add_option("--ls", ls, "signature length in bytes")->capture_default_str();
  compare->add_option("--lpay", lpay, "payment message length in bytes")->capture_default_str();
  compare->callback([&] { rc = cmd_storage(n, ls, lpay); });

  auto* mixer_cmd = app.add_subcommand("mixer", "mixing service");
  mixer_cmd->require_subcommand(1);
  std::uint32_t customers = 2, chunks = 4;
  std::uint64_t mix_seed = 1;
  std::size_t trials = 200;
  bool unmixed = false;
  auto* mix_run = mixer_cmd->add_subcommand("run", "run the mixing study and print the analyzer report");
  mix_run->add_option("--customers", customers, "customers per batch")->check(CLI::Range(2u, 8u))->capture_default_str();
  mix_run->add_option("--k", chunks, "chunks per refund")->check(CLI::Range(1u, 16u))->capture_default_str();
  mix_run->add_option("--seed", mix_seed, "seed")->capture_default_str();
  mix_run->add_option("--trials", trials, "seeded trials")->capture_default_str();
  mix_run->add_flag("--unmixed", unmixed, "emit each customer's chunks alone");
  mix_run->callback([&] { rc = cmd_mixer(customers, chunks, mix_seed, trials, unmixed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
